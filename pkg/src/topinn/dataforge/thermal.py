"""Nonlinear heat conduction ground truth on the unit square.

Law: q = -k (1 + T/T0) grad T, so conductivity grows linearly with
temperature.  Unit temperature on the left edge, zero on the right,
insulated top and bottom.  Inclusions are perfectly insulating (elements
removed) or perfectly conducting (all inclusion nodes merged into a single
temperature unknown, the exact infinite-conductivity limit).

The nonlinearity is mild (conductivity ratio 2 across the domain), so a
damped Picard iteration on the element conductivities converges fast.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import ConfigError, SolverError
from .fem import FemMesh, _side_nodes, _GAUSS

_MAX_ITERS = 500


def _conduction_element(hx, hy):
    """4x4 unit-conductivity stiffness of one rectangular bilinear element."""
    K = np.zeros((4, 4))
    detJ = 0.25 * hx * hy
    for xi in (-_GAUSS, _GAUSS):
        for eta in (-_GAUSS, _GAUSS):
            dxi = 0.25 * np.array([-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)])
            deta = 0.25 * np.array([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)])
            gx = dxi * (2.0 / hx)
            gy = deta * (2.0 / hy)
            K += (np.outer(gx, gx) + np.outer(gy, gy)) * detJ
    return K


class ThermalSolution:
    def __init__(self, mesh, T, node_active, model, meta):
        self.mesh = mesh
        self.T = T
        self.node_active = node_active
        self.model = model
        self.meta = meta

    def temperature_at(self, points):
        """Bilinear interpolation of T; points must lie in the domain."""
        mesh = self.mesh
        x0, x1, y0, y1 = mesh.bounds
        pts = np.atleast_2d(points)
        fx = (pts[:, 0] - x0) / mesh.hx
        fy = (pts[:, 1] - y0) / mesh.hy
        i = np.clip(fx.astype(np.int64), 0, mesh.nx - 1)
        j = np.clip(fy.astype(np.int64), 0, mesh.ny - 1)
        a = fx - i
        b = fy - j
        n00 = j * (mesh.nx + 1) + i
        T = self.T
        return ((1 - a) * (1 - b) * T[n00] + a * (1 - b) * T[n00 + 1]
                + a * b * T[n00 + mesh.nx + 2] + (1 - a) * b * T[n00 + mesh.nx + 1])

    def flux_at(self, points):
        """q = -k (1 + T/T0) grad T, evaluated element-wise at the points."""
        mesh = self.mesh
        model = self.model
        x0, x1, y0, y1 = mesh.bounds
        pts = np.atleast_2d(points)
        fx = (pts[:, 0] - x0) / mesh.hx
        fy = (pts[:, 1] - y0) / mesh.hy
        i = np.clip(fx.astype(np.int64), 0, mesh.nx - 1)
        j = np.clip(fy.astype(np.int64), 0, mesh.ny - 1)
        xi = 2.0 * (fx - i) - 1.0
        eta = 2.0 * (fy - j) - 1.0
        n00 = j * (mesh.nx + 1) + i
        conn = np.column_stack([n00, n00 + 1, n00 + mesh.nx + 2, n00 + mesh.nx + 1])
        Te = self.T[conn]
        N = 0.25 * np.column_stack([
            (1 - xi) * (1 - eta), (1 + xi) * (1 - eta),
            (1 + xi) * (1 + eta), (1 - xi) * (1 + eta)])
        dxi = 0.25 * np.column_stack([-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)])
        deta = 0.25 * np.column_stack([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)])
        Tg = (N * Te).sum(axis=1)
        dTdx = (dxi * Te).sum(axis=1) * (2.0 / mesh.hx)
        dTdy = (deta * Te).sum(axis=1) * (2.0 / mesh.hy)
        c = -model.k * (1.0 + Tg / model.T0)
        return np.column_stack([c * dTdx, c * dTdy])


def thermal_solve(mesh, model, damping=0.7, tol=1e-10):
    """Solve the nonlinear conduction problem on `mesh`.

    `model` is a thermal MaterialModel; phase-1 elements follow its
    inclusion kind.  Returns a ThermalSolution.
    """
    if model.family != "thermal":
        raise ConfigError("thermal_solve expects a thermal model")
    if not isinstance(mesh, FemMesh):
        raise ConfigError("thermal_solve expects a FemMesh")

    incl_mask = mesh.phase == 1
    insulating = model.inclusion == "insulating"
    active = ~incl_mask if insulating else np.ones(mesh.elems.shape[0], dtype=bool)

    n = mesh.n_nodes
    conn = mesh.elems[active]
    K1 = _conduction_element(mesh.hx, mesh.hy)

    touched = np.zeros(n, dtype=bool)
    touched[conn.ravel()] = True

    left = _side_nodes(mesh, "left")
    right = _side_nodes(mesh, "right")
    lift = np.zeros(n)
    lift[left] = 1.0
    fixed = np.zeros(n, dtype=bool)
    fixed[left] = True
    fixed[right] = True
    fixed[~touched] = True

    # conducting inclusion: one shared unknown for every inclusion node
    merge_to = np.arange(n)
    if model.inclusion == "conducting" and incl_mask.any():
        incl_nodes = np.unique(mesh.elems[incl_mask].ravel())
        dirichlet = np.zeros(n, dtype=bool)
        dirichlet[left] = True
        dirichlet[right] = True
        if dirichlet[incl_nodes].any():
            # an isothermal patch pinned to a controlled wall would need its
            # own temperature constraint; not a supported configuration
            raise ConfigError(
                "conducting inclusion touches a temperature-controlled side")
        free_incl = incl_nodes[~fixed[incl_nodes]]
        if free_incl.size:
            merge_to[free_incl] = free_incl[0]

    red = np.full(n, -1, dtype=np.int64)
    nq = 0
    for d in range(n):
        if fixed[d] or merge_to[d] != d:
            continue
        red[d] = nq
        nq += 1
    rows, cols, vals = [], [], []
    for d in range(n):
        if fixed[d]:
            continue
        m = merge_to[d]
        if fixed[m]:
            raise ConfigError("conducting inclusion touches a Dirichlet side")
        rows.append(d)
        cols.append(red[m])
        vals.append(1.0)
    T_map = sp.coo_matrix((vals, (rows, cols)), shape=(n, nq)).tocsr()

    # Picard loop; the convergence test is the residual of the nonlinear
    # system (stiffness assembled at the current iterate)
    qn = np.zeros(nq)
    Tn = lift.copy()
    rowsK = np.repeat(conn, 4, axis=1).ravel()
    colsK = np.tile(conn, (1, 4)).ravel()
    res = np.inf
    for it in range(_MAX_ITERS):
        Tc = Tn[conn].mean(axis=1)
        fac = model.k * (1.0 + Tc / model.T0)
        data = (fac[:, None, None] * K1).ravel()
        K = sp.coo_matrix((data, (rowsK, colsK)), shape=(n, n)).tocsr()
        Kr = (T_map.T @ (K @ T_map)).tocsc()
        fr = -T_map.T @ (K @ lift)
        res = np.linalg.norm(Kr @ qn - fr) / max(np.linalg.norm(fr), 1e-300)
        if it > 0 and res <= tol:
            break
        q = spla.spsolve(Kr, fr)
        if not np.all(np.isfinite(q)):
            raise SolverError("singular thermal system")
        qn = qn + damping * (q - qn)
        Tn = T_map @ qn + lift
    else:
        raise SolverError(f"Picard iteration did not converge in {_MAX_ITERS} steps "
                          f"(last residual {res:.3e})")

    meta = {"iterations": it + 1, "residual": res}
    return ThermalSolution(mesh, Tn, touched, model, meta)


def extract_thermal_measurements(solution, per_side=100, missing_side=None,
                                 noise=0.0, seed=0):
    """Boundary measurements: flux on the Dirichlet sides, T on the insulated ones.

    Components are named like the PINN fields (T, q1, q2); unobserved entries
    are NaN.  `missing_side` drops one side entirely.
    """
    from ..measurements import MeasurementSet

    sides = ["left", "right", "bottom", "top"]
    if missing_side is not None:
        if missing_side not in sides:
            raise ConfigError(f"unknown side '{missing_side}'")
        sides.remove(missing_side)
    mesh = solution.mesh
    x0, x1, y0, y1 = mesh.bounds
    fr = (np.arange(per_side) + 0.5) / per_side
    pts = []
    vals = {"T": [], "q1": [], "q2": []}
    eps = 1e-9  # sample flux just inside the wall element
    for side in sides:
        if side == "left":
            xy = np.column_stack([np.full(per_side, x0), y0 + fr * (y1 - y0)])
        elif side == "right":
            xy = np.column_stack([np.full(per_side, x1), y0 + fr * (y1 - y0)])
        elif side == "bottom":
            xy = np.column_stack([x0 + fr * (x1 - x0), np.full(per_side, y0)])
        else:
            xy = np.column_stack([x0 + fr * (x1 - x0), np.full(per_side, y1)])
        pts.append(xy)
        nanv = np.full(per_side, np.nan)
        if side in ("left", "right"):
            q = solution.flux_at(np.column_stack([
                np.clip(xy[:, 0], x0 + eps, x1 - eps), xy[:, 1]]))
            vals["q1"].append(q[:, 0])
            vals["q2"].append(nanv)
            vals["T"].append(nanv)
        else:
            vals["T"].append(solution.temperature_at(xy))
            vals["q1"].append(nanv)
            vals["q2"].append(nanv)
    pts = np.vstack(pts)
    out = {k: np.concatenate(v) for k, v in vals.items()}
    if noise > 0.0:
        rng = np.random.default_rng(seed)
        for k in out:
            m = ~np.isnan(out[k])
            out[k][m] += rng.normal(0.0, noise, int(m.sum()))
    return MeasurementSet(pts, out)
