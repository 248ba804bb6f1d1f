"""Finite-strain ground truth: nearly-incompressible Neo-Hookean FEM.

Total-Lagrangian displacement formulation with the penalty energy

    W(F) = mu/2 (I1 - 2) - mu ln J + kappa/2 (ln J)^2,   kappa/mu = 1000,

which recovers S = mu F - p F^{-T} with p = mu - kappa ln J in the
incompressible limit.  The volumetric terms are integrated at the element
centroid (selective reduced integration) to avoid locking; loads are dead
tractions on the reference boundary, ramped in steps with a Newton solve
per step.  Hyperelastic cases in the catalog are voids only, so phase-1
elements are simply removed.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import ConfigError, SolverError
from .fem import (FemSolution, _Transform, _edge_loads, _node_at,
                  _side_nodes, _GAUSS, _SIDES)

_KAPPA_RATIO = 1000.0
_MAX_NEWTON = 25


def _grads(mesh):
    """Shape-function gradients at the 2x2 points and the centroid.

    Uniform rectangles: gradients are the same for every element, so they
    are computed once as (gp, 4, 2) and (1, 4, 2) stacks.
    """
    def at(xi, eta):
        dxi = 0.25 * np.array([-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)])
        deta = 0.25 * np.array([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)])
        return np.column_stack([dxi * (2.0 / mesh.hx), deta * (2.0 / mesh.hy)])
    full = np.stack([at(xi, eta)
                     for xi in (-_GAUSS, _GAUSS) for eta in (-_GAUSS, _GAUSS)])
    return full, at(0.0, 0.0)[None]


def _def_grad(ue, G):
    """F = I + sum_a u_a (outer) grad N_a for one gauss stack.

    ue: (M, 4, 2) element displacements; G: (gp, 4, 2).
    Returns F as (M, gp, 2, 2).
    """
    F = np.einsum("mai,gaj->mgij", ue, G)
    F[..., 0, 0] += 1.0
    F[..., 1, 1] += 1.0
    return F


def _inv_T_det(F):
    det = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    invT = np.empty_like(F)
    invT[..., 0, 0] = F[..., 1, 1]
    invT[..., 1, 1] = F[..., 0, 0]
    invT[..., 0, 1] = -F[..., 1, 0]
    invT[..., 1, 0] = -F[..., 0, 1]
    return invT / det[..., None, None], det


def _accumulate(conn, n_dofs, Kblocks, R):
    M = conn.shape[0]
    dofs = np.empty((M, 8), dtype=np.int64)
    dofs[:, 0::2] = 2 * conn
    dofs[:, 1::2] = 2 * conn + 1
    rows = np.repeat(dofs, 8, axis=1).ravel()
    cols = np.tile(dofs, (1, 8)).ravel()
    K = sp.coo_matrix((Kblocks.reshape(M, 64).ravel(), (rows, cols)),
                      shape=(n_dofs, n_dofs)).tocsr()
    f = np.zeros(n_dofs)
    np.add.at(f, dofs.ravel(), R.reshape(M, 8).ravel())
    return K, f


def _internal(ue, G, w, mu, kappa, vol):
    """Internal force (M,4,2) and tangent blocks (M,8,8) for one gauss stack.

    `vol` selects the volumetric (penalty) part; the deviatoric part is
    integrated with `vol=False`.  `w` is the integration weight (detJ * wg).
    """
    F = _def_grad(ue, G)
    FinvT, J = _inv_T_det(F)
    if np.any(J <= 0.0):
        raise FloatingPointError("element inversion")
    lnJ = np.log(J)
    if vol:
        P = kappa * lnJ[..., None, None] * FinvT
        c2 = -kappa * lnJ                    # coefficient of h_b (outer) h_a
        c3 = np.full(J.shape, kappa)         # coefficient of h_a (outer) h_b
    else:
        P = mu * (F - FinvT)
        c2 = np.full(J.shape, mu)
        c3 = np.zeros(J.shape)
    R = np.einsum("mgij,gaj->mai", P, G) * w
    # h_a = F^{-T} grad N_a per gauss point: (M, gp, 4, 2)
    h = np.einsum("mgij,gaj->mgai", FinvT, G)
    GG = np.einsum("gaj,gbj->ab", G, G)  # sum_g grad N_a . grad N_b
    K = np.zeros((ue.shape[0], 4, 2, 4, 2))
    if not vol:
        # mu delta_ik (Ga.Gb) term
        diag = mu * GG * w
        K[:, :, 0, :, 0] += diag
        K[:, :, 1, :, 1] += diag
    K += np.einsum("mg,mgbi,mgak->maibk", c2, h, h) * w
    if vol:
        K += np.einsum("mg,mgai,mgbk->maibk", c3, h, h) * w
    return R, K.reshape(ue.shape[0], 8, 8), float(J.min())


def neo_hookean_solve(mesh, model, bcs, n_steps=10, tol=1e-10):
    """Newton-iterated finite-strain solve; raises SolverError on failure."""
    if model.family != "neo-hookean":
        raise ConfigError("neo_hookean_solve expects a neo-hookean model")
    if model.inclusion != "void":
        raise ConfigError("hyperelastic ground truth supports void inclusions only")
    mu = model.mu
    kappa = _KAPPA_RATIO * mu

    active = mesh.phase == 0
    conn = mesh.elems[active]
    n_dofs = 2 * mesh.n_nodes

    touched = np.zeros(mesh.n_nodes, dtype=bool)
    touched[conn.ravel()] = True

    tr = _Transform(n_dofs)
    orphan = np.nonzero(~touched)[0]
    if orphan.size:
        tr.fix(np.concatenate([2 * orphan, 2 * orphan + 1]))
    if bcs.get("pin_gauge"):
        x0, x1, y0, _ = mesh.bounds
        bl = _node_at(mesh, x0, y0)
        br = _node_at(mesh, x1, y0)
        tr.fix([2 * bl, 2 * bl + 1, 2 * br + 1])
    T, _ = tr.build(mesh.nodes)

    f_ext = np.zeros(n_dofs)
    for side, t in bcs.get("tractions", {}).items():
        _edge_loads(mesh, side, t, f_ext)
    fr_full = T.T @ f_ext

    Gfull, Gcent = _grads(mesh)
    detJ = 0.25 * mesh.hx * mesh.hy
    w_full = detJ            # four points, weight 1 each
    w_cent = 4.0 * detJ      # centroid rule carries the whole element area

    u = np.zeros(n_dofs)
    load_scale = max(np.linalg.norm(fr_full), 1e-300)
    min_J = 1.0
    for step in range(1, n_steps + 1):
        t_fac = step / n_steps
        target = t_fac * fr_full
        for it in range(_MAX_NEWTON + 1):
            ue = u.reshape(-1, 2)[conn]
            try:
                Rd, Kd, j1 = _internal(ue, Gfull, w_full, mu, kappa, vol=False)
                Rv, Kv, j2 = _internal(ue, Gcent, w_cent, mu, kappa, vol=True)
            except FloatingPointError:
                raise SolverError(f"element inversion at load step {step}")
            min_J = min(j1, j2)
            K, f_int = _accumulate(conn, n_dofs, Kd + Kv, Rd + Rv)
            r = T.T @ f_int - target
            rn = np.linalg.norm(r) / (t_fac * load_scale)
            if rn <= tol:
                break
            if it == _MAX_NEWTON:
                raise SolverError(
                    f"Newton stalled at load step {step} (residual {rn:.3e})")
            Kr = (T.T @ (K @ T)).tocsc()
            dq = spla.spsolve(Kr, -r)
            if not np.all(np.isfinite(dq)):
                raise SolverError(f"singular tangent at load step {step}")
            # backtrack if a trial step inverts an element
            alpha = 1.0
            base = u.copy()
            for _ in range(8):
                u = base + alpha * (T @ dq)
                Ft = _def_grad(u.reshape(-1, 2)[conn], Gcent)
                _, Jt = _inv_T_det(Ft)
                if Jt.min() > 0.0:
                    break
                alpha *= 0.5
            else:
                raise SolverError(f"cannot avoid element inversion at step {step}")

    u = u.reshape(-1, 2)
    if bcs.get("regauge"):
        # translation centering only: at finite strain a linearized rotation
        # is not strain-free, so the rotation gauge stays with the pins
        bset = np.unique(np.concatenate([_side_nodes(mesh, s) for s in _SIDES]))
        u = u - u[bset].mean(axis=0)
        u[~touched] = 0.0

    F = _def_grad(u[conn], Gcent)[:, 0]
    FinvT, J = _inv_T_det(F)
    P = mu * F + (kappa * np.log(J)[..., None, None] - mu) * FinvT
    stress = np.zeros((mesh.elems.shape[0], 4))
    stress[active] = P.reshape(-1, 4)

    meta = {"min_J": float(J.min()), "load": f_ext, "hyper": True,
            "residual": rn}
    return FemSolution(mesh, u, stress, active, touched,
                       bcs.get("family"), meta)
