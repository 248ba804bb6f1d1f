"""Benchmark case catalog, case files, and data generation.

A case bundles the family (matrix / matrix-hyper / mit / layer / thermal),
the material model, the hidden geometry, and the load level.  `generate_case`
runs the appropriate forward solver and writes the four artifacts a run
needs: case.txt (versioned text), measurements.csv, truth.csv and truth.pgm
(ground-truth density raster).
"""

import os

import numpy as np

from ..errors import ConfigError, SolverError
from ..physics import MaterialModel
from .shapes import ShapeSpec
from . import fem
from .thermal import thermal_solve, extract_thermal_measurements
from .hyper import neo_hookean_solve

_CASE_MAGIC = "# case v1"

# domain per family; matrix-hyper shares the matrix square
FAMILY_BOUNDS = {
    "matrix": (-0.5, 0.5, -0.5, 0.5),
    "matrix-hyper": (-0.5, 0.5, -0.5, 0.5),
    "mit": (-1.0, 1.0, -0.5, 0.5),
    "layer": (0.0, 1.0, -0.5, 0.0),
    "thermal": (0.0, 1.0, 0.0, 1.0),
}

_LINEAR_PO = 0.01          # P_o/E for linear cases
_HYPER_PO_RATIO = 0.173    # P_o/E for hyperelastic cases, E = 3 mu


def _c(primitive, **kw):
    return ShapeSpec(primitive, **kw)


def _two_circles():
    return [_c("circle", cx=-0.22, cy=-0.18, r=0.12),
            _c("circle", cx=0.2, cy=0.22, r=0.15)]


def _star_rect():
    return [_c("star", cx=-0.18, cy=0.18, r0=0.14, amp=0.05, lobes=3, phase=0.3),
            _c("rectangle", cx=0.2, cy=-0.2, hx=0.13, hy=0.08, angle=0.35)]


def _slit():
    return [_c("slit", cx=0.0, cy=0.0, hx=0.1, hy=0.02)]


def _u_shape():
    return [_c("U", cx=0.0, cy=0.0, size=0.5)]


def _t_shape():
    return [_c("T", cx=0.0, cy=0.0, size=0.5)]


def _four_circles():
    return [_c("circle", cx=-0.25, cy=-0.25, r=0.1),
            _c("circle", cx=0.25, cy=-0.25, r=0.09),
            _c("circle", cx=-0.25, cy=0.25, r=0.11),
            _c("circle", cx=0.25, cy=0.25, r=0.1)]


def _mit_letters():
    return [_c("letter-M", cx=-0.62, cy=0.0, size=0.42),
            _c("letter-I", cx=0.0, cy=0.0, size=0.42),
            _c("letter-T", cx=0.62, cy=0.0, size=0.42)]


def _thermal_slit():
    return [_c("slit", cx=0.5, cy=0.5, hx=0.15, hy=0.03, angle=0.6)]


def _matrix_case(shapes, inclusion="void", E_i=None, nu_i=None, hyper=False):
    if hyper:
        mu = 0.38
        return {
            "family": "matrix-hyper",
            "model": {"family": "neo-hookean", "mu": mu, "inclusion": "void"},
            "shapes": shapes,
            "P_o": _HYPER_PO_RATIO * 3.0 * mu,
        }
    model = {"family": "linear-elastic", "E": 1.0, "nu": 0.3,
             "inclusion": inclusion}
    if inclusion == "moduli":
        model["E_i"] = E_i
        model["nu_i"] = nu_i
    return {"family": "matrix", "model": model, "shapes": shapes,
            "P_o": _LINEAR_PO}


def _layer_case(shape):
    return {
        "family": "layer",
        "model": {"family": "linear-elastic", "E": 1.0, "nu": 0.3,
                  "inclusion": "rigid"},
        "shapes": [shape],
        "P_o": _LINEAR_PO,
    }


def _thermal_case(inclusion, missing_side="top"):
    return {
        "family": "thermal",
        "model": {"family": "thermal", "k": 1.0, "T0": 1.0,
                  "inclusion": inclusion},
        "shapes": _thermal_slit(),
        "P_o": 1.0,
        "missing_side": missing_side,
    }


def case_catalog():
    """name -> case description dict (family, model kwargs, shapes, load)."""
    cat = {
        # the small round-trip benchmark used by the acceptance runs
        "desk": _matrix_case([_c("circle", cx=0.0, cy=0.0, r=0.15)]),
        "two-circles-void": _matrix_case(_two_circles()),
        "two-circles-void-hyper": _matrix_case(_two_circles(), hyper=True),
        "star-rect-void": _matrix_case(_star_rect()),
        "star-rect-soft": _matrix_case(_star_rect(), "moduli", 0.2, 0.3),
        "star-rect-stiff": _matrix_case(_star_rect(), "moduli", 5.0, 0.3),
        "star-rect-rigid": _matrix_case(_star_rect(), "rigid"),
        "star-rect-void-hyper": _matrix_case(_star_rect(), hyper=True),
        "slit-void": _matrix_case(_slit()),
        "slit-void-hyper": _matrix_case(_slit(), hyper=True),
        "u-void": _matrix_case(_u_shape()),
        "u-soft": _matrix_case(_u_shape(), "moduli", 0.2, 0.3),
        "u-stiff": _matrix_case(_u_shape(), "moduli", 5.0, 0.3),
        "u-rigid": _matrix_case(_u_shape(), "rigid"),
        "u-void-hyper": _matrix_case(_u_shape(), hyper=True),
        "t-void": _matrix_case(_t_shape()),
        "t-void-hyper": _matrix_case(_t_shape(), hyper=True),
        "four-circles-void": _matrix_case(_four_circles()),
        "four-circles-void-hyper": _matrix_case(_four_circles(), hyper=True),
        "mit-soft": None,  # filled below: wider domain, different pull axis
        "layer-sinusoid": _layer_case(_c("sinusoid", base=-0.3, amp=0.08, freq=1.0)),
        "layer-pulse": _layer_case(_c("pulse", base=-0.35, amp=0.15,
                                      width=0.08, x0=0.5)),
        "layer-random": _layer_case(_c("random-wave", base=-0.3, amp=0.06,
                                       modes=6, seed=7)),
        "thermal-slit-insulating": _thermal_case("insulating"),
        "thermal-slit-conducting": _thermal_case("conducting"),
    }
    mit = _matrix_case(_mit_letters(), "moduli", 0.2, 0.3)
    mit["family"] = "mit"
    cat["mit-soft"] = mit
    return cat


def build_case(name):
    """Materialize a catalog entry: ShapeSpecs plus a MaterialModel instance."""
    cat = case_catalog()
    if name not in cat:
        raise ConfigError(f"unknown case '{name}' (have: {', '.join(sorted(cat))})")
    c = dict(cat[name])
    kw = dict(c["model"])
    fam = kw.pop("family")
    if fam == "linear-elastic":
        c["material"] = MaterialModel.linear(**kw)
    elif fam == "neo-hookean":
        c["material"] = MaterialModel.neo_hookean(**kw)
    else:
        c["material"] = MaterialModel.thermal(**kw)
    c["name"] = name
    c["bounds"] = FAMILY_BOUNDS[c["family"]]
    return c


def _bcs_for(case):
    fam = case["family"]
    P_o = case["P_o"]
    if fam in ("matrix", "matrix-hyper"):
        return fem.matrix_bcs(P_o)
    if fam == "mit":
        # wider matrix pulled from top and bottom
        bcs = fem.matrix_bcs(P_o)
        bcs["family"] = "mit"
        bcs["tractions"] = {"top": (0.0, P_o), "bottom": (0.0, -P_o)}
        return bcs
    if fam == "layer":
        return fem.layer_bcs(P_o)
    raise ConfigError(f"no elastic boundary conditions for family '{fam}'")


def truth_density(case, resolution=512):
    """Row-major density raster: 1 in the matrix phase, 0 in the inclusion.

    Same grid convention as metrics.raster_points, so truth and predicted
    rasters line up cell for cell.
    """
    from ..metrics import raster_points

    pts, (nyr, nxr) = raster_points(case["bounds"], resolution)
    sd = np.full(pts.shape[0], np.inf)
    for s in case["shapes"]:
        sd = np.minimum(sd, s.sdf(pts))
    return (sd >= 0.0).astype(np.float64).reshape(nyr, nxr)


def _fmt_shape(spec):
    kv = " ".join(f"{k}={spec.params[k]!r}" for k in sorted(spec.params))
    return f"{spec.primitive} {kv}".strip()


def _parse_shape(text):
    parts = text.split()
    if not parts:
        raise ConfigError("empty shape entry")
    kw = {}
    for tok in parts[1:]:
        if "=" not in tok:
            raise ConfigError(f"malformed shape parameter '{tok}'")
        k, v = tok.split("=", 1)
        kw[k] = float(v)
    return ShapeSpec(parts[0], **kw)


def save_case(path, case, data_status="fem"):
    m = case["material"]
    lines = [_CASE_MAGIC,
             f"name = {case['name']}",
             f"family = {case['family']}",
             "domain = " + " ".join(repr(float(b)) for b in case["bounds"]),
             f"model = {m.family}"]
    if m.family == "linear-elastic":
        lines += [f"E = {m.E!r}", f"nu = {m.nu!r}", f"inclusion = {m.inclusion}"]
        if m.inclusion == "moduli":
            lines += [f"E_i = {m.E_i!r}", f"nu_i = {m.nu_i!r}"]
    elif m.family == "neo-hookean":
        lines += [f"mu = {m.mu!r}", f"inclusion = {m.inclusion}"]
    else:
        lines += [f"k = {m.k!r}", f"T0 = {m.T0!r}", f"inclusion = {m.inclusion}"]
        lines += [f"missing_side = {case.get('missing_side', 'none')}"]
    lines.append(f"P_o = {case['P_o']!r}")
    lines.append(f"data = {data_status}")
    for s in case["shapes"]:
        lines.append(f"shape = {_fmt_shape(s)}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_case(path):
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    if not lines or lines[0].strip() != _CASE_MAGIC:
        raise ConfigError(f"{path}: not a case file (missing '{_CASE_MAGIC}')")
    kv = {}
    shapes = []
    for i, ln in enumerate(lines[1:], start=2):
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        if "=" not in ln:
            raise ConfigError(f"{path}:{i}: expected 'key = value'")
        k, v = (t.strip() for t in ln.split("=", 1))
        if k == "shape":
            shapes.append(_parse_shape(v))
        else:
            kv[k] = v
    for req in ("name", "family", "domain", "model", "P_o"):
        if req not in kv:
            raise ConfigError(f"{path}: missing case key '{req}'")
    fam = kv["family"]
    if fam not in FAMILY_BOUNDS:
        raise ConfigError(f"{path}: unknown family '{fam}'")
    case = {
        "name": kv["name"],
        "family": fam,
        "bounds": tuple(float(t) for t in kv["domain"].split()),
        "P_o": float(kv["P_o"]),
        "shapes": shapes,
        "data": kv.get("data", "fem"),
    }
    mfam = kv["model"]
    if mfam == "linear-elastic":
        extra = {}
        if kv.get("inclusion") == "moduli":
            extra = {"E_i": float(kv["E_i"]), "nu_i": float(kv["nu_i"])}
        case["material"] = MaterialModel.linear(
            E=float(kv["E"]), nu=float(kv["nu"]),
            inclusion=kv["inclusion"], **extra)
    elif mfam == "neo-hookean":
        case["material"] = MaterialModel.neo_hookean(
            mu=float(kv["mu"]), inclusion=kv["inclusion"])
    elif mfam == "thermal":
        case["material"] = MaterialModel.thermal(
            k=float(kv["k"]), T0=float(kv["T0"]), inclusion=kv["inclusion"])
        case["missing_side"] = kv.get("missing_side", "none")
    else:
        raise ConfigError(f"{path}: unknown model '{mfam}'")
    return case


def generate_case(name, out_dir, density=200, noise=0.0, seed=0,
                  resolution=512, per_side=100):
    """Solve the forward problem for `name` and write the data artifacts.

    Returns the directory written.  For hyperelastic cases where Newton
    fails, case.txt records `data = unavailable` and no measurement file is
    written.
    """
    from ..metrics import write_raster_csv, write_pgm

    case = build_case(name)
    os.makedirs(out_dir, exist_ok=True)
    mesh = fem.build_mesh(case["bounds"], case["shapes"], density)

    status = "fem"
    mset = None
    if case["family"] == "thermal":
        sol = thermal_solve(mesh, case["material"])
        ms = case.get("missing_side")
        mset = extract_thermal_measurements(
            sol, per_side=per_side,
            missing_side=None if ms in (None, "none") else ms,
            noise=noise, seed=seed)
    elif case["family"] == "matrix-hyper":
        try:
            sol = neo_hookean_solve(mesh, case["material"], _bcs_for(case))
            mset = fem.extract_measurements(sol, per_side=per_side,
                                            noise=noise, seed=seed)
        except SolverError:
            status = "unavailable"
    else:
        sol = fem.fem_solve_linear(mesh, case["material"], _bcs_for(case))
        mset = fem.extract_measurements(sol, per_side=per_side,
                                        noise=noise, seed=seed)

    save_case(os.path.join(out_dir, "case.txt"), case, data_status=status)
    if mset is not None:
        mset.save_csv(os.path.join(out_dir, "measurements.csv"))
    rho = truth_density(case, resolution)
    write_raster_csv(os.path.join(out_dir, "truth.csv"), rho)
    write_pgm(os.path.join(out_dir, "truth.pgm"), rho)
    return out_dir
