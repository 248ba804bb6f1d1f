"""Signed-distance geometry for hidden voids, inclusions, and substrates.

Sign convention: negative inside the inclusion (or substrate), positive in
the surrounding material, zero on the interface.  Circles and axis-aligned
or rotated rectangles are exact distances; composites and wavy interfaces
are conservative approximations (correct sign and zero set, distance only
approximate), which is all the mesher and the truth rasters need.
"""

import numpy as np

from ..errors import ConfigError

_PRIMITIVES = (
    "circle",
    "rectangle",
    "slit",
    "star",
    "U",
    "T",
    "letter-M",
    "letter-I",
    "letter-T",
    "sinusoid",
    "pulse",
    "random-wave",
    "union",
    "difference",
)


class ShapeSpec:
    """One inclusion geometry: a primitive plus pose parameters.

    `union` and `difference` take `children=[ShapeSpec, ...]` instead of pose
    parameters; everything else is described by keywords (see the builders
    at the bottom for the accepted keys of each primitive).
    """

    def __init__(self, primitive, children=None, **params):
        if primitive not in _PRIMITIVES:
            raise ConfigError(f"unknown shape primitive '{primitive}'")
        if primitive in ("union", "difference"):
            if not children:
                raise ConfigError(f"'{primitive}' needs at least one child shape")
            if primitive == "difference" and len(children) != 2:
                raise ConfigError("'difference' takes exactly two children")
            self.children = list(children)
        elif children:
            raise ConfigError(f"'{primitive}' does not take children")
        else:
            self.children = []
        self.primitive = primitive
        self.params = dict(params)
        # random-wave draws its Fourier coefficients once, at spec creation,
        # so repeated evaluations (mesh, raster, labels) agree
        if primitive == "random-wave":
            seed = int(self.params.get("seed", 0))
            modes = int(self.params.get("modes", 6))
            amp = float(self.params.get("amp", 0.06))
            rng = np.random.default_rng(seed)
            m = np.arange(1, modes + 1)
            self._coef = amp * rng.standard_normal(modes) / m
            self._phase = rng.uniform(0.0, 2.0 * np.pi, modes)

    def sdf(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ConfigError(f"expected (n, 2) points, got {pts.shape}")
        return _SDF[self.primitive](self, pts)

    def __repr__(self):
        if self.children:
            return f"ShapeSpec({self.primitive!r}, children={self.children!r})"
        kv = ", ".join(f"{k}={v!r}" for k, v in sorted(self.params.items()))
        return f"ShapeSpec({self.primitive!r}, {kv})"


def shape_sdf(spec, points):
    """Signed distance of `points` (n, 2) to the shape; negative inside."""
    return spec.sdf(points)


def _get(spec, key, default=None):
    if default is None and key not in spec.params:
        raise ConfigError(f"'{spec.primitive}' needs parameter '{key}'")
    return float(spec.params.get(key, default))


def _sdf_circle(spec, pts):
    cx, cy = _get(spec, "cx", 0.0), _get(spec, "cy", 0.0)
    r = _get(spec, "r")
    return np.hypot(pts[:, 0] - cx, pts[:, 1] - cy) - r


def _rect_local(pts, cx, cy, angle):
    dx = pts[:, 0] - cx
    dy = pts[:, 1] - cy
    if angle:
        c, s = np.cos(angle), np.sin(angle)
        dx, dy = c * dx + s * dy, -s * dx + c * dy
    return dx, dy


def _sdf_rectangle(spec, pts, hx=None, hy=None):
    cx, cy = _get(spec, "cx", 0.0), _get(spec, "cy", 0.0)
    hx = _get(spec, "hx") if hx is None else hx
    hy = _get(spec, "hy") if hy is None else hy
    ang = _get(spec, "angle", 0.0)
    dx, dy = _rect_local(pts, cx, cy, ang)
    qx = np.abs(dx) - hx
    qy = np.abs(dy) - hy
    outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
    inside = np.minimum(np.maximum(qx, qy), 0.0)
    return outside + inside


def _sdf_slit(spec, pts):
    # a slit is just a thin box; defaults give the 0.2 x 0.04 proportion
    return _sdf_rectangle(spec, pts,
                          hx=_get(spec, "hx", 0.1), hy=_get(spec, "hy", 0.02))


def _sdf_star(spec, pts):
    cx, cy = _get(spec, "cx", 0.0), _get(spec, "cy", 0.0)
    r0 = _get(spec, "r0")
    amp = _get(spec, "amp", 0.4 * r0)
    lobes = int(_get(spec, "lobes", 3))
    phase = _get(spec, "phase", 0.0)
    dx = pts[:, 0] - cx
    dy = pts[:, 1] - cy
    r = np.hypot(dx, dy)
    th = np.arctan2(dy, dx)
    # radial mismatch; shortened by the max interface slope so it stays a
    # lower bound on the true distance near the boundary
    slope = np.sqrt(1.0 + (lobes * amp / max(r0 - amp, 1e-9)) ** 2)
    return (r - (r0 + amp * np.cos(lobes * (th - phase)))) / slope


def _union(sds):
    out = sds[0]
    for s in sds[1:]:
        out = np.minimum(out, s)
    return out


def _sdf_union(spec, pts):
    return _union([c.sdf(pts) for c in spec.children])


def _sdf_difference(spec, pts):
    a, b = spec.children
    return np.maximum(a.sdf(pts), -b.sdf(pts))


def _letter_union(spec, pts, boxes):
    """Union of rotated boxes given in the shape's local frame.

    Each entry is (ox, oy, hx, hy, local_angle); the whole letter is scaled
    by `size`, rotated by `angle`, and translated to (cx, cy).
    """
    cx, cy = _get(spec, "cx", 0.0), _get(spec, "cy", 0.0)
    size = _get(spec, "size", 1.0)
    ang = _get(spec, "angle", 0.0)
    ca, sa = np.cos(ang), np.sin(ang)
    sds = []
    for ox, oy, hx, hy, la in boxes:
        gx = cx + size * (ca * ox - sa * oy)
        gy = cy + size * (sa * ox + ca * oy)
        sub = ShapeSpec("rectangle", cx=gx, cy=gy,
                        hx=size * hx, hy=size * hy, angle=ang + la)
        sds.append(sub.sdf(pts))
    return _union(sds)


# local-frame layouts, unit "em" box roughly [-0.5, 0.5]^2

_U_BOXES = (
    (-0.375, 0.1, 0.125, 0.4, 0.0),   # left leg
    (0.375, 0.1, 0.125, 0.4, 0.0),    # right leg
    (0.0, -0.35, 0.5, 0.15, 0.0),     # bottom bar
)

_T_BOXES = (
    (0.0, 0.375, 0.5, 0.125, 0.0),    # top bar
    (0.0, -0.125, 0.15, 0.375, 0.0),  # stem
)

_M_BOXES = (
    (-0.4, 0.0, 0.1, 0.5, 0.0),       # left leg
    (0.4, 0.0, 0.1, 0.5, 0.0),        # right leg
    (-0.185, 0.08, 0.09, 0.46, -0.42),  # left diagonal, leaning inward
    (0.185, 0.08, 0.09, 0.46, 0.42),    # right diagonal
)

_I_BOXES = (
    (0.0, 0.0, 0.12, 0.5, 0.0),
)


def _sdf_U(spec, pts):
    return _letter_union(spec, pts, _U_BOXES)


def _sdf_T(spec, pts):
    return _letter_union(spec, pts, _T_BOXES)


def _sdf_M(spec, pts):
    return _letter_union(spec, pts, _M_BOXES)


def _sdf_I(spec, pts):
    return _letter_union(spec, pts, _I_BOXES)


# -- substrate interfaces (layer setup) --------------------------------------
#
# The substrate occupies everything below an interface curve y*(x); using the
# vertical offset y - y*(x) keeps the zero set exact and the sign right, and
# for the gentle slopes of these profiles the distance error is a few percent.

def _interface_sdf(pts, ystar):
    return pts[:, 1] - ystar


def _sdf_sinusoid(spec, pts):
    base = _get(spec, "base", -0.3)
    amp = _get(spec, "amp", 0.08)
    freq = _get(spec, "freq", 1.0)
    x0 = _get(spec, "x0", 0.0)
    ystar = base + amp * np.cos(2.0 * np.pi * freq * (pts[:, 0] - x0))
    return _interface_sdf(pts, ystar)


def _sdf_pulse(spec, pts):
    base = _get(spec, "base", -0.35)
    amp = _get(spec, "amp", 0.15)
    width = _get(spec, "width", 0.08)
    x0 = _get(spec, "x0", 0.5)
    # wrapped abscissa keeps the profile periodic on a unit cell
    dx = pts[:, 0] - x0
    dx = dx - np.round(dx)
    ystar = base + amp * np.exp(-0.5 * (dx / width) ** 2)
    return _interface_sdf(pts, ystar)


def _sdf_random_wave(spec, pts):
    base = _get(spec, "base", -0.3)
    x = pts[:, 0]
    m = np.arange(1, len(spec._coef) + 1)
    ystar = base + np.sum(
        spec._coef[None, :] * np.cos(2.0 * np.pi * m[None, :] * x[:, None]
                                     + spec._phase[None, :]),
        axis=1,
    )
    return _interface_sdf(pts, ystar)


_SDF = {
    "circle": _sdf_circle,
    "rectangle": _sdf_rectangle,
    "slit": _sdf_slit,
    "star": _sdf_star,
    "U": _sdf_U,
    "T": _sdf_T,
    "letter-M": _sdf_M,
    "letter-I": _sdf_I,
    "letter-T": _sdf_T,
    "sinusoid": _sdf_sinusoid,
    "pulse": _sdf_pulse,
    "random-wave": _sdf_random_wave,
    "union": _sdf_union,
    "difference": _sdf_difference,
}
