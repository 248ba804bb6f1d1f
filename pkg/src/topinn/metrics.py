"""Geometry-detection accuracy and field export.

The detection metric is intersection-over-union of the low-density masks
(rho < 0.5 marks the inclusion phase), computed on rasters of identical
shape.  Rasters are row-major with row 0 at the bottom of the domain and
square pixels; the shorter domain side carries `resolution` pixels.
"""

import numpy as np

from .errors import ConfigError
from . import autodiff as ad


class EvalReport:
    """Evaluation summary for one run: detection score plus bookkeeping."""

    def __init__(self, iou=None, final=None, sweep=None, runtime=None,
                 extra=None):
        if iou is not None and not (0.0 <= iou <= 1.0):
            raise ConfigError(f"iou must lie in [0,1], got {iou}")
        self.iou = iou
        self.final = dict(final or {})
        self.sweep = list(sweep or [])
        self.runtime = dict(runtime or {})
        self.extra = dict(extra or {})

    def to_dict(self):
        d = dict(self.extra)
        d["iou"] = self.iou
        if self.final:
            d["final"] = self.final
        if self.sweep:
            d["sweep"] = self.sweep
        if self.runtime:
            d["runtime"] = self.runtime
        return d


def iou(pred, truth, threshold=0.5):
    """Intersection over union of the inclusion masks of two density rasters.

    Inclusion = cells below `threshold`.  Returns 1.0 when both masks are
    empty (perfect agreement on "nothing there").
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ConfigError(
            f"raster shapes differ: {pred.shape} vs {truth.shape}")
    a = pred < threshold
    b = truth < threshold
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def raster_shape(bounds, resolution=512):
    """(ny, nx) with square pixels; the shorter side gets `resolution` cells."""
    x0, x1, y0, y1 = bounds
    w, h = x1 - x0, y1 - y0
    if w <= 0 or h <= 0:
        raise ConfigError(f"degenerate raster bounds {bounds}")
    px = min(w, h) / resolution
    return int(round(h / px)), int(round(w / px))


def raster_points(bounds, resolution=512):
    """Cell-center coordinates (row-major, row 0 at the bottom) and the shape."""
    x0, x1, y0, y1 = bounds
    ny, nx = raster_shape(bounds, resolution)
    xs = x0 + (np.arange(nx) + 0.5) * (x1 - x0) / nx
    ys = y0 + (np.arange(ny) + 0.5) * (y1 - y0) / ny
    X, Y = np.meshgrid(xs, ys)
    return np.column_stack([X.ravel(), Y.ravel()]), (ny, nx)


def write_raster_csv(path, arr):
    arr = np.asarray(arr, dtype=np.float64)
    with open(path, "w") as f:
        f.write(f"# raster v1 {arr.shape[0]} {arr.shape[1]}\n")
        for row in arr:
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def read_raster_csv(path):
    with open(path) as f:
        head = f.readline().split()
        if len(head) != 5 or head[:3] != ["#", "raster", "v1"]:
            raise ConfigError(f"{path}: not a raster file")
        ny, nx = int(head[3]), int(head[4])
        out = np.empty((ny, nx))
        for j in range(ny):
            row = f.readline()
            if not row:
                raise ConfigError(f"{path}: truncated raster ({j} of {ny} rows)")
            out[j] = np.fromstring(row, sep=",")
            if out[j].size != nx:
                raise ConfigError(f"{path}: row {j} has wrong width")
    return out


def write_pgm(path, arr, lo=0.0, hi=1.0):
    """8-bit binary graymap; rows are flipped so the top of the domain is up."""
    arr = np.asarray(arr, dtype=np.float64)
    g = np.clip((arr - lo) / (hi - lo), 0.0, 1.0)
    img = np.round(g[::-1] * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def density_rasters(bundle, resolution=512, chunk=16384):
    """rho, phi, |grad phi| rasters of a (trained) bundle on its own domain."""
    from . import networks as nets
    from .autodiff import _stable_sigmoid

    (x0, x1), (y0, y1) = nets.FAMILY_DOMAIN[bundle.family]
    pts, (ny, nx) = raster_points((x0, x1, y0, y1), resolution)
    phi = np.empty(pts.shape[0])
    gnorm = np.empty(pts.shape[0])
    for lo in range(0, pts.shape[0], chunk):
        sl = slice(lo, min(lo + chunk, pts.shape[0]))
        tape = ad.Tape()
        bound = bundle.bind(tape)
        rec = bound.eval_fields(tape, pts[sl], duals=True, only=["phi"])["phi"]
        phi[sl] = rec.val
        gnorm[sl] = np.hypot(rec.d1, rec.d2)
    rho = _stable_sigmoid(phi / bundle.delta)
    shape = (ny, nx)
    return rho.reshape(shape), phi.reshape(shape), gnorm.reshape(shape)


def export_density(bundle, out_dir, resolution=512):
    """Write rho/phi/|grad phi| rasters (CSV + PGM pairs) for a bundle."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    rho, phi, gnorm = density_rasters(bundle, resolution)
    w = bundle.w
    for name, arr, lo, hi in (("rho", rho, 0.0, 1.0),
                              ("phi", phi, -2.0 * w, 2.0 * w),
                              ("gradphi", gnorm, 0.0, 2.0)):
        write_raster_csv(os.path.join(out_dir, f"{name}.csv"), arr)
        write_pgm(os.path.join(out_dir, f"{name}.pgm"), arr, lo, hi)
    return out_dir
