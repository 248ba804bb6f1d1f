"""Boundary measurement sets and their on-disk CSV form.

A measurement set is a list of boundary points with observed field
components. Unobserved entries are stored as NaN and excluded through a
boolean mask per component, which lets sparse layouts (subset of sides,
subset of quantities) share one representation.
"""

import numpy as np

from .errors import ConfigError

_FORMAT_LINE = "# measurements v1"


class MeasurementSet:
    """Points (N,2) plus per-component observed values.

    values: dict name -> (N,) float array, NaN where not observed.
    """

    def __init__(self, points, values):
        self.points = np.asarray(points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ConfigError(f"measurement points must be (N,2), got {self.points.shape}")
        n = self.points.shape[0]
        self.values = {}
        self.mask = {}
        for name, v in values.items():
            v = np.asarray(v, dtype=np.float64)
            if v.shape != (n,):
                raise ConfigError(
                    f"component {name!r} has shape {v.shape}, expected ({n},)")
            self.values[name] = v
            self.mask[name] = ~np.isnan(v)

    @property
    def n_points(self):
        return self.points.shape[0]

    def components(self):
        return tuple(self.values)

    def n_observed(self):
        return int(sum(m.sum() for m in self.mask.values()))

    def save_csv(self, path):
        names = list(self.values)
        with open(path, "w") as f:
            f.write(_FORMAT_LINE + "\n")
            f.write("# mask: " + " ".join(
                f"{n}={int(self.mask[n].all())}" for n in names) + "\n")
            f.write(",".join(["x1", "x2"] + names) + "\n")
            for i in range(self.n_points):
                row = [repr(float(self.points[i, 0])), repr(float(self.points[i, 1]))]
                row += [repr(float(self.values[n][i])) for n in names]
                f.write(",".join(row) + "\n")

    @classmethod
    def load_csv(cls, path):
        with open(path) as f:
            lines = [ln.rstrip("\n") for ln in f]
        if not lines or lines[0].strip() != _FORMAT_LINE:
            raise ConfigError(f"{path}: not a measurement file (missing version header)")
        body = [ln for ln in lines[1:] if ln and not ln.startswith("#")]
        header = body[0].split(",")
        if header[:2] != ["x1", "x2"]:
            raise ConfigError(f"{path}: header must start with x1,x2")
        names = header[2:]
        data = np.array([[float(tok) for tok in ln.split(",")] for ln in body[1:]],
                        dtype=np.float64)
        if data.size == 0:
            data = data.reshape(0, len(header))
        return cls(data[:, :2], {n: data[:, 2 + j] for j, n in enumerate(names)})
