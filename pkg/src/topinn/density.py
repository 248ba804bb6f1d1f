"""Level-set to material density map and the eikonal narrow band.

The level set phi is carried by a constrained network output; density is
rho = sigmoid(phi/delta), so the phase transition sits at rho = 0.5 on the
zero level set. The band |phi| < w/2 with w = 10*delta is where the unit
gradient constraint is enforced; it is recomputed from current phi values
every time it is needed, since the interface moves during training.
"""

import logging

import numpy as np

from . import autodiff as ad
from .autodiff import _stable_sigmoid
from .errors import ConfigError

log = logging.getLogger(__name__)

# keeps the gradient of |grad phi| finite at grad phi = 0; perturbs the
# residual by < 1e-12 which is far below any tolerance used here
EPS_G = 1e-24


class LevelSetDensity:
    """rho = sigmoid(phi/delta) with band width w = 10*delta."""

    def __init__(self, phi=None, delta: float = 0.01):
        if not (delta > 0):
            raise ConfigError(f"delta must be positive, got {delta}")
        self.phi = phi
        self.delta = float(delta)
        self.w = 10.0 * self.delta

    def density_at(self, x):
        """(rho, drho/dx1, drho/dx2) at points x, off tape."""
        from .networks import eval_constrained
        val, d1, d2 = eval_constrained(self.phi, x)
        rho = _stable_sigmoid(val / self.delta)
        s = rho * (1.0 - rho) / self.delta
        return rho, s * d1, s * d2

    def narrow_band_mask(self, points, phi_values=None):
        """Boolean mask of points with |phi| < w/2 (strict).

        phi_values may be passed to reuse an existing evaluation; otherwise
        phi is evaluated here. Empty bands are legal and logged.
        """
        if phi_values is None:
            from .networks import eval_constrained
            phi_values, _, _ = eval_constrained(self.phi, points)
        phi_values = np.asarray(phi_values, dtype=np.float64)
        mask = np.abs(phi_values) < 0.5 * self.w
        if not mask.any():
            log.info("eikonal band empty (%d candidate points)", mask.size)
        return mask

    def eikonal_residual_at(self, x):
        """(|grad phi| - 1)^2 at points x, off tape."""
        from .networks import eval_constrained
        _, d1, d2 = eval_constrained(self.phi, x)
        return eikonal_residual(d1, d2)


def grad_norm(d1, d2):
    d1 = np.asarray(d1, dtype=np.float64)
    d2 = np.asarray(d2, dtype=np.float64)
    return np.sqrt(d1 * d1 + d2 * d2 + EPS_G)


def eikonal_residual(d1, d2):
    r = grad_norm(d1, d2) - 1.0
    return r * r


def density_tape(phi_rec, delta: float):
    """rho as a tape value (with duals if phi carries them)."""
    return ad.sigmoid(phi_rec * (1.0 / delta))


def eikonal_residual_tape(phi_rec):
    """Per-point (|grad phi| - 1)^2 as a tape value.

    Consumes the spatial duals of phi_rec; the result itself carries none.
    """
    g1 = ad.dx1_part(phi_rec)
    g2 = ad.dx2_part(phi_rec)
    n = ad.sqrt(g1 * g1 + g2 * g2 + EPS_G)
    r = n - 1.0
    return r * r
