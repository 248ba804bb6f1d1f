"""Training objective: measurement mismatch, governing residuals, and the
interchangeable geometric regularizers.

All terms are recorded on the tape of the bound field bundle and returned as
scalar recordings, so one backward pass yields the full parameter gradient.
The measurement and regularizer terms always see their full point sets; only
the governing term is meant to receive mini-batches.
"""

import logging

import numpy as np

from . import autodiff as ad
from . import density as dn
from . import physics as ph
from .errors import ConfigError

log = logging.getLogger(__name__)

REGULARIZERS = ("eikonal", "tvd", "penalization", "simp")

# residual layout per family: how many leading components are the
# conservation/equilibrium part; the rest are constitutive except a trailing
# incompressibility residual for the finite-strain family
_EQ_COUNT = {"linear-elastic": 2, "neo-hookean": 2, "thermal": 1}


class LossWeights:
    """Scalar weights of the objective and the regularizer selection."""

    def __init__(self, lambda_meas=10.0, lambda_gov=1.0, lambda_reg=1.0,
                 lambda_cr=10.0, regularizer="eikonal", simp_p=3):
        for name, v in (("lambda_meas", lambda_meas), ("lambda_gov", lambda_gov),
                        ("lambda_reg", lambda_reg), ("lambda_cr", lambda_cr)):
            if v < 0:
                raise ConfigError(f"{name} must be nonnegative, got {v}")
        if regularizer not in REGULARIZERS:
            raise ConfigError(f"unknown regularizer {regularizer!r}; "
                              f"choose from {REGULARIZERS}")
        if regularizer == "simp" and int(simp_p) < 1:
            raise ConfigError(f"simp exponent must be >= 1, got {simp_p}")
        self.lambda_meas = float(lambda_meas)
        self.lambda_gov = float(lambda_gov)
        self.lambda_reg = float(lambda_reg)
        self.lambda_cr = float(lambda_cr)
        self.regularizer = regularizer
        self.simp_p = int(simp_p)


def loss_meas(bound, mset):
    """Mean over measurement points of the squared mismatch of observed
    components."""
    if mset.n_points == 0 or mset.n_observed() == 0:
        raise ConfigError("measurement set is empty")
    tape = bound.tape
    names = [n for n in mset.components() if mset.mask[n].any()]
    fields = bound.eval_fields(tape, mset.points, duals=False, only=names)
    total = None
    for name in names:
        m = mset.mask[name]
        target = tape.const(np.where(m, mset.values[name], 0.0))
        err = (fields[name] - target) * tape.const(m.astype(np.float64))
        sq = err * err
        total = sq if total is None else total + sq
    return ad.vsum(total) * (1.0 / mset.n_points)


def _split_residuals(res, family):
    n_eq = _EQ_COUNT[family]
    eq = res[:n_eq]
    if family == "neo-hookean":
        return eq, res[n_eq:-1], res[-1]
    return eq, res[n_eq:], None


def _sum_squares(parts):
    total = None
    for r in parts:
        sq = r * r
        total = sq if total is None else total + sq
    return total


def loss_gov(bound, batch, model, weights):
    """Mean governing-equation residual over one collocation batch.

    Equilibrium/conservation enters with weight one, the constitutive part
    with lambda_cr, and (finite strain) incompressibility with weight one.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.size == 0:
        raise ConfigError("governing-loss batch is empty")
    tape = bound.tape
    fields = bound.eval_fields(tape, batch, duals=True)
    phi = fields.pop("phi")
    rho = dn.density_tape(ad.value_part(phi), bound.bundle.delta)
    state = ph.StateEval.from_tape(fields)

    if model.family == "linear-elastic" and weights.regularizer == "simp":
        res = ph.residual_linear(state, rho, model, simp_p=weights.simp_p)
    else:
        res = ph.RESIDUALS[model.family](state, rho, model)

    eq, cr, inc = _split_residuals(res, model.family)
    total = ad.vmean(_sum_squares(eq)) + weights.lambda_cr * ad.vmean(_sum_squares(cr))
    if inc is not None:
        total = total + ad.vmean(inc * inc)
    return total


def loss_eik(bound, points):
    """Mean squared unit-gradient violation of phi over the current band.

    The band is found from an off-tape evaluation of phi at all points, then
    only the in-band rows are recorded with derivatives.
    """
    points = np.asarray(points, dtype=np.float64)
    bundle = bound.bundle
    phiv = bundle.phi_values(points)
    mask = np.abs(phiv) < 0.5 * bundle.w
    if not mask.any():
        log.info("eikonal band empty this step (%d points scanned)", points.shape[0])
        return bound.tape.const(0.0)
    tape = bound.tape
    fields = bound.eval_fields(tape, points[mask], duals=True, only=["phi"])
    return ad.vmean(dn.eikonal_residual_tape(fields["phi"]))


def loss_regularizer(bound, points, weights):
    """The selected geometric regularizer over the full collocation set."""
    kind = weights.regularizer
    if kind == "eikonal":
        return loss_eik(bound, points)
    if kind == "simp":
        raise ConfigError("simp is not an additive loss term; it rescales the "
                          "moduli inside the constitutive residual")
    tape = bound.tape
    fields = bound.eval_fields(tape, points, duals=(kind == "tvd"), only=["phi"])
    if kind == "penalization":
        rho = dn.density_tape(fields["phi"], bound.bundle.delta)
        return ad.vmean(rho * (1.0 - rho))
    # tvd: smooth L1 norm of the density gradient
    rho = dn.density_tape(fields["phi"], bound.bundle.delta)
    g1 = ad.dx1_part(rho)
    g2 = ad.dx2_part(rho)
    return ad.vmean(ad.sqrt(g1 * g1 + g2 * g2 + dn.EPS_G))


def total_loss(bound, batch, collocation_points, mset, model, weights):
    """Weighted objective and its unweighted components.

    batch feeds the governing term; the measurement and regularizer terms use
    their full sets. Returns (total, parts) with parts holding the scalar
    recordings keyed meas/gov/reg.
    """
    parts = {
        "meas": loss_meas(bound, mset),
        "gov": loss_gov(bound, batch, model, weights),
    }
    if weights.regularizer == "simp":
        parts["reg"] = bound.tape.const(0.0)
    else:
        parts["reg"] = loss_regularizer(bound, collocation_points, weights)
    total = (weights.lambda_meas * parts["meas"]
             + weights.lambda_gov * parts["gov"]
             + weights.lambda_reg * parts["reg"])
    return total, parts
