"""PDE residuals for the three physical models, plus nondimensionalization.

Residual functions are written against per-field triples (value, d/dx1,
d/dx2) whose entries may be either tape-recorded quantities or plain numpy
arrays; the same arithmetic path therefore serves both training and
closed-form verification. Density rho enters only through its value.
"""

import numpy as np

from . import autodiff as ad
from .errors import ConfigError

DET_EPS = 1e-12


def lame_constants(E: float, nu: float):
    """Plane-strain Lame pair (lambda, mu) from Young's modulus and Poisson ratio."""
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return lam, mu


class MaterialModel:
    """Matrix/inclusion material description for one problem family.

    family: 'linear-elastic', 'neo-hookean' or 'thermal'.
    form:   'stress-strain' | 'strain-stress' (linear),
            'flux-form' | 'gradient-form' (thermal).
    Inclusions are either limit tags (void, rigid, insulating, conducting)
    or finite moduli (E_i, nu_i).
    """

    def __init__(self, family, **kw):
        self.family = family
        if family == "linear-elastic":
            self._init_linear(**kw)
        elif family == "neo-hookean":
            self._init_hyper(**kw)
        elif family == "thermal":
            self._init_thermal(**kw)
        else:
            raise ConfigError(f"unknown material family {family!r}")

    def _init_linear(self, E=1.0, nu=0.3, inclusion="void", form=None,
                     E_i=None, nu_i=None):
        if not (E > 0):
            raise ConfigError(f"E must be positive, got {E}")
        if not (-1.0 < nu < 0.5):
            raise ConfigError(f"nu must lie in (-1, 0.5), got {nu}")
        self.E, self.nu = float(E), float(nu)
        self.lam, self.mu = lame_constants(self.E, self.nu)
        self.inclusion = inclusion

        if inclusion == "void":
            form = form or "stress-strain"
            if form != "stress-strain":
                raise ConfigError(
                    "void inclusion has zero modulus and cannot be inverted; "
                    "use the stress-strain form")
            self.lam_i = self.mu_i = 0.0
        elif inclusion == "rigid":
            form = form or "strain-stress"
            if form != "strain-stress":
                raise ConfigError(
                    "rigid inclusion has unbounded modulus; "
                    "use the strain-stress form")
            # compliance of the rigid phase is identically zero
            self.c1_i = self.c2_i = 0.0
        elif inclusion == "moduli":
            if E_i is None or nu_i is None:
                raise ConfigError("inclusion moduli require E_i and nu_i")
            if E_i < 0 or not (-1.0 < nu_i < 0.5):
                raise ConfigError(f"bad inclusion moduli E_i={E_i}, nu_i={nu_i}")
            form = form or ("stress-strain" if E_i <= E else "strain-stress")
            if form == "strain-stress" and E_i == 0:
                raise ConfigError(
                    "strain-stress form divides by the inclusion modulus; "
                    "E_i = 0 requires the stress-strain form")
            self.E_i, self.nu_i = float(E_i), float(nu_i)
            if form == "stress-strain":
                self.lam_i, self.mu_i = lame_constants(self.E_i, self.nu_i)
            else:
                self.c1_i = (1.0 + nu_i) / E_i
                self.c2_i = nu_i * (1.0 + nu_i) / E_i
        else:
            raise ConfigError(f"unknown linear inclusion {inclusion!r}")

        if form not in ("stress-strain", "strain-stress"):
            raise ConfigError(f"unknown constitutive form {form!r}")
        self.form = form
        if form == "strain-stress":
            # plane-strain compliance of the matrix
            self.c1 = (1.0 + nu) / E
            self.c2 = nu * (1.0 + nu) / E

    def _init_hyper(self, mu=0.38, inclusion="void"):
        if not (mu > 0):
            raise ConfigError(f"mu must be positive, got {mu}")
        if inclusion != "void":
            raise ConfigError("neo-hookean supports void inclusions only")
        self.mu = float(mu)
        self.inclusion = inclusion
        self.form = "stress-strain"

    def _init_thermal(self, k=1.0, T0=1.0, inclusion="insulating", form=None):
        if not (k > 0) or not (T0 > 0):
            raise ConfigError(f"k and T0 must be positive, got k={k}, T0={T0}")
        self.k, self.T0 = float(k), float(T0)
        self.inclusion = inclusion
        expected = {"insulating": "flux-form", "conducting": "gradient-form"}
        if inclusion not in expected:
            raise ConfigError(f"unknown thermal inclusion {inclusion!r}")
        if form is not None and form != expected[inclusion]:
            raise ConfigError(
                f"{inclusion} inclusion requires {expected[inclusion]}, got {form!r}")
        self.form = expected[inclusion]

    @classmethod
    def linear(cls, **kw):
        return cls("linear-elastic", **kw)

    @classmethod
    def neo_hookean(cls, **kw):
        return cls("neo-hookean", **kw)

    @classmethod
    def thermal(cls, **kw):
        return cls("thermal", **kw)


class StateEval:
    """Per-point values and first spatial derivatives of the unknown fields.

    A mapping from field name to the triple (value, d/dx1, d/dx2).
    """

    def __init__(self, fields):
        self.fields = dict(fields)

    def __getitem__(self, name):
        return self.fields[name]

    def __contains__(self, name):
        return name in self.fields

    def names(self):
        return tuple(self.fields)

    @classmethod
    def from_tape(cls, recs):
        """Split tape-recorded fields with duals into triples."""
        out = {}
        for name, r in recs.items():
            out[name] = (ad.value_part(r), ad.dx1_part(r), ad.dx2_part(r))
        return cls(out)


def _one_minus(rho):
    return 1.0 - rho if isinstance(rho, ad.Rec) else 1.0 - np.asarray(rho)


def _ipow(rho, p):
    if isinstance(rho, ad.Rec):
        return ad.ipow(rho, p)
    return np.asarray(rho) ** p


def residual_linear(state, rho, model, simp_p=None):
    """Equilibrium and constitutive residuals of linear plane-strain elasticity.

    Returns (eq1, eq2, c11, c22, c12). The constitutive residual blends the
    matrix and inclusion laws linearly in rho; with simp_p set, both Lame
    constants are instead scaled by rho**p and no inclusion term appears.
    """
    if model.family != "linear-elastic":
        raise ConfigError(f"residual_linear needs a linear model, got {model.family}")
    u1, u2 = state["u1"], state["u2"]
    s11, s22, s12 = state["s11"], state["s22"], state["s12"]

    eq1 = s11[1] + s12[2]
    eq2 = s12[1] + s22[2]

    e11 = u1[1]
    e22 = u2[2]
    e12 = (u1[2] + u2[1]) * 0.5

    if simp_p is not None:
        if model.form != "stress-strain":
            raise ConfigError("power-law moduli scaling needs the stress-strain form")
        rp = _ipow(rho, int(simp_p))
        tr = e11 + e22
        c11 = s11[0] - rp * (model.lam * tr + 2.0 * model.mu * e11)
        c22 = s22[0] - rp * (model.lam * tr + 2.0 * model.mu * e22)
        c12 = s12[0] - rp * (2.0 * model.mu * e12)
        return eq1, eq2, c11, c22, c12

    omr = _one_minus(rho)
    if model.form == "stress-strain":
        tr = e11 + e22
        m11 = model.lam * tr + 2.0 * model.mu * e11
        m22 = model.lam * tr + 2.0 * model.mu * e22
        m12 = 2.0 * model.mu * e12
        i11 = model.lam_i * tr + 2.0 * model.mu_i * e11
        i22 = model.lam_i * tr + 2.0 * model.mu_i * e22
        i12 = 2.0 * model.mu_i * e12
        c11 = s11[0] - (rho * m11 + omr * i11)
        c22 = s22[0] - (rho * m22 + omr * i22)
        c12 = s12[0] - (rho * m12 + omr * i12)
    else:
        trs = s11[0] + s22[0]
        m11 = model.c1 * s11[0] - model.c2 * trs
        m22 = model.c1 * s22[0] - model.c2 * trs
        m12 = model.c1 * s12[0]
        i11 = model.c1_i * s11[0] - model.c2_i * trs
        i22 = model.c1_i * s22[0] - model.c2_i * trs
        i12 = model.c1_i * s12[0]
        c11 = e11 - (rho * m11 + omr * i11)
        c22 = e22 - (rho * m22 + omr * i22)
        c12 = e12 - (rho * m12 + omr * i12)
    return eq1, eq2, c11, c22, c12


def _safe_det(det):
    """Shift det away from zero below DET_EPS so the cofactor inverse stays finite."""
    if isinstance(det, ad.Rec):
        return ad.detreg(det, DET_EPS)
    d = np.asarray(det, dtype=np.float64)
    z = np.abs(d) < DET_EPS
    if not z.any():
        return d
    sign = np.where(d < 0, -1.0, 1.0)
    return np.where(z, d + sign * DET_EPS, d)


def _values(x):
    return x.val if isinstance(x, ad.Rec) else np.asarray(x)


def residual_hyper(state, rho, model, warn=None):
    """Residuals of incompressible neo-Hookean finite elasticity.

    Returns (eq1, eq2, c11, c22, c12, c21, inc): first-stress equilibrium,
    four constitutive components against rho*(-p*F^{-T} + mu*F), and the
    incompressibility residual rho*(det F - 1) which turns itself off in
    the void phase.
    """
    if model.family != "neo-hookean":
        raise ConfigError(f"residual_hyper needs a neo-hookean model, got {model.family}")
    u1, u2 = state["u1"], state["u2"]
    s11, s22 = state["s11"], state["s22"]
    s12, s21 = state["s12"], state["s21"]
    p = state["p"]

    eq1 = s11[1] + s12[2]
    eq2 = s21[1] + s22[2]

    F11 = 1.0 + u1[1]
    F12 = u1[2]
    F21 = u2[1]
    F22 = 1.0 + u2[2]
    det = F11 * F22 - F12 * F21
    dsafe = _safe_det(det)

    dv = _values(det)
    rv = _values(rho)
    if np.any((rv > 0.5) & (dv <= 0)) and warn is not None:
        warn("det F <= 0 at %d material points" % int(((rv > 0.5) & (dv <= 0)).sum()))

    # cofactor transpose-inverse: F^{-T} = adj(F)^T / det
    it11 = F22 / dsafe
    it12 = (-1.0) * F21 / dsafe
    it21 = (-1.0) * F12 / dsafe
    it22 = F11 / dsafe

    pv = p[0]
    mu = model.mu
    c11 = s11[0] - rho * (mu * F11 - pv * it11)
    c22 = s22[0] - rho * (mu * F22 - pv * it22)
    c12 = s12[0] - rho * (mu * F12 - pv * it12)
    c21 = s21[0] - rho * (mu * F21 - pv * it21)
    inc = rho * (det - 1.0)
    return eq1, eq2, c11, c22, c12, c21, inc


def residual_thermal(state, rho, model):
    """Residuals of nonlinear heat conduction q = -k(1 + T/T0) grad T.

    Returns (cons, f1, f2): flux conservation plus the two components of the
    form matched to the inclusion limit. The flux form kills q where rho = 0
    (insulating); the gradient form kills grad T there (conducting).
    """
    if model.family != "thermal":
        raise ConfigError(f"residual_thermal needs a thermal model, got {model.family}")
    T, q1, q2 = state["T"], state["q1"], state["q2"]

    cons = q1[1] + q2[2]
    slope = 1.0 + T[0] * (1.0 / model.T0)
    if model.form == "flux-form":
        f1 = q1[0] + rho * (model.k * slope * T[1])
        f2 = q2[0] + rho * (model.k * slope * T[2])
    else:
        f1 = rho * (q1[0] * (1.0 / model.k)) + slope * T[1]
        f2 = rho * (q2[0] * (1.0 / model.k)) + slope * T[2]
    return cons, f1, f2


RESIDUALS = {
    "linear-elastic": residual_linear,
    "neo-hookean": residual_hyper,
    "thermal": residual_thermal,
}


class Rescaler:
    """Maps physical quantities to nondimensional order-one values and back.

    Lengths scale by L, stresses by P_o, displacements by L*P_o/E. For the
    neo-Hookean family pass mu instead of E; the equivalent incompressible
    plane modulus is E = 3*mu.
    """

    def __init__(self, L, P_o, E=None, mu=None):
        if E is None:
            if mu is None:
                raise ConfigError("Rescaler needs E or mu")
            E = 3.0 * mu
        if not (L > 0 and P_o > 0 and E > 0):
            raise ConfigError(f"scales must be positive: L={L}, P_o={P_o}, E={E}")
        self.L, self.P_o, self.E = float(L), float(P_o), float(E)

    def length(self, x):
        return np.asarray(x) / self.L

    def length_inv(self, x):
        return np.asarray(x) * self.L

    def stress(self, s):
        return np.asarray(s) / self.P_o

    def stress_inv(self, s):
        return np.asarray(s) * self.P_o

    def displacement(self, u):
        return np.asarray(u) * (self.E / (self.L * self.P_o))

    def displacement_inv(self, u):
        return np.asarray(u) * (self.L * self.P_o / self.E)
