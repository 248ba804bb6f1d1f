"""SIREN networks and the hard-constraint output transforms.

One network per scalar quantity.  Networks of equal shape are stored and
evaluated as a stacked group (one leading axis) so a whole problem's fields
cost a handful of batched matmuls per layer; a standalone net is just a
group of one.

Output transforms bake the applied boundary conditions into the network
output algebraically, so constrained quantities satisfy them to machine
precision regardless of the raw net.  The level-set transform pins
phi = w on the known exterior boundary (and -w on a buried substrate side).
"""

from __future__ import annotations

import io
import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DomainError

TAU = 2.0 * np.pi


def _layout(sizes):
    """Per-net parameter entries, layer-major: W1, b1, W2, b2, ..."""
    entries = []
    off = 0
    for k in range(1, len(sizes)):
        for shape in (((sizes[k], sizes[k - 1])), ((sizes[k],))):
            n = int(np.prod(shape))
            entries.append((shape, off, n))
            off += n
    return entries, off


class ParamSet:
    """Flattened weights/biases of one network plus layer shape metadata."""

    def __init__(self, sizes, arrays):
        self.sizes = tuple(int(s) for s in sizes)
        self.arrays = arrays            # [(W_k, b_k), ...] possibly views
        self.n_params = sum(W.size + b.size for W, b in arrays)

    def flat(self):
        return np.concatenate([np.concatenate([W.ravel(), b.ravel()])
                               for W, b in self.arrays])

    def set_flat(self, theta):
        off = 0
        for W, b in self.arrays:
            W[...] = theta[off:off + W.size].reshape(W.shape)
            off += W.size
            b[...] = theta[off:off + b.size]
            off += b.size


class NetGroup:
    """G same-shaped SIRENs in one layer-major storage vector.

    Storage order is [W1 of all nets, b1 of all nets, W2 ...], which keeps
    every stacked leaf a contiguous view and makes the gradient vector align
    with `theta` without any reshuffling.
    """

    def __init__(self, sizes, omega0, roles, theta=None):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ConfigError(f"invalid layer sizes {sizes}")
        if omega0 <= 0:
            raise ConfigError(f"omega0 must be positive, got {omega0}")
        self.sizes = sizes
        self.omega0 = float(omega0)
        self.roles = tuple(roles)
        self.G = len(self.roles)
        self.entries, self.P = _layout(sizes)
        self.theta = np.zeros(self.G * self.P) if theta is None else theta
        if self.theta.shape != (self.G * self.P,):
            raise ConfigError(f"theta length {self.theta.shape} != {self.G * self.P}")

    def _block(self, entry):
        shape, off, n = entry
        return self.theta[self.G * off: self.G * off + self.G * n].reshape((self.G,) + shape)

    def init_siren(self, seeds):
        """Draw SIREN init per net: W^k ~ U(±sqrt(6/q_k)), b^k = 0."""
        if len(seeds) != self.G:
            raise ConfigError("one seed per network required")
        for g, seed in enumerate(seeds):
            rng = np.random.default_rng(seed)
            for k in range(1, len(self.sizes)):
                bound = np.sqrt(6.0 / self.sizes[k])
                W = self._block(self.entries[2 * (k - 1)])
                W[g] = rng.uniform(-bound, bound, size=W.shape[1:])
                self._block(self.entries[2 * (k - 1) + 1])[g] = 0.0
        return self

    def bind(self, tape):
        """Register stacked per-layer leaves; returns a BoundGroup."""
        leaves = []
        recs = []
        for i, entry in enumerate(self.entries):
            shape, off, n = entry
            arr = self._block(entry)
            if i % 2 == 1:                     # bias: broadcast over batch axis
                arr = arr.reshape(self.G, 1, shape[0])
            rec = tape.param(arr)
            recs.append(rec)
            leaves.append((rec, self.G * off, self.G * n))
        return BoundGroup(self, recs, leaves)

    def params_of(self, g):
        arrays = []
        for k in range(1, len(self.sizes)):
            W = self._block(self.entries[2 * (k - 1)])[g]
            b = self._block(self.entries[2 * (k - 1) + 1])[g]
            arrays.append((W, b))
        return ParamSet(self.sizes, arrays)

    def net(self, g):
        return SirenNet(self.sizes, self.omega0, self.params_of(g), role=self.roles[g])

    def values(self, coords_or_embed):
        """Off-tape value-only forward pass -> (G, B); used by band scans."""
        z = np.asarray(coords_or_embed, dtype=np.float64)
        L = len(self.sizes) - 1
        for k in range(1, L + 1):
            W = self._block(self.entries[2 * (k - 1)])
            b = self._block(self.entries[2 * (k - 1) + 1]).reshape(self.G, 1, -1)
            z = np.matmul(z, np.swapaxes(W, -1, -2))
            if k == 1 and self.omega0 != 1.0:
                z = z * self.omega0
            z = z + b
            if k < L:
                z = np.sin(z)
        return z[..., 0]


class BoundGroup:
    def __init__(self, group, recs, leaf_list):
        self.group = group
        self.recs = recs
        self._leaves = leaf_list
        self.n_params = group.G * group.P

    def leaves(self):
        yield from self._leaves

    def forward(self, x):
        """x: Rec (B, n_in) -> Rec (G, B)."""
        g = self.group
        z = x
        L = len(g.sizes) - 1
        for k in range(1, L + 1):
            W = self.recs[2 * (k - 1)]
            b = self.recs[2 * (k - 1) + 1]
            z = ad.linear(z, W, b, wscale=g.omega0 if k == 1 else 1.0)
            if k < L:
                z = ad.sin(z)
        return ad.squeeze_last(z)


class SirenNet:
    """A single SIREN: hidden sine layers, affine output, first-layer omega0."""

    def __init__(self, sizes, omega0, params: ParamSet, role="field"):
        self.sizes = tuple(sizes)
        self.omega0 = float(omega0)
        self.params = params
        self.role = role

    def as_group(self):
        # per-net flat order equals the G=1 storage order
        g = NetGroup(self.sizes, self.omega0, (self.role,))
        g.theta[...] = self.params.flat()
        return g

    def forward_values(self, coords):
        return self.as_group().values(coords)[0]


def siren_init(layer_sizes, omega0, seed) -> SirenNet:
    """Fresh SIREN with the uniform(±sqrt(6/q_k)) draw; deterministic per seed."""
    group = NetGroup(layer_sizes, omega0, ("field",)).init_siren([seed])
    return group.net(0)


# ---------------------------------------------------------------------------
# case families and hard-BC transforms

# domain: ((x1min, x1max), (x2min, x2max))
FAMILY_DOMAIN = {
    "matrix": ((-0.5, 0.5), (-0.5, 0.5)),
    "matrix-hyper": ((-0.5, 0.5), (-0.5, 0.5)),
    "mit": ((-1.0, 1.0), (-0.5, 0.5)),
    "layer": ((0.0, 1.0), (-0.5, 0.0)),
    "thermal": ((0.0, 1.0), (0.0, 1.0)),
}

FAMILY_FIELDS = {
    "matrix": ("u1", "u2", "s11", "s22", "s12"),
    "matrix-hyper": ("u1", "u2", "s11", "s22", "s12", "s21", "p"),
    "mit": ("u1", "u2", "s11", "s22", "s12"),
    "layer": ("u1", "u2", "s11", "s22", "s12"),
    "thermal": ("T", "q1", "q2"),
}

# input dimension of every net in the family (layer nets consume the
# periodic embedding, everything else the raw coordinates)
FAMILY_NET_INPUT = {"matrix": 2, "matrix-hyper": 2, "mit": 2, "layer": 3, "thermal": 2}


def _parts_matrix(tape, x):
    x1 = ad.squeeze_last(ad.slice_cols(x, 0, 1))
    x2 = ad.squeeze_last(ad.slice_cols(x, 1, 2))
    f1 = ad.addc(ad.mul(x1, x1), -0.25)
    f2 = ad.addc(ad.mul(x2, x2), -0.25)
    return {"x1": x1, "x2": x2, "f1": f1, "f2": f2, "f12": ad.mul(f1, f2), "embed": x}


def _parts_mit(tape, x):
    x1 = ad.squeeze_last(ad.slice_cols(x, 0, 1))
    x2 = ad.squeeze_last(ad.slice_cols(x, 1, 2))
    f1 = ad.addc(ad.mul(x1, x1), -1.0)
    f2 = ad.addc(ad.mul(x2, x2), -0.25)
    return {"x1": x1, "x2": x2, "f1": f1, "f2": f2, "f12": ad.mul(f1, f2), "embed": x}


def _parts_layer(tape, x):
    x1c = ad.slice_cols(x, 0, 1)
    x2c = ad.slice_cols(x, 1, 2)
    embed = ad.concat([ad.cos(ad.scale(x1c, TAU)), ad.sin(ad.scale(x1c, TAU)), x2c])
    y = ad.squeeze_last(x2c)
    return {"y": y, "yh": ad.addc(y, 0.5), "embed": embed}


def _parts_thermal(tape, x):
    x1 = ad.squeeze_last(ad.slice_cols(x, 0, 1))
    x2 = ad.squeeze_last(ad.slice_cols(x, 1, 2))
    gx = ad.mul(x1, ad.addc(ad.neg(x1), 1.0))   # x(1-x)
    gy = ad.mul(x2, ad.addc(ad.neg(x2), 1.0))   # y(1-y)
    return {"x1": x1, "x2": x2, "gx": gx, "gy": gy, "gxy": ad.mul(gx, gy), "embed": x}


_PARTS = {
    "matrix": _parts_matrix,
    "matrix-hyper": _parts_matrix,
    "mit": _parts_mit,
    "layer": _parts_layer,
    "thermal": _parts_thermal,
}


def _transforms(family, P_o, w, missing_side="none"):
    """name -> fn(parts, raw Rec (B,)) -> Rec (B,); raw pass-through if absent."""
    if family == "matrix":
        return {
            "s11": lambda p, r: ad.addc(ad.mul(p["f1"], r), P_o),
            "s22": lambda p, r: ad.mul(p["f2"], r),
            "s12": lambda p, r: ad.mul(p["f12"], r),
            "phi": lambda p, r: ad.addc(ad.mul(p["f12"], r), w),
        }
    if family == "mit":
        return {
            "s22": lambda p, r: ad.addc(ad.mul(p["f2"], r), P_o),
            "s11": lambda p, r: ad.mul(p["f1"], r),
            "s12": lambda p, r: ad.mul(p["f12"], r),
            "phi": lambda p, r: ad.addc(ad.mul(p["f12"], r), w),
        }
    if family == "matrix-hyper":
        return {
            "s11": lambda p, r: ad.addc(ad.mul(p["f1"], r), P_o),
            "s22": lambda p, r: ad.mul(p["f2"], r),
            "s12": lambda p, r: ad.mul(p["f2"], r),
            "s21": lambda p, r: ad.mul(p["f1"], r),
            "phi": lambda p, r: ad.addc(ad.mul(p["f12"], r), w),
        }
    if family == "layer":
        return {
            "u1": lambda p, r: ad.mul(p["yh"], r),
            "u2": lambda p, r: ad.mul(p["yh"], r),
            "s22": lambda p, r: ad.addc(ad.mul(p["y"], r), -P_o),
            "s12": lambda p, r: ad.mul(p["y"], r),
            "phi": lambda p, r: ad.add(ad.mul(ad.mul(p["y"], p["yh"]), r),
                                       ad.addc(ad.scale(p["y"], 4.0 * w), w)),
        }
    if family == "thermal":
        tf = {}
        if missing_side == "left":
            tf["T"] = lambda p, r: ad.mul(ad.addc(ad.neg(p["x1"]), 1.0), r)
        elif missing_side == "right":
            tf["T"] = lambda p, r: ad.addc(ad.mul(p["x1"], r), 1.0)
        else:
            tf["T"] = lambda p, r: ad.add(ad.addc(ad.neg(p["x1"]), 1.0),
                                          ad.mul(p["gx"], r))
        if missing_side == "top":
            tf["q2"] = lambda p, r: ad.mul(p["x2"], r)
        elif missing_side == "bottom":
            tf["q2"] = lambda p, r: ad.mul(ad.addc(p["x2"], -1.0), r)
        else:
            tf["q2"] = lambda p, r: ad.mul(p["gy"], r)
        tf["phi"] = lambda p, r: ad.addc(ad.mul(p["gxy"], r), w)
        return tf
    raise ConfigError(f"unknown case family '{family}'")


class ConstrainedField:
    """One constrained quantity: raw net plus its hard-BC transform."""

    def __init__(self, raw: SirenNet, family, name, P_o, w, missing_side="none"):
        self.raw = raw
        self.family = family
        self.name = name
        self.P_o = float(P_o)
        self.w = float(w)
        self.missing_side = missing_side

    def transform_fn(self):
        return _transforms(self.family, self.P_o, self.w, self.missing_side).get(self.name)


def check_in_domain(family, coords, tol=1e-9):
    (a1, b1), (a2, b2) = FAMILY_DOMAIN[family]
    c = np.asarray(coords, dtype=np.float64)
    bad = ((c[:, 0] < a1 - tol) | (c[:, 0] > b1 + tol)
           | (c[:, 1] < a2 - tol) | (c[:, 1] > b2 + tol))
    if bad.any():
        i = int(np.argmax(bad))
        raise DomainError(f"point {tuple(c[i])} outside {family} domain")


def eval_constrained(field: ConstrainedField, x, family=None):
    """Constrained quantity with spatial duals at points x (n, 2).

    Returns (value, dx1, dx2) arrays.  Points outside the closed case domain
    raise DomainError.
    """
    if family is not None and family != field.family:
        raise ConfigError(f"field belongs to family '{field.family}', not '{family}'")
    coords = np.atleast_2d(np.asarray(x, dtype=np.float64))
    check_in_domain(field.family, coords)
    tape = ad.Tape()
    xr = tape.spatial(coords)
    parts = _PARTS[field.family](tape, xr)
    group = field.raw.as_group()
    bound = group.bind(tape)
    raw = ad.take_row(bound.forward(parts["embed"]), 0)
    fn = field.transform_fn()
    out = raw if fn is None else fn(parts, raw)
    return ad.spatial_derivatives(out)


# ---------------------------------------------------------------------------
# bundle: all constrained fields of one problem instance


class FieldBundle:
    """The psi networks plus the level-set phi for one case."""

    def __init__(self, family, psi_group: NetGroup, phi_group: NetGroup,
                 P_o=1.0, delta=0.01, missing_side="none"):
        if tuple(psi_group.roles) != FAMILY_FIELDS[family]:
            raise ConfigError(f"psi roles {psi_group.roles} do not match family '{family}'")
        if phi_group.roles != ("phi",):
            raise ConfigError("phi group must hold exactly the level-set net")
        self.family = family
        self.psi = psi_group
        self.phi = phi_group
        self.P_o = float(P_o)
        self.delta = float(delta)
        self.w = 10.0 * float(delta)
        self.missing_side = missing_side
        self._tf = _transforms(family, self.P_o, self.w, missing_side)

    @classmethod
    def create(cls, family, hidden, omega0, seed, P_o=1.0, delta=0.01,
               missing_side="none", phi_hidden=None):
        """Fresh bundle; per-net seeds derive from `seed` in role order."""
        n_in = FAMILY_NET_INPUT[family]
        roles = FAMILY_FIELDS[family]
        sizes = (n_in,) + tuple(hidden) + (1,)
        psi = NetGroup(sizes, omega0, roles).init_siren(
            [seed * 1000 + i for i in range(len(roles))])
        phi_sizes = (n_in,) + tuple(phi_hidden or hidden) + (1,)
        phi = NetGroup(phi_sizes, omega0, ("phi",)).init_siren([seed * 1000 + len(roles)])
        return cls(family, psi, phi, P_o=P_o, delta=delta, missing_side=missing_side)

    def bind(self, tape):
        return BoundBundle(self, tape, self.psi.bind(tape), self.phi.bind(tape))

    def field(self, name):
        if name == "phi":
            return ConstrainedField(self.phi.net(0), self.family, "phi",
                                    self.P_o, self.w, self.missing_side)
        g = FAMILY_FIELDS[self.family].index(name)
        return ConstrainedField(self.psi.net(g), self.family, name,
                                self.P_o, self.w, self.missing_side)

    def evaluate(self, coords, duals=True):
        """All constrained fields at points; dict name -> (val, dx1, dx2)."""
        coords = np.asarray(coords, dtype=np.float64)
        check_in_domain(self.family, coords)
        tape = ad.Tape()
        bound = self.bind(tape)
        recs = bound.eval_fields(tape, coords, duals=duals)
        return {k: ad.spatial_derivatives(r) for k, r in recs.items()}

    def phi_values(self, coords):
        """Off-tape constrained phi values (band scans)."""
        coords = np.asarray(coords, dtype=np.float64)
        raw = self._phi_raw_values(coords)
        return self._phi_transform_values(coords, raw)

    def _embed_values(self, coords):
        if self.family == "layer":
            x1 = coords[:, 0:1]
            return np.concatenate(
                [np.cos(TAU * x1), np.sin(TAU * x1), coords[:, 1:2]], axis=-1)
        return coords

    def _phi_raw_values(self, coords):
        return self.phi.values(self._embed_values(coords))[0]

    def _phi_transform_values(self, coords, raw):
        x1, x2 = coords[:, 0], coords[:, 1]
        w = self.w
        if self.family in ("matrix", "matrix-hyper"):
            return (x1 * x1 - 0.25) * (x2 * x2 - 0.25) * raw + w
        if self.family == "mit":
            return (x1 * x1 - 1.0) * (x2 * x2 - 0.25) * raw + w
        if self.family == "layer":
            return x2 * (x2 + 0.5) * raw + w * (4.0 * x2 + 1.0)
        if self.family == "thermal":
            return x1 * (1.0 - x1) * x2 * (1.0 - x2) * raw + w
        raise ConfigError(self.family)


class BoundBundle:
    def __init__(self, bundle, tape, psi_bound, phi_bound):
        self.bundle = bundle
        self.tape = tape
        self.psi = psi_bound
        self.phi = phi_bound
        self.n_psi = psi_bound.n_params
        self.n_phi = phi_bound.n_params
        self.n_params = self.n_psi + self.n_phi

    def leaves(self):
        yield from self.psi.leaves()
        for rec, off, size in self.phi.leaves():
            yield rec, off + self.n_psi, size

    def eval_fields(self, tape, coords, duals=True, with_phi=True, only=None):
        """Constrained field Recs at coords; duals carried when requested."""
        x = tape.spatial(coords) if duals else tape.plain(coords)
        b = self.bundle
        parts = _PARTS[b.family](tape, x)
        out = {}
        roles = FAMILY_FIELDS[b.family]
        if only is None or any(r in only for r in roles):
            psi_out = self.psi.forward(parts["embed"])
            for g, name in enumerate(roles):
                if only is not None and name not in only:
                    continue
                raw = ad.take_row(psi_out, g)
                fn = b._tf.get(name)
                out[name] = raw if fn is None else fn(parts, raw)
        if with_phi and (only is None or "phi" in only):
            raw = ad.take_row(self.phi.forward(parts["embed"]), 0)
            out["phi"] = b._tf["phi"](parts, raw)
        return out


# ---------------------------------------------------------------------------
# checkpoint format: text header, then little-endian f64 parameter payload

MAGIC = "TOPINN-NET v1"


def save_net(path, net: SirenNet):
    header = (f"{MAGIC}\n"
              f"role {net.role}\n"
              f"omega0 {net.omega0!r}\n"
              f"sizes {' '.join(str(s) for s in net.sizes)}\n"
              f"order W1 b1 ... row-major\n"
              f"payload little-endian f64 {net.params.n_params}\n"
              f"END\n")
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(net.params.flat().astype("<f8").tobytes())


def load_net(path) -> SirenNet:
    with open(path, "rb") as f:
        blob = f.read()
    end = blob.index(b"END\n") + 4
    lines = blob[:end].decode("ascii").splitlines()
    if lines[0] != MAGIC:
        raise ConfigError(f"{path}: not a network checkpoint")
    fields = {}
    for ln in lines[1:-1]:
        key, _, rest = ln.partition(" ")
        fields[key] = rest
    sizes = tuple(int(s) for s in fields["sizes"].split())
    omega0 = float(fields["omega0"])
    n = int(fields["payload"].split()[-1])
    theta = np.frombuffer(blob[end:], dtype="<f8", count=n).astype(np.float64)
    group = NetGroup(sizes, omega0, (fields["role"],), theta=theta.copy())
    return group.net(0)
