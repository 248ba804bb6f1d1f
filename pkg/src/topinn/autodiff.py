"""Computational-graph engine: reverse-mode over parameters, forward-mode in space.

The mixed formulation only ever needs first derivatives of network outputs
with respect to the two spatial coordinates, so every recorded value carries
an optional pair of forward-mode dual arrays (d1, d2) alongside its value
array.  Reverse mode then runs over the whole (value, d1, d2) triple: the
backward rule of each primitive propagates adjoints of the dual slots as well
as of the value slot, which is what makes parameter gradients of
derivative-based losses (equilibrium residuals, eikonal term) exact.

Everything is float64.  Arrays recorded on a tape are treated as immutable;
no primitive writes to its operands.  A tape is single-owner, built per
mini-batch and discarded after the update.  Replaying a tape re-executes the
recorded forward pass and must reproduce every value bit-for-bit.
"""

from __future__ import annotations

import numpy as np


class TapeError(Exception):
    """Structural misuse: cross-tape operands, unregistered leaves, bad shapes."""


class Node:
    __slots__ = ("op", "parents", "aux", "ctx", "rec", "bwd", "kind")

    def __init__(self, op, parents, aux, ctx, rec, bwd, kind):
        self.op = op            # primitive name, for replay dispatch
        self.parents = parents  # tuple of node indices
        self.aux = aux          # static payload (scalars, slices, shapes)
        self.ctx = ctx          # forward-computed arrays reused by backward
        self.rec = rec
        self.bwd = bwd
        self.kind = kind        # 'c' const, 'p' param, 'x' spatial leaf, 'o' op


class Rec:
    """A value recorded on a tape: ndarray plus optional spatial duals."""

    __slots__ = ("tape", "idx", "val", "d1", "d2")

    # keep ndarray OP Rec from building object arrays; numpy defers to our
    # reflected operators instead
    __array_ufunc__ = None

    def __init__(self, tape, idx, val, d1=None, d2=None):
        self.tape = tape
        self.idx = idx
        self.val = val
        self.d1 = d1
        self.d2 = d2

    @property
    def shape(self):
        return self.val.shape

    def has_duals(self):
        return self.d1 is not None

    # arithmetic sugar; scalars fold into scale/addc nodes
    def __add__(self, other):
        if isinstance(other, Rec):
            return add(self, other)
        return addc(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Rec):
            return sub(self, other)
        return addc(self, -float(other))

    def __rsub__(self, other):
        return addc(neg(self), float(other))

    def __mul__(self, other):
        if isinstance(other, Rec):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Rec):
            return mul(self, recip(other))
        return scale(self, 1.0 / float(other))

    def __rtruediv__(self, other):
        return scale(recip(self), float(other))

    def __neg__(self):
        return neg(self)


def _f64(a):
    return np.asarray(a, dtype=np.float64)


def _unb(g, shape):
    # reduce a broadcast gradient back to the operand's shape
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Tape:
    """Append-only record of primitive operations, topologically ordered."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.n_degenerate = 0   # detreg hit counter, reset per tape

    # ---- leaves ----

    def _leaf(self, val, d1, d2, kind):
        idx = len(self.nodes)
        rec = Rec(self, idx, val, d1, d2)
        self.nodes.append(Node(kind, (), None, None, rec, None, kind))
        return rec

    def const(self, val):
        return self._leaf(_f64(val), None, None, "c")

    def param(self, val):
        """Register a trainable leaf; gradients are collected for it."""
        return self._leaf(_f64(val), None, None, "p")

    def spatial(self, coords):
        """Coordinate leaf (B, 2) seeded with duals (1,0) and (0,1)."""
        coords = _f64(coords)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise TapeError(f"spatial leaf expects (n, 2) coordinates, got {coords.shape}")
        n = coords.shape[0]
        d1 = np.zeros((n, 2))
        d1[:, 0] = 1.0
        d2 = np.zeros((n, 2))
        d2[:, 1] = 1.0
        return self._leaf(coords, d1, d2, "x")

    def plain(self, coords):
        """Coordinate leaf without duals (value-only forward passes)."""
        return self._leaf(_f64(coords), None, None, "x")

    # ---- recording ----

    def _record(self, op, parents, aux, ctx, val, d1, d2):
        for p in parents:
            if p.tape is not self:
                raise TapeError(f"operand of '{op}' belongs to a different tape")
        idx = len(self.nodes)
        rec = Rec(self, idx, val, d1, d2)
        self.nodes.append(Node(op, tuple(p.idx for p in parents), aux, ctx, rec, _BWD[op], "o"))
        return rec

    # ---- backward ----

    def backward(self, loss):
        """Accumulate adjoints of `loss` (a scalar Rec on this tape) into every node."""
        if loss.tape is not self:
            raise TapeError("loss was recorded on a different tape")
        if loss.val.ndim != 0:
            raise TapeError(f"loss must be scalar, has shape {loss.val.shape}")
        n = len(self.nodes)
        self._adj = [[None] * n, [None] * n, [None] * n]
        self._own = [bytearray(n), bytearray(n), bytearray(n)]
        self._adj[0][loss.idx] = np.ones(())
        self._own[0][loss.idx] = 1
        nodes = self.nodes
        adjv, adj1, adj2 = self._adj
        for i in range(loss.idx, -1, -1):
            node = nodes[i]
            if node.bwd is None:
                continue
            gv, g1, g2 = adjv[i], adj1[i], adj2[i]
            if gv is None and g1 is None and g2 is None:
                continue
            node.bwd(self, node, gv, g1, g2)

    def _acc(self, j, slot, arr, fresh):
        # fresh=False marks a borrowed reference (a view of someone's adjoint
        # or forward array); it must not be mutated in place later.
        node = self.nodes[j]
        if node.kind == "c" or (node.kind == "x" and slot > 0):
            return
        cur = self._adj[slot][j]
        if cur is None:
            self._adj[slot][j] = arr
            self._own[slot][j] = 1 if fresh else 0
        elif self._own[slot][j]:
            cur += arr
            self._adj[slot][j] = cur   # 0-d ops yield immutable scalars
        else:
            self._adj[slot][j] = cur + arr
            self._own[slot][j] = 1

    def grad(self, rec):
        """Adjoint of the value slot of `rec` after backward(); exact 0 if untouched."""
        g = self._adj[0][rec.idx]
        if g is None:
            return np.zeros(rec.val.shape)
        if g.shape != rec.val.shape:
            g = np.broadcast_to(g, rec.val.shape).copy()
        return g

    # ---- replay ----

    def replay(self):
        """Re-execute the forward pass; verify values reproduce bit-for-bit."""
        vals = {}
        for i, node in enumerate(self.nodes):
            if node.bwd is None:
                vals[i] = (node.rec.val, node.rec.d1, node.rec.d2)
            else:
                parents = [vals[p] for p in node.parents]
                vals[i] = _FWD[node.op](parents, node.aux)
                got, want = vals[i], (node.rec.val, node.rec.d1, node.rec.d2)
                for g, w in zip(got, want):
                    if (g is None) != (w is None):
                        raise TapeError(f"replay dual mismatch at node {i} ({node.op})")
                    if g is not None and not np.array_equal(g, w, equal_nan=True):
                        raise TapeError(f"replay value mismatch at node {i} ({node.op})")
        return True


# ---------------------------------------------------------------------------
# primitives
#
# Each op has a forward builder (records the node) plus entries in _FWD
# (pure recompute for replay) and _BWD (adjoint propagation).  Notation in
# the backward rules: gv/g1/g2 are the adjoints of the output's value and
# dual slots; u1, u2 are the operand's recorded duals.


def _dual_map(f, *recs):
    # elementwise duals: apply f to each dual slot that exists
    if not any(r.has_duals() for r in recs):
        return None, None
    def pick(r, k):
        d = r.d1 if k == 1 else r.d2
        return d
    outs = []
    for k in (1, 2):
        outs.append(f(*[pick(r, k) for r in recs]))
    return outs[0], outs[1]


def add(u, w):
    def fd(du, dw):
        if du is None:
            return dw
        if dw is None:
            return du
        return du + dw
    d1, d2 = _dual_map(fd, u, w)
    return u.tape._record("add", (u, w), None, None, u.val + w.val, d1, d2)


def _bwd_add(tape, node, gv, g1, g2):
    iu, iw = node.parents
    u, w = tape.nodes[iu].rec, tape.nodes[iw].rec
    for g, slot in ((gv, 0), (g1, 1), (g2, 2)):
        if g is None:
            continue
        for r, i in ((u, iu), (w, iw)):
            if slot > 0 and (r.d1 is None):
                continue
            gu = _unb(g, r.val.shape)
            tape._acc(i, slot, gu, fresh=gu is not g)


def sub(u, w):
    def fd(du, dw):
        if du is None:
            return -dw
        if dw is None:
            return du
        return du - dw
    d1, d2 = _dual_map(fd, u, w)
    return u.tape._record("sub", (u, w), None, None, u.val - w.val, d1, d2)


def _bwd_sub(tape, node, gv, g1, g2):
    iu, iw = node.parents
    u, w = tape.nodes[iu].rec, tape.nodes[iw].rec
    for g, slot in ((gv, 0), (g1, 1), (g2, 2)):
        if g is None:
            continue
        if slot == 0 or u.d1 is not None:
            gu = _unb(g, u.val.shape)
            tape._acc(iu, slot, gu, fresh=gu is not g)
        if slot == 0 or w.d1 is not None:
            tape._acc(iw, slot, _unb(-g, w.val.shape), fresh=True)


def neg(u):
    d1, d2 = _dual_map(lambda d: None if d is None else -d, u)
    return u.tape._record("neg", (u,), None, None, -u.val, d1, d2)


def _bwd_neg(tape, node, gv, g1, g2):
    (iu,) = node.parents
    for g, slot in ((gv, 0), (g1, 1), (g2, 2)):
        if g is not None:
            tape._acc(iu, slot, -g, fresh=True)


def scale(u, c):
    d1, d2 = _dual_map(lambda d: None if d is None else d * c, u)
    return u.tape._record("scale", (u,), c, None, u.val * c, d1, d2)


def _bwd_scale(tape, node, gv, g1, g2):
    (iu,) = node.parents
    c = node.aux
    for g, slot in ((gv, 0), (g1, 1), (g2, 2)):
        if g is not None:
            tape._acc(iu, slot, g * c, fresh=True)


def addc(u, c):
    # duals unchanged: borrow the parent's arrays
    return u.tape._record("addc", (u,), c, None, u.val + c, u.d1, u.d2)


def _bwd_addc(tape, node, gv, g1, g2):
    (iu,) = node.parents
    for g, slot in ((gv, 0), (g1, 1), (g2, 2)):
        if g is not None:
            tape._acc(iu, slot, g, fresh=False)


def mul(u, w):
    uv, wv = u.val, w.val
    def fd(du, dw):
        if du is None:
            return uv * dw
        if dw is None:
            return du * wv
        return du * wv + uv * dw
    d1, d2 = _dual_map(fd, u, w)
    return u.tape._record("mul", (u, w), None, None, uv * wv, d1, d2)


def _bwd_mul(tape, node, gv, g1, g2):
    iu, iw = node.parents
    u, w = tape.nodes[iu].rec, tape.nodes[iw].rec
    # value adjoints: gv·w + sum_k gk·(dual cross term)
    for a, b, ia in ((u, w, iu), (w, u, iw)):
        cv = None
        if gv is not None:
            cv = gv * b.val
        for g, db in ((g1, b.d1), (g2, b.d2)):
            if g is not None and db is not None:
                cv = g * db if cv is None else cv + g * db
        if cv is not None:
            tape._acc(ia, 0, _unb(cv, a.val.shape), fresh=True)
        if a.d1 is not None:
            for g, slot in ((g1, 1), (g2, 2)):
                if g is not None:
                    tape._acc(ia, slot, _unb(g * b.val, a.val.shape), fresh=True)


def recip(u):
    yv = 1.0 / u.val
    y2 = yv * yv
    d1, d2 = _dual_map(lambda d: None if d is None else -d * y2, u)
    return u.tape._record("recip", (u,), None, (yv, y2), yv, d1, d2)


def _bwd_recip(tape, node, gv, g1, g2):
    (iu,) = node.parents
    u = tape.nodes[iu].rec
    yv, y2 = node.ctx
    cv = None
    if gv is not None:
        cv = -gv * y2
    # d(yk)/d(uv) = 2 uk / uv^3 = 2 uk yv^3
    y3 = y2 * yv
    for g, uk in ((g1, u.d1), (g2, u.d2)):
        if g is not None and uk is not None:
            t = 2.0 * g * uk * y3
            cv = t if cv is None else cv + t
    if cv is not None:
        tape._acc(iu, 0, cv, fresh=True)
    if u.d1 is not None:
        for g, slot in ((g1, 1), (g2, 2)):
            if g is not None:
                tape._acc(iu, slot, -g * y2, fresh=True)


def sin(u):
    c = np.cos(u.val)
    d1, d2 = _dual_map(lambda d: None if d is None else d * c, u)
    return u.tape._record("sin", (u,), None, c, np.sin(u.val), d1, d2)


def _bwd_sin(tape, node, gv, g1, g2):
    (iu,) = node.parents
    u = tape.nodes[iu].rec
    c = node.ctx
    cv = gv * c if gv is not None else None
    if u.d1 is not None:
        s = node.rec.val              # forward already holds sin(u)
        for g, uk in ((g1, u.d1), (g2, u.d2)):
            if g is not None:
                t = -g * uk * s
                cv = t if cv is None else cv + t
        for g, slot in ((g1, 1), (g2, 2)):
            if g is not None:
                tape._acc(iu, slot, g * c, fresh=True)
    if cv is not None:
        tape._acc(iu, 0, cv, fresh=True)


def cos(u):
    s = np.sin(u.val)
    d1, d2 = _dual_map(lambda d: None if d is None else -d * s, u)
    return u.tape._record("cos", (u,), None, s, np.cos(u.val), d1, d2)


def _bwd_cos(tape, node, gv, g1, g2):
    (iu,) = node.parents
    u = tape.nodes[iu].rec
    s = node.ctx
    cv = -gv * s if gv is not None else None
    if u.d1 is not None:
        c = node.rec.val              # forward already holds cos(u)
        for g, uk in ((g1, u.d1), (g2, u.d2)):
            if g is not None:
                t = -g * uk * c
                cv = t if cv is None else cv + t
        for g, slot in ((g1, 1), (g2, 2)):
            if g is not None:
                tape._acc(iu, slot, -g * s, fresh=True)
    if cv is not None:
        tape._acc(iu, 0, cv, fresh=True)


def exp(u):
    yv = np.exp(u.val)
    d1, d2 = _dual_map(lambda d: None if d is None else d * yv, u)
    return u.tape._record("exp", (u,), None, yv, yv, d1, d2)


def _bwd_exp(tape, node, gv, g1, g2):
    (iu,) = node.parents
    u = tape.nodes[iu].rec
    yv = node.ctx
    cv = gv * yv if gv is not None else None
    for g, uk in ((g1, u.d1), (g2, u.d2)):
        if g is not None and uk is not None:
            t = g * uk * yv
            cv = t if cv is None else cv + t
    if cv is not None:
        tape._acc(iu, 0, cv, fresh=True)
    if u.d1 is not None:
        for g, slot in ((g1, 1), (g2, 2)):
            if g is not None:
                tape._acc(iu, slot, g * yv, fresh=True)


def log(u):
    inv = 1.0 / u.val
    d1, d2 = _dual_map(lambda d: None if d is None else d * inv, u)
    return u.tape._record("log", (u,), None, inv, np.log(u.val), d1, d2)


def _bwd_log(tape, node, gv, g1, g2):
    (iu,) = node.parents
    u = tape.nodes[iu].rec
    inv = node.ctx
    cv = gv * inv if gv is not None else None
    for g, uk in ((g1, u.d1), (g2, u.d2)):
        if g is not None and uk is not None:
            t = -g * uk * inv * inv
            cv = t if cv is None else cv + t
    if cv is not None:
        tape._acc(iu, 0, cv, fresh=True)
    if u.d1 is not None:
        for g, slot in ((g1, 1), (g2, 2)):
            if g is not None:
                tape._acc(iu, slot, g * inv, fresh=True)


def sqrt(u):
    yv = np.sqrt(u.val)
    half_inv = 0.5 / yv
    d1, d2 = _dual_map(lambda d: None if d is None else d * half_inv, u)
    return u.tape._record("sqrt", (u,), None, (yv, half_inv), yv, d1, d2)


def _bwd_sqrt(tape, node, gv, g1, g2):
    (iu,) = node.parents
    u = tape.nodes[iu].rec
    yv, half_inv = node.ctx
    cv = gv * half_inv if gv is not None else None
    for g, uk in ((g1, u.d1), (g2, u.d2)):
        if g is not None and uk is not None:
            # d(uk/(2 sqrt(uv)))/d(uv) = -uk / (4 uv^{3/2})
            t = -g * uk * (half_inv / u.val) * 0.5
            cv = t if cv is None else cv + t
    if cv is not None:
        tape._acc(iu, 0, cv, fresh=True)
    if u.d1 is not None:
        for g, slot in ((g1, 1), (g2, 2)):
            if g is not None:
                tape._acc(iu, slot, g * half_inv, fresh=True)


def absval(u):
    s = np.sign(u.val)
    d1, d2 = _dual_map(lambda d: None if d is None else d * s, u)
    return u.tape._record("abs", (u,), None, s, np.abs(u.val), d1, d2)


def _bwd_abs(tape, node, gv, g1, g2):
    (iu,) = node.parents
    u = tape.nodes[iu].rec
    s = node.ctx
    if gv is not None:
        tape._acc(iu, 0, gv * s, fresh=True)
    if u.d1 is not None:
        for g, slot in ((g1, 1), (g2, 2)):
            if g is not None:
                tape._acc(iu, slot, g * s, fresh=True)


def _stable_sigmoid(z):
    # exp never sees a positive argument, so no overflow in either tail
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(u):
    yv = _stable_sigmoid(u.val)
    sp = yv * (1.0 - yv)
    d1, d2 = _dual_map(lambda d: None if d is None else d * sp, u)
    return u.tape._record("sigmoid", (u,), None, (yv, sp), yv, d1, d2)


def _bwd_sigmoid(tape, node, gv, g1, g2):
    (iu,) = node.parents
    u = tape.nodes[iu].rec
    yv, sp = node.ctx
    cv = gv * sp if gv is not None else None
    if u.d1 is not None:
        spp = sp * (1.0 - 2.0 * yv)   # second derivative of the logistic
        for g, uk in ((g1, u.d1), (g2, u.d2)):
            if g is not None:
                t = g * uk * spp
                cv = t if cv is None else cv + t
        for g, slot in ((g1, 1), (g2, 2)):
            if g is not None:
                tape._acc(iu, slot, g * sp, fresh=True)
    if cv is not None:
        tape._acc(iu, 0, cv, fresh=True)


def linear(z, W, b=None, wscale=1.0):
    """Affine layer y = wscale·(z Wᵀ) + b.

    W is stored row-major (out, in) per checkpoint convention, possibly with a
    leading stack axis (G, out, in) for evaluating same-shaped networks
    together; z is (..., B, in); b broadcasts against (..., B, out).
    """
    WT = np.swapaxes(W.val, -1, -2)
    yv = np.matmul(z.val, WT)
    if wscale != 1.0:
        yv = yv * wscale
    if b is not None:
        yv = yv + b.val
    def fd(dz):
        if dz is None:
            return None
        out = np.matmul(dz, WT)
        return out * wscale if wscale != 1.0 else out
    d1 = fd(z.d1)
    d2 = fd(z.d2)
    parents = (z, W) if b is None else (z, W, b)
    return z.tape._record("linear", parents, wscale, None, yv, d1, d2)


def _bwd_linear(tape, node, gv, g1, g2):
    ps = node.parents
    iz, iW = ps[0], ps[1]
    z, W = tape.nodes[iz].rec, tape.nodes[iW].rec
    c = node.aux
    Wv = W.val
    gW = None
    for g, zk in ((gv, z.val), (g1, z.d1), (g2, z.d2)):
        if g is None:
            continue
        if zk is None:
            continue
        t = np.matmul(np.swapaxes(g, -1, -2), zk)
        gW = t if gW is None else gW + t
    if gW is not None:
        if c != 1.0:
            gW = gW * c
        tape._acc(iW, 0, _unb(gW, Wv.shape), fresh=True)
    for g, slot, has in ((gv, 0, True), (g1, 1, z.d1 is not None), (g2, 2, z.d1 is not None)):
        if g is None or not has:
            continue
        gz = np.matmul(g, Wv)
        if c != 1.0:
            gz = gz * c
        tape._acc(iz, slot, _unb(gz, z.val.shape), fresh=True)
    if len(ps) == 3:
        ib = ps[2]
        b = tape.nodes[ib].rec
        if gv is not None:
            tape._acc(ib, 0, _unb(gv, b.val.shape), fresh=gv.shape != b.val.shape)


def concat(parts):
    """Concatenate along the last axis; dual-less parts contribute zero duals."""
    tape = parts[0].tape
    val = np.concatenate([p.val for p in parts], axis=-1)
    d1 = d2 = None
    if any(p.has_duals() for p in parts):
        def cat(k):
            arrs = []
            for p in parts:
                d = p.d1 if k == 1 else p.d2
                arrs.append(d if d is not None else np.zeros(p.val.shape))
            return np.concatenate(arrs, axis=-1)
        d1, d2 = cat(1), cat(2)
    widths = tuple(p.val.shape[-1] for p in parts)
    return tape._record("concat", tuple(parts), widths, None, val, d1, d2)


def _bwd_concat(tape, node, gv, g1, g2):
    widths = node.aux
    off = 0
    for ip, wdt in zip(node.parents, widths):
        r = tape.nodes[ip].rec
        sl = (Ellipsis, slice(off, off + wdt))
        for g, slot in ((gv, 0), (g1, 1), (g2, 2)):
            if g is None:
                continue
            if slot > 0 and r.d1 is None:
                continue
            tape._acc(ip, slot, g[sl], fresh=False)
        off += wdt


def slice_cols(u, j0, j1):
    """Columns [j0:j1) of the last axis (views; keeps the axis)."""
    sl = (Ellipsis, slice(j0, j1))
    d1 = u.d1[sl] if u.d1 is not None else None
    d2 = u.d2[sl] if u.d2 is not None else None
    return u.tape._record("slicec", (u,), (j0, j1), None, u.val[sl], d1, d2)


def _bwd_slicec(tape, node, gv, g1, g2):
    (iu,) = node.parents
    u = tape.nodes[iu].rec
    j0, j1 = node.aux
    for g, slot in ((gv, 0), (g1, 1), (g2, 2)):
        if g is None:
            continue
        if slot > 0 and u.d1 is None:
            continue
        buf = np.zeros(u.val.shape)
        buf[..., j0:j1] = g
        tape._acc(iu, slot, buf, fresh=True)


def take_row(u, g):
    """Row g along the first axis (stacked-network output selection)."""
    d1 = u.d1[g] if u.d1 is not None else None
    d2 = u.d2[g] if u.d2 is not None else None
    return u.tape._record("takerow", (u,), g, None, u.val[g], d1, d2)


def _bwd_takerow(tape, node, gv, g1, g2):
    (iu,) = node.parents
    u = tape.nodes[iu].rec
    g_idx = node.aux
    for g, slot in ((gv, 0), (g1, 1), (g2, 2)):
        if g is None:
            continue
        if slot > 0 and u.d1 is None:
            continue
        buf = np.zeros(u.val.shape)
        buf[g_idx] = g
        tape._acc(iu, slot, buf, fresh=True)


def squeeze_last(u):
    if u.val.shape[-1] != 1:
        raise TapeError(f"squeeze_last needs trailing axis 1, got {u.val.shape}")
    d1 = u.d1[..., 0] if u.d1 is not None else None
    d2 = u.d2[..., 0] if u.d2 is not None else None
    return u.tape._record("squeeze", (u,), None, None, u.val[..., 0], d1, d2)


def _bwd_squeeze(tape, node, gv, g1, g2):
    (iu,) = node.parents
    u = tape.nodes[iu].rec
    for g, slot in ((gv, 0), (g1, 1), (g2, 2)):
        if g is None:
            continue
        if slot > 0 and u.d1 is None:
            continue
        tape._acc(iu, slot, g[..., None], fresh=False)


def vsum(u):
    return u.tape._record("sum", (u,), None, None, u.val.sum(), None, None)


def _bwd_sum(tape, node, gv, g1, g2):
    (iu,) = node.parents
    u = tape.nodes[iu].rec
    if gv is not None:
        tape._acc(iu, 0, np.broadcast_to(gv, u.val.shape), fresh=False)


def vmean(u):
    n = u.val.size
    return u.tape._record("mean", (u,), n, None, u.val.sum() / n, None, None)


def _bwd_mean(tape, node, gv, g1, g2):
    (iu,) = node.parents
    u = tape.nodes[iu].rec
    if gv is not None:
        tape._acc(iu, 0, np.broadcast_to(gv / node.aux, u.val.shape), fresh=False)


def value_part(u):
    """Drop the duals: the value as a plain recorded quantity."""
    return u.tape._record("vpart", (u,), None, None, u.val, None, None)


def _bwd_vpart(tape, node, gv, g1, g2):
    if gv is not None:
        tape._acc(node.parents[0], 0, gv, fresh=False)


def dx1_part(u):
    if u.d1 is None:
        raise TapeError("dx1_part of a value with no spatial duals")
    return u.tape._record("d1part", (u,), None, None, u.d1, None, None)


def _bwd_d1part(tape, node, gv, g1, g2):
    if gv is not None:
        tape._acc(node.parents[0], 1, gv, fresh=False)


def dx2_part(u):
    if u.d2 is None:
        raise TapeError("dx2_part of a value with no spatial duals")
    return u.tape._record("d2part", (u,), None, None, u.d2, None, None)


def _bwd_d2part(tape, node, gv, g1, g2):
    if gv is not None:
        tape._acc(node.parents[0], 2, gv, fresh=False)


def detreg(u, eps=1e-12):
    """Shift |det| away from zero: u + sign(u)·eps where |u| < eps.

    Keeps F^{-T} finite at transiently degenerate states; hits are counted on
    the tape.  sign(0) counts as +1.  Derivative taken as identity (the shift
    is piecewise constant).
    """
    z = np.abs(u.val) < eps
    tape = u.tape
    tape.n_degenerate += int(z.sum())
    s = np.where(u.val < 0, -1.0, 1.0)
    val = np.where(z, u.val + s * eps, u.val)
    return tape._record("detreg", (u,), eps, None, val, u.d1, u.d2)


def _bwd_detreg(tape, node, gv, g1, g2):
    (iu,) = node.parents
    u = tape.nodes[iu].rec
    for g, slot in ((gv, 0), (g1, 1), (g2, 2)):
        if g is None:
            continue
        if slot > 0 and u.d1 is None:
            continue
        tape._acc(iu, slot, g, fresh=False)


def ipow(u, n: int):
    """Integer power by repeated multiplication (SIMP exponents are tiny)."""
    if n < 1:
        raise TapeError("ipow expects n >= 1")
    y = u
    for _ in range(n - 1):
        y = mul(y, u)
    return y


# replay forward table: parents is a list of (val, d1, d2) triples

def _fwd_elementwise(f, fdual):
    def run(parents, aux):
        (uv, u1, u2) = parents[0]
        yv, ctx = f(uv, aux)
        d1 = fdual(u1, uv, ctx, aux) if u1 is not None else None
        d2 = fdual(u2, uv, ctx, aux) if u2 is not None else None
        return yv, d1, d2
    return run


def _fwd_add(parents, aux):
    (uv, u1, u2), (wv, w1, w2) = parents
    def fd(a, b):
        if a is None and b is None:
            return None
        if a is None:
            return b
        if b is None:
            return a
        return a + b
    return uv + wv, fd(u1, w1), fd(u2, w2)


def _fwd_sub(parents, aux):
    (uv, u1, u2), (wv, w1, w2) = parents
    def fd(a, b):
        if a is None and b is None:
            return None
        if a is None:
            return -b
        if b is None:
            return a
        return a - b
    return uv - wv, fd(u1, w1), fd(u2, w2)


def _fwd_mul(parents, aux):
    (uv, u1, u2), (wv, w1, w2) = parents
    def fd(a, b):
        if a is None and b is None:
            return None
        if a is None:
            return uv * b
        if b is None:
            return a * wv
        return a * wv + uv * b
    return uv * wv, fd(u1, w1), fd(u2, w2)


def _fwd_linear(parents, aux):
    z = parents[0]
    W = parents[1]
    b = parents[2] if len(parents) == 3 else None
    WT = np.swapaxes(W[0], -1, -2)
    yv = np.matmul(z[0], WT)
    if aux != 1.0:
        yv = yv * aux
    if b is not None:
        yv = yv + b[0]
    def fd(dz):
        if dz is None:
            return None
        out = np.matmul(dz, WT)
        return out * aux if aux != 1.0 else out
    return yv, fd(z[1]), fd(z[2])


def _fwd_concat(parents, aux):
    val = np.concatenate([p[0] for p in parents], axis=-1)
    d1 = d2 = None
    if any(p[1] is not None for p in parents):
        def cat(k):
            return np.concatenate(
                [p[k] if p[k] is not None else np.zeros(p[0].shape) for p in parents],
                axis=-1)
        d1, d2 = cat(1), cat(2)
    return val, d1, d2


# the dual recomputation must mirror the recording path's operation order
# exactly, or replay fails the bit-for-bit check

_FWD = {
    "add": _fwd_add,
    "sub": _fwd_sub,
    "mul": _fwd_mul,
    "neg": _fwd_elementwise(lambda v, a: (-v, None), lambda d, v, c, a: -d),
    "scale": _fwd_elementwise(lambda v, a: (v * a, None), lambda d, v, c, a: d * a),
    "addc": _fwd_elementwise(lambda v, a: (v + a, None), lambda d, v, c, a: d),
    "recip": _fwd_elementwise(lambda v, a: ((lambda y: (y, y * y))(1.0 / v)),
                              lambda d, v, c, a: -d * c),
    "sin": _fwd_elementwise(lambda v, a: (np.sin(v), np.cos(v)), lambda d, v, c, a: d * c),
    "cos": _fwd_elementwise(lambda v, a: (np.cos(v), np.sin(v)), lambda d, v, c, a: -d * c),
    "exp": _fwd_elementwise(lambda v, a: ((lambda y: (y, y))(np.exp(v))), lambda d, v, c, a: d * c),
    "log": _fwd_elementwise(lambda v, a: (np.log(v), 1.0 / v), lambda d, v, c, a: d * c),
    "sqrt": _fwd_elementwise(lambda v, a: ((lambda y: (y, 0.5 / y))(np.sqrt(v))),
                             lambda d, v, c, a: d * c),
    "abs": _fwd_elementwise(lambda v, a: (np.abs(v), np.sign(v)), lambda d, v, c, a: d * c),
    "sigmoid": _fwd_elementwise(lambda v, a: ((lambda y: (y, y * (1.0 - y)))(_stable_sigmoid(v))),
                                lambda d, v, c, a: d * c),
    "linear": _fwd_linear,
    "concat": _fwd_concat,
    "slicec": lambda ps, aux: tuple(
        None if p is None else p[(Ellipsis, slice(aux[0], aux[1]))] for p in ps[0]),
    "takerow": lambda ps, aux: tuple(None if p is None else p[aux] for p in ps[0]),
    "squeeze": lambda ps, aux: tuple(None if p is None else p[..., 0] for p in ps[0]),
    "sum": lambda ps, aux: (ps[0][0].sum(), None, None),
    "mean": lambda ps, aux: (ps[0][0].sum() / aux, None, None),
    "vpart": lambda ps, aux: (ps[0][0], None, None),
    "d1part": lambda ps, aux: (ps[0][1], None, None),
    "d2part": lambda ps, aux: (ps[0][2], None, None),
    "detreg": lambda ps, aux: (
        np.where(np.abs(ps[0][0]) < aux,
                 ps[0][0] + np.where(ps[0][0] < 0, -1.0, 1.0) * aux,
                 ps[0][0]),
        ps[0][1], ps[0][2]),
}

_BWD = {
    "add": _bwd_add,
    "sub": _bwd_sub,
    "neg": _bwd_neg,
    "scale": _bwd_scale,
    "addc": _bwd_addc,
    "mul": _bwd_mul,
    "recip": _bwd_recip,
    "sin": _bwd_sin,
    "cos": _bwd_cos,
    "exp": _bwd_exp,
    "log": _bwd_log,
    "sqrt": _bwd_sqrt,
    "abs": _bwd_abs,
    "sigmoid": _bwd_sigmoid,
    "linear": _bwd_linear,
    "concat": _bwd_concat,
    "slicec": _bwd_slicec,
    "takerow": _bwd_takerow,
    "squeeze": _bwd_squeeze,
    "sum": _bwd_sum,
    "mean": _bwd_mean,
    "vpart": _bwd_vpart,
    "d1part": _bwd_d1part,
    "d2part": _bwd_d2part,
    "detreg": _bwd_detreg,
}


# ---------------------------------------------------------------------------
# module-level conveniences


def spatial_derivatives(rec):
    """(value, dx1, dx2) arrays of a recorded quantity; zeros when dual-free."""
    z = np.zeros(rec.val.shape)
    return (rec.val,
            rec.d1 if rec.d1 is not None else z,
            rec.d2 if rec.d2 is not None else z)


def grad_params(loss, params):
    """Gradient of a recorded scalar with respect to bound parameters.

    `params` is anything exposing `n_params` and `leaves()` yielding
    (rec, offset, size) triples (see networks.BoundParams).  Parameters the
    loss never touched get exact zeros.
    """
    tape = loss.tape
    tape.backward(loss)
    out = np.zeros(params.n_params)
    for rec, off, size in params.leaves():
        if rec.tape is not tape:
            raise TapeError("parameter leaf was bound to a different tape")
        out[off:off + size] = tape.grad(rec).ravel()
    return out
