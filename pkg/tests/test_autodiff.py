"""Tape engine checks against central finite differences.

The FD oracle here is the reference for every gradient in the package: if
these pass, derivative bugs elsewhere are in the physics algebra, not the
engine.
"""

import numpy as np
import pytest

from topinn import autodiff as ad


class FlatParams:
    """Minimal BoundParams stand-in: one flat vector over several leaves."""

    def __init__(self, tape, arrays):
        self.recs = [tape.param(a) for a in arrays]
        self.offsets = []
        off = 0
        for a in arrays:
            self.offsets.append(off)
            off += a.size
        self.n_params = off

    def leaves(self):
        for rec, off in zip(self.recs, self.offsets):
            yield rec, off, rec.val.size


def fd_gradient(f, theta, h=1e-5):
    g = np.zeros_like(theta)
    for i in range(theta.size):
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += h
        tm[i] -= h
        g[i] = (f(tp) - f(tm)) / (2 * h)
    return g


def split(theta, shapes):
    out = []
    off = 0
    for s in shapes:
        n = int(np.prod(s))
        out.append(theta[off:off + n].reshape(s))
        off += n
    return out


def test_square_gradient():
    tape = ad.Tape()
    th = tape.param(np.array(3.0))
    loss = ad.vsum(ad.mul(th, th))
    tape.backward(loss)
    assert tape.grad(th) == pytest.approx(6.0, abs=0)


def test_sin_gradient_at_zero():
    tape = ad.Tape()
    th = tape.param(np.array(0.0))
    tape.backward(ad.vsum(ad.sin(th)))
    assert tape.grad(th) == pytest.approx(1.0, abs=0)


def test_spatial_duals_trivial():
    tape = ad.Tape()
    x = tape.spatial(np.array([[0.0, 0.7]]))
    x1 = ad.squeeze_last(ad.slice_cols(x, 0, 1))
    v, d1, d2 = ad.spatial_derivatives(ad.sin(x1))
    assert v[0] == 0.0 and d1[0] == 1.0 and d2[0] == 0.0

    tape = ad.Tape()
    x = tape.spatial(np.array([[2.0, 3.0]]))
    x1 = ad.squeeze_last(ad.slice_cols(x, 0, 1))
    x2 = ad.squeeze_last(ad.slice_cols(x, 1, 2))
    v, d1, d2 = ad.spatial_derivatives(ad.mul(x1, x2))
    assert (v[0], d1[0], d2[0]) == (6.0, 3.0, 2.0)


def _composite_loss(tape, theta_arrays, coords):
    """Exercises every primitive the residual pipelines use."""
    W1, b1, W2, b2, w3 = theta_arrays
    p = FlatParams(tape, [W1, b1, W2, b2, w3])
    rW1, rb1, rW2, rb2, rw3 = p.recs
    x = tape.spatial(coords)
    x1 = ad.slice_cols(x, 0, 1)
    x2 = ad.slice_cols(x, 1, 2)
    emb = ad.concat([ad.cos(ad.scale(x1, 2 * np.pi)), ad.sin(ad.scale(x1, 2 * np.pi)), x2])
    h = ad.sin(ad.linear(emb, rW1, rb1, wscale=10.0))
    h = ad.sin(ad.linear(h, rW2, rb2))
    y = ad.squeeze_last(ad.linear(h, rw3))
    yv, y1, y2 = ad.value_part(y), ad.dx1_part(y), ad.dx2_part(y)
    rho = ad.sigmoid(ad.scale(y, 1.0 / 0.01))
    rv = ad.value_part(rho)
    gnorm = ad.sqrt(ad.addc(ad.add(ad.mul(y1, y1), ad.mul(y2, y2)), 1e-24))
    r1 = ad.mul(ad.addc(gnorm, -1.0), ad.addc(gnorm, -1.0))
    r2 = ad.mul(rv, ad.exp(ad.scale(yv, 0.1)))
    r3 = ad.absval(ad.sub(yv, ad.log(ad.addc(ad.mul(rv, rv), 1.0))))
    r4 = ad.recip(ad.addc(ad.mul(yv, yv), 2.0))
    d = ad.detreg(ad.scale(yv, 1e-16), 1e-12)
    r5 = ad.mul(d, d)
    total = ad.vmean(r1) + ad.vmean(r2) + ad.vmean(r3) + ad.vmean(r4) + ad.vmean(r5)
    return total, p


SHAPES = [(7, 3), (7,), (7, 7), (7,), (1, 7)]


def _loss_of(theta, coords):
    tape = ad.Tape()
    loss, _ = _composite_loss(tape, split(theta, SHAPES), coords)
    return float(loss.val)


@pytest.mark.parametrize("seed", range(8))
def test_composite_gradient_matches_fd(seed):
    rng = np.random.default_rng(seed)
    theta = rng.uniform(-0.8, 0.8, size=sum(int(np.prod(s)) for s in SHAPES))
    coords = rng.uniform(-0.5, 0.5, size=(11, 2))
    tape = ad.Tape()
    loss, p = _composite_loss(tape, split(theta, SHAPES), coords)
    g = ad.grad_params(loss, p)
    g_fd = fd_gradient(lambda t: _loss_of(t, coords), theta)
    scale = np.maximum(np.abs(g_fd), 1e-8)
    rel = np.abs(g - g_fd) / scale
    assert rel.max() <= 1e-6, f"worst rel err {rel.max():.3e}"


@pytest.mark.parametrize("seed", range(4))
def test_spatial_duals_match_fd(seed):
    rng = np.random.default_rng(100 + seed)
    theta = rng.uniform(-0.8, 0.8, size=sum(int(np.prod(s)) for s in SHAPES))
    coords = rng.uniform(-0.4, 0.4, size=(5, 2))
    h = 1e-6

    def value_at(c):
        tape = ad.Tape()
        W1, b1, W2, b2, w3 = split(theta, SHAPES)
        p = FlatParams(tape, [W1, b1, W2, b2, w3])
        x = tape.spatial(c)
        x1 = ad.slice_cols(x, 0, 1)
        x2 = ad.slice_cols(x, 1, 2)
        emb = ad.concat([ad.cos(ad.scale(x1, 2 * np.pi)),
                         ad.sin(ad.scale(x1, 2 * np.pi)), x2])
        hdn = ad.sin(ad.linear(emb, p.recs[0], p.recs[1], wscale=10.0))
        hdn = ad.sin(ad.linear(hdn, p.recs[2], p.recs[3]))
        return ad.squeeze_last(ad.linear(hdn, p.recs[4]))

    y = value_at(coords)
    _, d1, d2 = ad.spatial_derivatives(y)
    for k, d in ((0, d1), (1, d2)):
        cp = coords.copy()
        cm = coords.copy()
        cp[:, k] += h
        cm[:, k] -= h
        fd = (value_at(cp).val - value_at(cm).val) / (2 * h)
        rel = np.abs(d - fd) / np.maximum(np.abs(fd), 1e-8)
        assert rel.max() <= 1e-6


def test_gradient_linearity():
    rng = np.random.default_rng(7)
    th_val = rng.normal(size=9)

    def build(tape):
        th = tape.param(th_val)
        f = ad.vmean(ad.mul(ad.sin(th), th))
        g = ad.vmean(ad.exp(ad.scale(th, 0.3)))
        return th, f, g

    a, b = 2.5, -1.25
    tape = ad.Tape()
    th, f, g = build(tape)
    tape.backward(ad.add(ad.scale(f, a), ad.scale(g, b)))
    lhs = tape.grad(th).copy()

    tape = ad.Tape()
    th, f, g = build(tape)
    tape.backward(f)
    gf = tape.grad(th).copy()
    tape = ad.Tape()
    th, f, g = build(tape)
    tape.backward(g)
    gg = tape.grad(th).copy()
    rhs = a * gf + b * gg
    assert np.max(np.abs(lhs - rhs)) <= 1e-14 * np.max(np.abs(rhs))


def test_sigmoid_dual_chain_rule():
    # density chain: d(rho) = rho(1-rho)/delta * d(phi), checked to 1e-12
    rng = np.random.default_rng(3)
    delta = 0.01
    tape = ad.Tape()
    x = tape.spatial(rng.uniform(-0.5, 0.5, size=(1000, 2)))
    x1 = ad.squeeze_last(ad.slice_cols(x, 0, 1))
    x2 = ad.squeeze_last(ad.slice_cols(x, 1, 2))
    phi = ad.add(ad.mul(ad.sin(ad.scale(x1, 3.0)), x2), ad.scale(x1, 0.05))
    rho = ad.sigmoid(ad.scale(phi, 1.0 / delta))
    rv, r1, r2 = ad.spatial_derivatives(rho)
    _, p1, p2 = ad.spatial_derivatives(phi)
    want1 = rv * (1 - rv) / delta * p1
    want2 = rv * (1 - rv) / delta * p2
    assert np.max(np.abs(r1 - want1)) <= 1e-12
    assert np.max(np.abs(r2 - want2)) <= 1e-12


def test_untouched_params_get_exact_zero():
    tape = ad.Tape()
    used = tape.param(np.array([1.0, 2.0]))
    unused = tape.param(np.array([5.0, 5.0, 5.0]))
    loss = ad.vsum(ad.mul(used, used))
    tape.backward(loss)
    assert np.array_equal(tape.grad(unused), np.zeros(3))
    assert np.array_equal(tape.grad(used), np.array([2.0, 4.0]))


def test_cross_tape_raises():
    t1, t2 = ad.Tape(), ad.Tape()
    a = t1.param(np.array(1.0))
    b = t2.param(np.array(2.0))
    with pytest.raises(ad.TapeError):
        ad.add(a, b)


def test_backward_requires_scalar():
    tape = ad.Tape()
    a = tape.param(np.array([1.0, 2.0]))
    with pytest.raises(ad.TapeError):
        tape.backward(ad.mul(a, a))


def test_foreign_leaf_in_grad_params():
    t1, t2 = ad.Tape(), ad.Tape()
    loss_tape_param = t1.param(np.array(1.0))
    loss = ad.vsum(ad.mul(loss_tape_param, loss_tape_param))

    class Foreign:
        n_params = 1
        def leaves(self):
            yield t2.param(np.array(1.0)), 0, 1

    with pytest.raises(ad.TapeError):
        ad.grad_params(loss, Foreign())


def test_replay_is_bit_exact():
    rng = np.random.default_rng(11)
    theta = rng.uniform(-0.8, 0.8, size=sum(int(np.prod(s)) for s in SHAPES))
    coords = rng.uniform(-0.5, 0.5, size=(17, 2))
    tape = ad.Tape()
    _composite_loss(tape, split(theta, SHAPES), coords)
    assert tape.replay()


def test_detreg_counts_and_regularizes():
    tape = ad.Tape()
    d = tape.param(np.array([1e-15, -1e-15, 0.5, 0.0]))
    r = ad.detreg(d, 1e-12)
    assert tape.n_degenerate == 3
    assert r.val[0] == pytest.approx(1e-12, rel=1e-3)
    assert r.val[1] == pytest.approx(-1e-12, rel=1e-3)
    assert r.val[2] == 0.5
    assert r.val[3] == 1e-12  # sign(0) counts as +1


def test_stacked_linear_matches_per_net():
    # evaluating G same-shaped nets through one stacked leaf must equal
    # per-net evaluation, values and gradients both
    rng = np.random.default_rng(5)
    G, B, q = 3, 10, 4
    Ws = rng.normal(size=(G, q, 2))
    bs = rng.normal(size=(G, 1, q))
    coords = rng.uniform(-0.5, 0.5, size=(B, 2))

    tape = ad.Tape()
    Wr = tape.param(Ws)
    br = tape.param(bs)
    x = tape.spatial(coords)
    y = ad.sin(ad.linear(x, Wr, br))           # (G, B, q)
    loss = ad.vmean(ad.mul(y, y))
    tape.backward(loss)
    g_stack_W = tape.grad(Wr).copy()
    g_stack_b = tape.grad(br).copy()

    for g in range(G):
        tape = ad.Tape()
        Wg = tape.param(Ws[g])
        bg = tape.param(bs[g, 0])
        x = tape.spatial(coords)
        yg = ad.sin(ad.linear(x, Wg, bg))       # (B, q)
        # same mean normalization as the stacked loss
        tape.backward(ad.scale(ad.vsum(ad.mul(yg, yg)), 1.0 / (G * B * q)))
        assert np.allclose(tape.grad(Wg), g_stack_W[g], rtol=1e-13, atol=1e-16)
        assert np.allclose(tape.grad(bg), g_stack_b[g, 0], rtol=1e-13, atol=1e-16)
