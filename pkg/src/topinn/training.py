"""Sampling, optimization, pretraining and the main training loop.

The loop is fully deterministic given the initialization seeds: collocation
points come from seeded Latin hypercube sampling, mini-batches rotate
sequentially through a fixed partition, and no stochastic operation happens
after initialization. Checkpoints capture parameters plus optimizer moments
so an interrupted run resumes bit-for-bit.
"""

import logging
import os
import shutil

import numpy as np

from . import autodiff as ad
from . import losses as ls
from . import networks as nets
from .errors import ConfigError, SolverError

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6
STATE_MAGIC = "TOPINN-STATE v1"


# ---------------------------------------------------------------------------
# collocation sampling

class CollocationSet:
    """Interior sample points with a fixed sequential mini-batch partition."""

    def __init__(self, points, n_batches, seed):
        self.points = np.asarray(points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ConfigError(f"collocation points must be (N,2), got {self.points.shape}")
        if not (1 <= n_batches <= self.points.shape[0]):
            raise ConfigError(f"bad batch count {n_batches} for {self.points.shape[0]} points")
        self.n_batches = int(n_batches)
        self.seed = seed
        self._splits = np.array_split(np.arange(self.points.shape[0]), self.n_batches)

    @property
    def n_points(self):
        return self.points.shape[0]

    def batch(self, i):
        return self.points[self._splits[i % self.n_batches]]


def lhs_sample(bounds, n, seed, n_batches=10):
    """Latin hypercube sample of n points: one point per axis stratum."""
    if n < 1:
        raise ConfigError(f"need n >= 1 points, got {n}")
    (a1, b1), (a2, b2) = bounds
    rng = np.random.default_rng(seed)
    pts = np.empty((n, 2))
    for k, (lo, hi) in enumerate(((a1, b1), (a2, b2))):
        strata = (rng.permutation(n) + rng.uniform(size=n)) / n
        pts[:, k] = lo + (hi - lo) * strata
    return CollocationSet(pts, n_batches, seed)


# ---------------------------------------------------------------------------
# optimizer

class Adam:
    """Standard first-order adaptive optimizer over one flat parameter block."""

    def __init__(self, n, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, theta, grad, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m = b1 * self.m + (1.0 - b1) * grad
        self.v = b2 * self.v + (1.0 - b2) * (grad * grad)
        mhat = self.m / (1.0 - b1 ** self.t)
        vhat = self.v / (1.0 - b2 ** self.t)
        theta -= lr * mhat / (np.sqrt(vhat) + self.eps)

    def state(self):
        return {"m": self.m, "v": self.v, "t": np.array([self.t], dtype=np.int64)}

    def load_state(self, st):
        self.m = np.array(st["m"], dtype=np.float64)
        self.v = np.array(st["v"], dtype=np.float64)
        self.t = int(st["t"][0])


# ---------------------------------------------------------------------------
# schedule

class Schedule:
    """Two-rate step-size plan: the level-set net starts 10x slower, and both
    nets share the dropped rates afterwards."""

    def __init__(self, total_epochs, drops=((60000, 1e-4), (120000, 1e-5)),
                 alpha_psi0=1e-3, alpha_phi0=1e-4):
        if total_epochs < 1:
            raise ConfigError(f"total_epochs must be >= 1, got {total_epochs}")
        if abs(alpha_psi0 - 10.0 * alpha_phi0) > 1e-15 * alpha_psi0:
            raise ConfigError("alpha_psi0 must equal 10 * alpha_phi0 "
                              f"(got {alpha_psi0} vs {alpha_phi0})")
        drops = tuple((int(e), float(lr)) for e, lr in drops)
        if any(e2 <= e1 for (e1, _), (e2, _) in zip(drops, drops[1:])):
            raise ConfigError("drop epochs must increase")
        self.total_epochs = int(total_epochs)
        self.drops = drops
        self.alpha_psi0 = float(alpha_psi0)
        self.alpha_phi0 = float(alpha_phi0)

    def rates(self, epoch):
        """(alpha_psi, alpha_phi) in effect for 0-based epoch index."""
        lr = None
        for e, v in self.drops:
            if epoch >= e:
                lr = v
        if lr is None:
            return self.alpha_psi0, self.alpha_phi0
        return lr, lr


# family presets; the desk variant scales epochs down with proportional drops
PRESETS = {
    "matrix": dict(epochs=150000, drops=((60000, 1e-4), (120000, 1e-5)),
                   n_colloc=10000, n_batches=10, hidden=(50, 50, 50, 50)),
    "layer": dict(epochs=200000, drops=((60000, 1e-4), (120000, 1e-5)),
                  n_colloc=10000, n_batches=10, hidden=(50, 50, 50, 50)),
    "mit": dict(epochs=50000, drops=((16000, 1e-4), (40000, 1e-5)),
                n_colloc=50000, n_batches=50, hidden=(100,) * 6),
    "thermal": dict(epochs=150000, drops=((60000, 1e-4), (120000, 1e-5)),
                    n_colloc=10000, n_batches=10, hidden=(50, 50, 50, 50)),
    "desk": dict(epochs=30000, drops=((12000, 1e-4), (24000, 1e-5)),
                 n_colloc=5000, n_batches=10, hidden=(16, 16)),
}


# ---------------------------------------------------------------------------
# level-set pretraining

def pretrain_labels(family, pts):
    """Supervised level-set targets: a centered guess inclusion per family."""
    pts = np.asarray(pts, dtype=np.float64)
    if family in ("matrix", "matrix-hyper", "mit"):
        return np.hypot(pts[:, 0], pts[:, 1]) - 0.25
    if family == "layer":
        return pts[:, 1] + 0.25
    if family == "thermal":
        return np.hypot(pts[:, 0] - 0.5, pts[:, 1] - 0.5) - 0.25
    raise ConfigError(f"unknown family {family!r}")


def pretrain_levelset(bundle, colloc, epochs=800, lr=1e-3):
    """Fit phi to the guess labels with a full-batch L1 loss.

    Returns the per-epoch mean absolute mismatch; the last entry is the
    achieved fit.
    """
    labels = pretrain_labels(bundle.family, colloc.points)
    opt = Adam(bundle.phi.theta.size)
    history = np.empty(epochs)
    for e in range(epochs):
        tape = ad.Tape()
        bound = bundle.bind(tape)
        fields = bound.eval_fields(tape, colloc.points, duals=False, only=["phi"])
        err = fields["phi"] - tape.const(labels)
        loss = ad.vmean(ad.absval(err))
        tape.backward(loss)
        g = _gather_grad(tape, bound.phi.leaves(), bundle.phi.theta.size)
        if np.isnan(g).any():
            raise SolverError(f"NaN gradient during pretraining epoch {e}")
        opt.step(bundle.phi.theta, g, lr)
        history[e] = loss.val
    return history


def _gather_grad(tape, leaves, n):
    g = np.empty(n)
    for rec, off, size in leaves:
        g[off:off + size] = tape.grad(rec).ravel()
    return g


# ---------------------------------------------------------------------------
# checkpointing

def save_checkpoint(path, bundle, opt_psi, opt_phi, epoch):
    """Atomic write of parameters + optimizer moments + position."""
    tmp = str(path) + ".tmp"
    if os.path.exists(tmp):
        shutil.rmtree(tmp)
    os.makedirs(tmp)
    roles = nets.FAMILY_FIELDS[bundle.family]
    for g, role in enumerate(roles):
        nets.save_net(os.path.join(tmp, f"psi_{role}.net"), bundle.psi.net(g))
    nets.save_net(os.path.join(tmp, "phi.net"), bundle.phi.net(0))
    st = {f"psi_{k}": v for k, v in opt_psi.state().items()}
    st.update({f"phi_{k}": v for k, v in opt_phi.state().items()})
    np.savez(os.path.join(tmp, "optimizer.npz"), **st)
    with open(os.path.join(tmp, "state.txt"), "w") as f:
        f.write(f"{STATE_MAGIC}\n")
        f.write(f"epoch {epoch}\n")
        f.write(f"family {bundle.family}\n")
    if os.path.exists(path):
        shutil.rmtree(path)
    os.replace(tmp, path)


def load_checkpoint(path, bundle):
    """Restore parameters and moments in place; returns (epoch, opt_psi, opt_phi)."""
    state_file = os.path.join(path, "state.txt")
    with open(state_file) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != STATE_MAGIC:
        raise ConfigError(f"{state_file}: not a training checkpoint")
    kv = dict(ln.split(None, 1) for ln in lines[1:] if ln)
    epoch = int(kv["epoch"])
    if kv.get("family") != bundle.family:
        raise ConfigError(f"checkpoint family {kv.get('family')!r} does not match "
                          f"bundle family {bundle.family!r}")
    roles = nets.FAMILY_FIELDS[bundle.family]
    for g, role in enumerate(roles):
        net = nets.load_net(os.path.join(path, f"psi_{role}.net"))
        if net.sizes != bundle.psi.sizes:
            raise ConfigError(f"checkpoint net sizes {net.sizes} do not match "
                              f"bundle sizes {bundle.psi.sizes}")
        bundle.psi.params_of(g).set_flat(net.params.flat())
    phinet = nets.load_net(os.path.join(path, "phi.net"))
    bundle.phi.params_of(0).set_flat(phinet.params.flat())
    blob = np.load(os.path.join(path, "optimizer.npz"))
    opt_psi = Adam(bundle.psi.theta.size)
    opt_phi = Adam(bundle.phi.theta.size)
    opt_psi.load_state({k: blob[f"psi_{k}"] for k in ("m", "v", "t")})
    opt_phi.load_state({k: blob[f"phi_{k}"] for k in ("m", "v", "t")})
    return epoch, opt_psi, opt_phi


CSV_HEADER = "epoch,loss_meas,loss_gov,loss_reg,total"


def write_history_csv(path, history):
    with open(path, "w") as f:
        f.write(CSV_HEADER + "\n")
        for row in history:
            f.write("%d,%r,%r,%r,%r\n" % (int(row[0]), float(row[1]),
                                          float(row[2]), float(row[3]),
                                          float(row[4])))


def read_history_csv(path):
    with open(path) as f:
        header = f.readline().strip()
        if header != CSV_HEADER:
            raise ConfigError(f"{path}: unexpected loss-history header {header!r}")
        rows = [[float(tok) for tok in ln.split(",")] for ln in f if ln.strip()]
    return np.array(rows, dtype=np.float64).reshape(-1, 5)


# ---------------------------------------------------------------------------
# main loop

def train_run(out_dir, bundle, colloc, mset, model, weights, schedule,
              checkpoint_every=5000, resume=False, log_every=1000):
    """Minimize the total objective; returns the loss history array.

    One epoch sweeps the mini-batch partition once (one parameter update per
    mini-batch). The history rows hold per-epoch means of the unweighted
    components and the weighted total. Artifacts under out_dir: loss.csv,
    checkpoints/epoch_*, final/.
    """
    os.makedirs(out_dir, exist_ok=True)
    ckpt_dir = os.path.join(out_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)

    start_epoch = 0
    history = []
    if resume:
        latest = _latest_checkpoint(ckpt_dir)
        if latest is None:
            raise ConfigError(f"resume requested but no checkpoint under {ckpt_dir}")
        start_epoch, opt_psi, opt_phi = load_checkpoint(latest, bundle)
        old = read_history_csv(os.path.join(out_dir, "loss.csv"))
        history = [tuple(r) for r in old[old[:, 0] <= start_epoch]]
    else:
        opt_psi = Adam(bundle.psi.theta.size)
        opt_phi = Adam(bundle.phi.theta.size)

    nb = colloc.n_batches
    for e in range(start_epoch, schedule.total_epochs):
        a_psi, a_phi = schedule.rates(e)
        acc = np.zeros(4)
        for b in range(nb):
            tape = ad.Tape()
            bound = bundle.bind(tape)
            total, parts = ls.total_loss(bound, colloc.batch(b), colloc.points,
                                         mset, model, weights)
            tape.backward(total)
            g_psi = _gather_grad(tape, bound.psi.leaves(), bundle.psi.theta.size)
            g_phi = _gather_grad(tape, bound.phi.leaves(), bundle.phi.theta.size)
            if np.isnan(g_psi).any() or np.isnan(g_phi).any():
                _dump_nan(out_dir, bundle, opt_psi, opt_phi, e, b, parts)
                raise SolverError(f"NaN gradient at epoch {e}, update {b}; "
                                  f"state dumped under {out_dir}")
            opt_psi.step(bundle.psi.theta, g_psi, a_psi)
            opt_phi.step(bundle.phi.theta, g_phi, a_phi)
            acc += (parts["meas"].val, parts["gov"].val, parts["reg"].val, total.val)
        acc /= nb
        history.append((e + 1, acc[0], acc[1], acc[2], acc[3]))

        if acc[3] > DIVERGENCE_LIMIT:
            save_checkpoint(os.path.join(ckpt_dir, f"epoch_{e + 1:06d}"),
                            bundle, opt_psi, opt_phi, e + 1)
            write_history_csv(os.path.join(out_dir, "loss.csv"), history)
            raise SolverError(f"training diverged at epoch {e + 1} "
                              f"(total loss {acc[3]:.3e}); checkpoint saved")
        if (e + 1) % checkpoint_every == 0 and (e + 1) < schedule.total_epochs:
            save_checkpoint(os.path.join(ckpt_dir, f"epoch_{e + 1:06d}"),
                            bundle, opt_psi, opt_phi, e + 1)
            write_history_csv(os.path.join(out_dir, "loss.csv"), history)
        if log_every and (e + 1) % log_every == 0:
            log.info("epoch %d: meas %.3e gov %.3e reg %.3e total %.3e",
                     e + 1, acc[0], acc[1], acc[2], acc[3])

    save_checkpoint(os.path.join(out_dir, "final"), bundle, opt_psi, opt_phi,
                    schedule.total_epochs)
    write_history_csv(os.path.join(out_dir, "loss.csv"), history)
    return np.array(history, dtype=np.float64)


def _latest_checkpoint(ckpt_dir):
    if not os.path.isdir(ckpt_dir):
        return None
    names = sorted(n for n in os.listdir(ckpt_dir)
                   if n.startswith("epoch_") and not n.endswith(".tmp"))
    return os.path.join(ckpt_dir, names[-1]) if names else None


def _dump_nan(out_dir, bundle, opt_psi, opt_phi, epoch, batch, parts):
    try:
        save_checkpoint(os.path.join(out_dir, "nan_dump"), bundle,
                        opt_psi, opt_phi, epoch)
        with open(os.path.join(out_dir, "nan_dump", "diagnostic.txt"), "w") as f:
            f.write(f"NaN gradient at epoch {epoch}, update {batch}\n")
            for k, v in parts.items():
                f.write(f"loss_{k} {v.val!r}\n")
    except OSError:
        log.exception("could not write NaN diagnostic dump")
