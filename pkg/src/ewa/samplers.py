"""Posterior sampling of network weights (LMC, MALA, pCN) and chain diagnostics.

The target is p(theta) ~ exp(-L_reg(theta) / T) with
L_reg = 1/2 sum (y - f)^2 + T sum_l (lambda_l / 2) |W_l|^2.

For fully connected networks the first weight matrix only acts on inputs
through their span.  ``Posterior`` rotates the inputs onto an orthonormal
basis of the train rows followed by the part of the test rows orthogonal
to them, keeping the original 1/sqrt(N0) normalisation; the remaining
directions never reach an output and are dropped.  This is an exact
change of variables.  The weights on the test-only directions ("free"
weights) do not enter the training loss, so under LMC they follow a
linear Gaussian recursion that is advanced in closed form between
recordings.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import _gen
from .errors import Divergence, InvalidParameter, TooFewChains, TooShort
from .nets import NetworkSpec, ParamLayout, forward, loss_and_grad

__all__ = [
    "Posterior",
    "ChainRecord",
    "BlockingReport",
    "Window",
    "lmc_run",
    "mala_run",
    "mala_log_accept",
    "pcn_run",
    "blocking_error",
    "gelman_rubin",
    "phase_windows",
    "save_record",
    "load_record",
]


def _orth(A, tol=1e-10, scale=None):
    # orthonormal basis of the column space of A; singular values below
    # tol * scale (default: the largest one) count as zero
    if A.shape[1] == 0:
        return A
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    ref = s[0] if scale is None else scale
    keep = s > tol * max(ref, 1e-300)
    return U[:, keep]


class Posterior:
    """Training data, network spec and the observables recorded along a chain.

    ``test_idx`` selects the test points whose outputs are stored at every
    recording (all of them by default).
    """

    def __init__(self, spec: NetworkSpec, X, y, Xt=None, yt=None, project=True, test_idx=None):
        self.spec = spec
        X = np.asarray(X, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        self.P = len(self.y)
        Xt = np.zeros((0,) + X.shape[1:]) if Xt is None else np.asarray(Xt, dtype=np.float64)
        self.yt = np.zeros(len(Xt)) if yt is None else np.asarray(yt, dtype=np.float64)
        n_test = len(self.yt)
        self.test_idx = np.arange(n_test) if test_idx is None else np.asarray(test_idx, dtype=int)
        self.projected = bool(project and spec.kind == "mlp")
        if self.projected:
            N0 = spec.n_in
            Ba = _orth(X.T)
            if n_test:
                # the residual is measured against the size of the inputs, not itself
                scale = max(np.linalg.norm(X, 2), np.linalg.norm(Xt, 2))
                Bb = _orth(Xt.T - Ba @ (Ba.T @ Xt.T), scale=scale)
                Bb = _orth(Bb - Ba @ (Ba.T @ Bb))
            else:
                Bb = np.zeros((N0, 0))
            ra, rb = Ba.shape[1], Bb.shape[1]
            r = ra + rb
            # inputs in the new basis, rescaled so the reduced net's 1/sqrt(r) equals 1/sqrt(N0)
            self.core_spec = spec.replace(n_in=ra)
            self.full_spec = spec.replace(n_in=r)
            self.X = X @ Ba * np.sqrt(ra / N0)
            self.Xt = Xt @ np.hstack([Ba, Bb]) * np.sqrt(r / N0)
            self.n_rows = spec.widths[0] if spec.depth else spec.out_dim
            self.ra, self.rb = ra, rb
        else:
            self.core_spec = self.full_spec = spec
            self.X, self.Xt = X, Xt
            self.ra, self.rb, self.n_rows = 0, 0, 0
        self.layout = ParamLayout(self.core_spec)
        self.full_layout = ParamLayout(self.full_spec)
        self.n_core = self.layout.size
        self.n_free = self.n_rows * self.rb
        self.lam_free = spec.precisions[0]
        self.lam = np.concatenate([self.layout.lam, np.full(self.n_free, self.lam_free)])

    @property
    def size(self):
        return self.n_core + self.n_free

    @property
    def temperature(self):
        return self.spec.temperature

    def init(self, rng):
        """Draw from the prior."""
        return _gen(rng).standard_normal(self.size) / np.sqrt(self.lam)

    def full_theta(self, state):
        """Parameters of the reduced full-basis network from (core, free)."""
        core, free = state[:self.n_core], state[self.n_core:]
        if not self.projected:
            return core
        W1 = core[:self.n_rows * self.ra].reshape(self.n_rows, self.ra)
        Wb = free.reshape(self.n_rows, self.rb)
        return np.concatenate([np.hstack([W1, Wb]).ravel(), core[self.n_rows * self.ra:]])

    def core_value_grad(self, core):
        """(L_reg restricted to core weights, gradient, train outputs)."""
        return loss_and_grad(core, (self.X, self.y), self.core_spec, self.layout, return_output=True)

    def potential(self, state):
        """L_reg over the whole state (free weights only carry their prior)."""
        v, g, f = self.core_value_grad(state[:self.n_core])
        free = state[self.n_core:]
        T = self.temperature
        v += 0.5 * T * self.lam_free * float(free @ free)
        return v, np.concatenate([g, T * self.lam_free * free]), f

    def likelihood(self, state):
        """Unregularised loss 1/2 sum (y - f)^2 and the train outputs."""
        f = forward(state[:self.n_core], self.X, self.core_spec)
        r = f - self.y
        return 0.5 * float(np.sum(r * r)), f

    def test_outputs(self, state):
        if len(self.yt) == 0:
            return np.zeros(0)
        return forward(self.full_theta(state), self.Xt, self.full_spec)

    def observe(self, state, f_train):
        """(train loss, test loss, recorded test outputs)."""
        tr = float(np.mean((f_train - self.y) ** 2))
        if len(self.yt) == 0:
            return tr, np.nan, np.zeros(0)
        ft = self.test_outputs(state)
        return tr, float(np.mean((ft - self.yt) ** 2)), ft[self.test_idx]


@dataclass
class ChainRecord:
    sampler: str
    hyper: dict
    seed: int
    stream: int
    thin: int
    burn_in: int
    steps: int
    train_loss: np.ndarray
    test_loss: np.ndarray
    outputs: np.ndarray
    acceptance: float = np.nan
    spec: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.train_loss)


class _Recorder:
    def __init__(self, post, n_rec):
        self.post = post
        self.tr = np.empty(n_rec)
        self.te = np.empty(n_rec)
        self.out = np.empty((n_rec, len(post.test_idx)))
        self.n = 0

    def add(self, state, f_train):
        self.tr[self.n], self.te[self.n], self.out[self.n] = self.post.observe(state, f_train)
        self.n += 1

    def record(self, sampler, hyper, rng_info, thin, burn_in, steps, acc=np.nan):
        n = self.n
        return ChainRecord(sampler, hyper, rng_info[0], rng_info[1], thin, burn_in, steps,
                           self.tr[:n].copy(), self.te[:n].copy(), self.out[:n].copy(), acc,
                           self.post.spec.to_dict())


def _setup(post, steps, burn_in, thin, rng, state0):
    if steps < 1 or thin < 1 or burn_in < 0:
        raise InvalidParameter("steps and thin must be positive, burn_in non-negative")
    g = _gen(rng)
    info = (int(getattr(rng, "seed", 0)), int(getattr(rng, "stream", 0)))
    state = post.init(g) if state0 is None else np.array(state0, dtype=np.float64)
    n_rec = max(0, (steps - burn_in + thin - 1) // thin)
    return g, info, state, _Recorder(post, n_rec)


def _is_record(t, burn_in, thin):
    return t >= burn_in and (t - burn_in) % thin == 0


def lmc_run(post: Posterior, eta, steps, burn_in=0, thin=1, rng=None, state0=None,
            ceiling=1e10, return_state=False):
    """Unadjusted Langevin: theta <- theta - eta grad L_reg + sqrt(2 T eta) xi.

    Observables are recorded before the update of every ``thin``-th step
    after ``burn_in``.  Raises ``Divergence`` (partial record attached)
    when the loss exceeds ``ceiling`` or stops being finite.
    """
    T = post.temperature
    if not (eta > 0 and T > 0):
        raise InvalidParameter("need eta > 0 and T > 0")
    g, info, state, rec = _setup(post, steps, burn_in, thin, rng, state0)
    nc = post.n_core
    core = state[:nc].copy()
    free = state[nc:].copy()
    noise = np.sqrt(2.0 * T * eta)
    # free weights: x <- a x + noise xi, advanced k steps at once
    a = 1.0 - eta * T * post.lam_free
    if post.n_free and not abs(a) < 1:
        raise InvalidParameter("eta * T * lambda too large for a stable prior recursion")
    t_free = 0
    hyper = {"eta": float(eta)}
    for t in range(steps):
        v, grad, f = post.core_value_grad(core)
        if not (np.isfinite(v) and v < ceiling):
            raise Divergence(f"LMC loss {v:.3e} at step {t}",
                             rec.record("lmc", hyper, info, thin, burn_in, t))
        if _is_record(t, burn_in, thin):
            if post.n_free:
                k = t - t_free
                if k:
                    ak = a**k
                    sd = noise * np.sqrt((1.0 - ak * ak) / (1.0 - a * a))
                    free = ak * free + sd * g.standard_normal(post.n_free)
                t_free = t
            rec.add(np.concatenate([core, free]), f)
        core -= eta * grad
        core += noise * g.standard_normal(nc)
    out = rec.record("lmc", hyper, info, thin, burn_in, steps)
    if return_state:
        if post.n_free and steps > t_free:
            k = steps - t_free
            ak = a**k
            free = ak * free + noise * np.sqrt((1 - ak * ak) / (1 - a * a)) * g.standard_normal(post.n_free)
        return out, np.concatenate([core, free])
    return out


def mala_log_accept(x, xp, v, vp, g, gp, eta, T):
    """log of the MALA acceptance ratio for the move x -> xp.

    (v, g) and (vp, gp) are L_reg and its gradient at x and xp; the
    proposal is N(x - eta g, 2 T eta).
    """
    fwd = xp - x + eta * g
    back = x - xp + eta * gp
    return -(vp - v) / T - (back @ back - fwd @ fwd) / (4.0 * eta * T)


def mala_run(post: Posterior, eta, steps, burn_in=0, thin=1, rng=None, state0=None,
             ceiling=1e10, return_state=False):
    """Metropolis-adjusted Langevin with the asymmetric Gaussian proposal density."""
    T = post.temperature
    if not (eta > 0 and T > 0):
        raise InvalidParameter("need eta > 0 and T > 0")
    g, info, state, rec = _setup(post, steps, burn_in, thin, rng, state0)
    v, grad, f = post.potential(state)
    noise = np.sqrt(2.0 * T * eta)
    n_acc = 0
    hyper = {"eta": float(eta)}
    for t in range(steps):
        if _is_record(t, burn_in, thin):
            rec.add(state, f)
        xi = g.standard_normal(post.size)
        prop = state - eta * grad + noise * xi
        vp, gp, fp = post.potential(prop)
        if not (np.isfinite(vp) and vp < ceiling):
            log_a = -np.inf
        else:
            log_a = mala_log_accept(state, prop, v, vp, grad, gp, eta, T)
        if np.log(g.random()) < log_a:
            state, v, grad, f = prop, vp, gp, fp
            n_acc += 1
        if not np.isfinite(v):
            raise Divergence(f"MALA loss {v:.3e} at step {t}",
                             rec.record("mala", hyper, info, thin, burn_in, t, n_acc / (t + 1)))
    out = rec.record("mala", hyper, info, thin, burn_in, steps, n_acc / steps)
    return (out, state) if return_state else out


def pcn_run(post: Posterior, phi, steps, burn_in=0, thin=1, rng=None, state0=None,
            return_state=False):
    """Preconditioned Crank-Nicolson: prior-preserving proposal, likelihood-only acceptance.

    theta' = sqrt(1 - phi^2) theta + phi xi / sqrt(lambda); accept with
    min(1, exp(-beta (L(theta') - L(theta)))).  T = inf samples the prior.
    """
    if not 0 < phi <= 1:
        raise InvalidParameter("phi must lie in (0, 1]")
    beta = 1.0 / post.temperature
    g, info, state, rec = _setup(post, steps, burn_in, thin, rng, state0)
    v, f = post.likelihood(state)
    c = np.sqrt(1.0 - phi * phi)
    sd = phi / np.sqrt(post.lam)
    n_acc = 0
    hyper = {"phi": float(phi)}
    for t in range(steps):
        if _is_record(t, burn_in, thin):
            rec.add(state, f)
        prop = c * state + sd * g.standard_normal(post.size)
        vp, fp = post.likelihood(prop)
        u = g.random()
        if beta == 0.0 or (np.isfinite(vp) and np.log(u) < -beta * (vp - v)):
            state, v, f = prop, vp, fp
            n_acc += 1
    out = rec.record("pcn", hyper, info, thin, burn_in, steps, n_acc / steps)
    return (out, state) if return_state else out


def save_record(path, rec: ChainRecord):
    """Columnar ``.npz`` with the metadata as a JSON header entry."""
    head = {k: v for k, v in asdict(rec).items() if k not in ("train_loss", "test_loss", "outputs")}
    head["acceptance"] = None if np.isnan(rec.acceptance) else float(rec.acceptance)
    np.savez(path, header=np.frombuffer(json.dumps(head, sort_keys=True).encode(), dtype=np.uint8),
             train_loss=rec.train_loss, test_loss=rec.test_loss, outputs=rec.outputs)


def load_record(path):
    with np.load(path) as z:
        head = json.loads(z["header"].tobytes().decode())
        if head["acceptance"] is None:
            head["acceptance"] = np.nan
        return ChainRecord(train_loss=z["train_loss"], test_loss=z["test_loss"],
                           outputs=z["outputs"], **head)


# ---------------------------------------------------------------- diagnostics

@dataclass
class BlockingReport:
    block_sizes: np.ndarray
    errors: np.ndarray
    plateau: bool
    delta: float
    tau_int: float
    n_eff: float
    mean: float
    plateau_index: int = -1


MIN_BLOCKS = 32


def blocking_error(series, rtol=0.05):
    """Error of the mean by repeated pairwise block averaging.

    The plateau is the first block size at which two successive doublings
    change the estimate by less than ``rtol``; the larger block size of that
    pair is reported.  Without a plateau the largest estimate is returned
    and ``plateau`` is False.  tau_int = delta^2 N / (2 sigma0^2).
    """
    x = np.asarray(series, dtype=np.float64).ravel()
    N = len(x)
    if N < 2**7:
        raise TooShort(f"blocking needs at least 128 samples, got {N}")
    var0 = float(np.var(x))
    sizes, errs = [], []
    b, y = 1, x
    while len(y) >= MIN_BLOCKS:
        errs.append(np.sqrt(np.var(y, ddof=1) / len(y)))
        sizes.append(b)
        y = 0.5 * (y[: len(y) // 2 * 2:2] + y[1: len(y) // 2 * 2:2])
        b *= 2
    errs = np.array(errs)
    idx = -1
    for k in range(len(errs) - 2):
        r1, r2 = errs[k + 1] / errs[k], errs[k + 2] / errs[k + 1]
        if abs(r1 - 1) < rtol and abs(r2 - 1) < rtol:
            idx = k + 1
            break
    delta = float(errs[idx]) if idx >= 0 else float(np.max(errs))
    tau = delta**2 * N / (2.0 * var0) if var0 > 0 else 0.5
    return BlockingReport(np.array(sizes), errs, idx >= 0, delta, tau, N / (2.0 * tau),
                          float(np.mean(x)), idx)


def gelman_rubin(chains):
    """Potential scale reduction per observable and its mean.

    ``chains`` has shape (m, n) or (m, n, k).  With W the mean within-chain
    variance (normalised by n) and B/n the variance of the chain means,
    R = sqrt(1 + B / (n W)); identical chains give exactly 1.
    """
    c = np.asarray(chains, dtype=np.float64)
    if c.ndim == 2:
        c = c[:, :, None]
    m, n = c.shape[:2]
    if m < 2:
        raise TooFewChains("need at least two chains")
    W = np.mean(np.var(c, axis=1), axis=0)
    B_over_n = np.var(np.mean(c, axis=1), axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        R = np.sqrt(1.0 + np.where(B_over_n == 0, 0.0, B_over_n / W))
    return R, float(np.mean(R))


@dataclass
class Window:
    start: int
    end: int
    mean: float
    error: float


def _segment_error(x):
    if len(x) >= 2**7:
        return blocking_error(x).delta
    return float(np.std(x, ddof=1) / np.sqrt(len(x))) if len(x) > 1 else np.inf


def phase_windows(series, threshold=4.0, min_len=128):
    """Split a chain into windows of constant mean by binary segmentation.

    A segment is split at the point maximising the CUSUM statistic when the
    two sides differ by more than ``threshold`` combined blocking errors
    and both are at least ``min_len`` long.  Each window reports its mean
    and blocking error.
    """
    x = np.asarray(series, dtype=np.float64).ravel()
    cuts = []

    def split(a, b):
        n = b - a
        if n < 2 * min_len:
            return
        seg = x[a:b]
        cs = np.cumsum(seg)
        ks = np.arange(min_len, n - min_len + 1)
        left = cs[ks - 1] / ks
        right = (cs[-1] - cs[ks - 1]) / (n - ks)
        stat = np.abs(left - right) * np.sqrt(ks * (n - ks) / n)
        k = int(ks[np.argmax(stat)])
        d = abs(np.mean(seg[:k]) - np.mean(seg[k:]))
        se = np.hypot(_segment_error(seg[:k]), _segment_error(seg[k:]))
        if d > threshold * se:
            cuts.append(a + k)
            split(a, a + k)
            split(a + k, b)

    split(0, len(x))
    edges = [0] + sorted(cuts) + [len(x)]
    return [Window(s, e, float(np.mean(x[s:e])), _segment_error(x[s:e])) for s, e in zip(edges[:-1], edges[1:])]
