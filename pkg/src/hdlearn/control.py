"""Discrete-time stochastic control with one policy network per step.

    s_{t+1} = s_t + b_t(s_t, a_t) + xi_{t+1},   a_t = A_t(s_t | theta_t),

trained by differentiating the simulated total cost through the dynamics.
The linear-quadratic subclass has an exact Riccati solution, which serves
as the reference optimum.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .nn import FeedForward, GradTape, Optimizer, ParamStore
from .nn import autodiff as ad
from .records import TrainRecord


@dataclass
class ControlProblem:
    horizon: int
    state_dim: int
    control_dim: int
    drift: object           # b(t, s, a) -> (B, state_dim)
    cost: object            # c(t, s, a) -> (B,)
    terminal_cost: object   # c_T(s) -> (B,)
    s0: np.ndarray
    noise_chol: np.ndarray  # xi = z @ noise_chol.T, z standard normal
    bounds: tuple = None    # (lo, hi) box on the control
    equality: tuple = None  # (E, e): E a = e
    name: str = "control"
    lq: object = None       # LQSpec when the problem is linear-quadratic

    def __post_init__(self):
        self.s0 = np.broadcast_to(np.asarray(self.s0, dtype=np.float64), (self.state_dim,)).copy()
        self.noise_chol = np.asarray(self.noise_chol, dtype=np.float64)
        if self.noise_chol.ndim == 0:
            self.noise_chol = self.noise_chol * np.eye(self.state_dim)
        if self.bounds is not None:
            lo, hi = (np.broadcast_to(np.asarray(b, dtype=np.float64), (self.control_dim,)) for b in self.bounds)
            if np.any(lo >= hi):
                raise ValueError("control bounds must satisfy lo < hi")
            self.bounds = (lo, hi)
        if self.bounds is not None and self.equality is not None:
            raise ValueError("box and equality constraints together are not supported")


def sample_noise(problem, B, seed, stream="control-noise", start=0):
    """Noise batch (B, horizon, state_dim), keyed like the Brownian batches."""
    T, n = problem.horizon, problem.state_dim
    if T == 0:
        return np.zeros((B, 0, n))
    z = _rng.normal_block(seed, stream, start, B, T * n).reshape(B, T, n)
    return z @ problem.noise_chol.T


class PolicyStack:
    """One feedforward network per time step (or one shared net with time input)."""

    def __init__(self, problem, hidden=(32, 32), activation="relu", seed=0, share_weights=False):
        self.problem = problem
        self.store = ParamStore()
        r = _rng.stream(seed, "policy-init")
        n, m = problem.state_dim, problem.control_dim
        self.share_weights = share_weights
        self._null = None
        if problem.equality is not None:
            E, e = (np.asarray(v, dtype=np.float64) for v in problem.equality)
            self._particular = np.linalg.lstsq(E, e, rcond=None)[0]
            _, sv, vt = np.linalg.svd(E)
            rank = int(np.sum(sv > 1e-12 * max(sv.max(), 1.0)))
            self._null = vt[rank:].T  # (m, m - rank)
            m = self._null.shape[1]
        widths = [n + (1 if share_weights else 0)] + list(hidden) + [m]
        count = 1 if share_weights else max(problem.horizon, 1)
        self.nets = [FeedForward(widths, r, activation, self.store, f"policy/{t}", zero_last=True)
                     for t in range(count)]

    def __len__(self):
        return len(self.nets)

    def _raw(self, t, s, tape=None):
        net = self.nets[0 if self.share_weights else t]
        if self.share_weights:
            tcol = np.full((s.shape[0], 1), t / max(self.problem.horizon, 1))
            s = ad.concat([s, tcol], axis=1)
        return net(s) if tape is None else net.on_tape(tape, s)

    def action(self, t, s, tape=None):
        raw = self._raw(t, s, tape)
        p = self.problem
        if p.bounds is not None:
            lo, hi = p.bounds
            return lo + (hi - lo) * ad.sigmoid(raw)
        if self._null is not None:
            return raw @ self._null.T + self._particular
        return raw


def simulate_cost(problem, stack, noise, tape=None):
    """Mean total cost over the batch; returns (cost Var, tape)."""
    noise = np.asarray(noise, dtype=np.float64)
    B, T, n = noise.shape
    if T != problem.horizon or n != problem.state_dim:
        raise ValueError(f"noise batch must be (B, {problem.horizon}, {problem.state_dim}), got {noise.shape}")
    tape = GradTape(stack.store) if tape is None else tape
    s = tape.constant(np.broadcast_to(problem.s0, (B, n)).copy())
    total = tape.constant(np.zeros(B))
    for t in range(T):
        a = stack.action(t, s, tape)
        total = total + problem.cost(t, s, a)
        s = s + problem.drift(t, s, a) + noise[:, t]
        if not np.all(np.isfinite(s.value)):
            raise FloatingPointError(f"non-finite state after step {t + 1}")
    total = total + problem.terminal_cost(s)
    out = total.mean()
    if not np.isfinite(out.value):
        raise FloatingPointError("non-finite total cost")
    return out, tape


def _total_costs(problem, stack, noise):
    k = noise.shape[0]
    s = np.broadcast_to(problem.s0, (k, problem.state_dim)).copy()
    tot = np.zeros(k)
    for t in range(problem.horizon):
        a = stack.action(t, s)
        tot += problem.cost(t, s, a)
        s = s + problem.drift(t, s, a) + noise[:, t]
    return tot + problem.terminal_cost(s)


def evaluate_cost(problem, stack, B=10**5, seed=0, stream="control-eval", chunk=20000):
    """Plain Monte Carlo cost of the current policies: (mean, standard error)."""
    totals = []
    for start in range(0, B, chunk):
        k = min(chunk, B - start)
        totals.append(_total_costs(problem, stack, sample_noise(problem, k, seed, stream, start)))
    c = np.concatenate(totals)
    return float(c.mean()), float(c.std(ddof=1) / np.sqrt(B)) if B > 1 else 0.0


@dataclass
class PolicyTrainConfig:
    batch: int = 256
    iters: int = 1000
    optimizer: str = "adam"
    lr: float = 1e-2
    schedule: list = field(default_factory=list)
    hidden: tuple = (32, 32)
    activation: str = "relu"
    seed: int = 0
    share_weights: bool = False
    valid_batch: int = 0


def train_policies(problem, config=None, oracle=None):
    """Returns (stack, record); the record's ``ratio`` column is cost / oracle.

    With ``valid_batch > 0`` the ratio is measured on one fixed held-out noise
    batch (the same draws at every step), so its curve is not masked by the
    step-to-step sampling noise of the training batches.
    """
    cfg = config or PolicyTrainConfig()
    stack = PolicyStack(problem, cfg.hidden, cfg.activation, cfg.seed, cfg.share_weights)
    opt = Optimizer(cfg.optimizer, cfg.lr, schedule=cfg.schedule)
    record = TrainRecord(("step", "cost", "ratio", "seconds", "seed"))
    valid = (sample_noise(problem, cfg.valid_batch, cfg.seed, "control-valid")
             if cfg.valid_batch else None)
    t0 = time.perf_counter()
    for it in range(cfg.iters + 1):
        noise = sample_noise(problem, cfg.batch, cfg.seed, "control-train", start=it * cfg.batch)
        try:
            cost, tape = simulate_cost(problem, stack, noise)
            grad = tape.backward(cost)
        except FloatingPointError as exc:
            record.abort(str(exc))
            break
        watched = cost.value
        if valid is not None:
            with np.errstate(all="ignore"):
                watched = _total_costs(problem, stack, valid).mean()
        record.append(step=it, cost=float(cost.value),
                      ratio=float(watched / oracle) if oracle else float("nan"),
                      seconds=time.perf_counter() - t0, seed=cfg.seed)
        if it == cfg.iters or not len(stack.store):
            break
        try:
            opt.step(stack.store, grad)
        except FloatingPointError as exc:
            record.abort(str(exc))
            break
    return stack, record


# -- linear-quadratic subclass ------------------------------------------------

@dataclass
class LQSpec:
    """s_{t+1} = A s + B a + xi, cost sum_t (s'Qs + a'Ra) + s_T' QT s_T, xi ~ N(0, W)."""

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    QT: np.ndarray
    W: np.ndarray
    s0: np.ndarray
    horizon: int

    def __post_init__(self):
        for name in ("A", "B", "Q", "R", "QT", "W", "s0"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64)))

    def problem(self, name="lq"):
        A, B, Q, R, QT = self.A, self.B, self.Q, self.R, self.QT
        n, m = B.shape
        Am = A - np.eye(n)

        def drift(t, s, a):
            return s @ Am.T + a @ B.T

        def cost(t, s, a):
            return ((s @ Q) * s).sum(axis=1) + ((a @ R) * a).sum(axis=1)

        def terminal(s):
            return ((s @ QT) * s).sum(axis=1)

        chol = np.linalg.cholesky(self.W) if np.any(self.W) else np.zeros((n, n))
        return ControlProblem(self.horizon, n, m, drift, cost, terminal, self.s0, chol, name=name, lq=self)


def _check_psd(M, name, strict=False):
    M = np.asarray(M, dtype=np.float64)
    if not np.allclose(M, M.T):
        raise ValueError(f"{name} must be symmetric")
    low = np.linalg.eigvalsh(M).min()
    if low < (1e-12 if strict else -1e-12):
        raise ValueError(f"{name} must be positive {'definite' if strict else 'semidefinite'}")


def riccati_lq_reference(spec, return_gains=False):
    """Exact optimal expected cost of an LQ problem by backward Riccati recursion."""
    _check_psd(spec.Q, "Q")
    _check_psd(spec.QT, "QT")
    _check_psd(spec.W, "noise covariance")
    _check_psd(spec.R, "R", strict=True)
    A, B = spec.A, spec.B
    P, const = spec.QT.copy(), 0.0
    gains = []
    for _ in range(spec.horizon):
        const += float(np.trace(P @ spec.W))
        S = spec.R + B.T @ P @ B
        K = np.linalg.solve(S, B.T @ P @ A)  # a = -K s
        P = spec.Q + A.T @ P @ A - A.T @ P @ B @ K
        P = 0.5 * (P + P.T)
        gains.append(K)
    value = float(spec.s0 @ P @ spec.s0) + const
    if return_gains:
        return value, gains[::-1]
    return value


class LinearPolicy:
    """a_t = -K_t s; evaluates like a PolicyStack (no parameters)."""

    def __init__(self, gains):
        self.gains = gains
        self.store = ParamStore()
        self.share_weights = False

    def action(self, t, s, tape=None):
        return -(s @ self.gains[t].T)


def lq_benchmark(n, horizon, seed=0, noise_std=0.3, control_cost=0.5):
    """Reproducible LQ instance with state and control dimension n."""
    r = _rng.stream(seed, f"lq-benchmark/{n}/{horizon}")
    A = np.eye(n) + 0.1 * r.normal(size=(n, n)) / np.sqrt(n)
    B = np.eye(n) + 0.1 * r.normal(size=(n, n)) / np.sqrt(n)
    return LQSpec(A, B, np.eye(n), control_cost * np.eye(n), np.eye(n),
                  noise_std**2 * np.eye(n), np.ones(n), horizon)


def storage_toy(n=3, horizon=12, seed=0):
    """Storage-like toy: charge rates boxed in [-1, 1], sinusoidal price, level tracking.

    A simplified stand-in with box constraints only; it is not the
    multi-device storage model whose details are unavailable.
    """
    r = _rng.stream(seed, "storage-toy")
    price = 1.0 + 0.5 * np.sin(2 * np.pi * np.arange(horizon) / horizon)
    target = r.uniform(0.3, 0.7, size=n)

    def drift(t, s, a):
        return 0.2 * a

    def cost(t, s, a):
        return price[t] * a.sum(axis=1) + ad.square(s - target).sum(axis=1)

    def terminal(s):
        return 5.0 * ad.square(s - target).sum(axis=1)

    return ControlProblem(horizon, n, n, drift, cost, terminal, np.full(n, 0.5), 0.02,
                          bounds=(-1.0, 1.0), name="storage_toy")
