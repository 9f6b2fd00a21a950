"""Experiments on two-layer nets seen as expectations over parameter space.

Monte Carlo integration and its rate, random-feature (Fourier) and
Barron-target approximation by sampling, Rademacher complexity of the
Barron ball, path-norm regularized fitting, the particle view of gradient
descent, the scaled/unscaled heatmap and the Runge interpolation demo.
"""

import io
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BarycentricInterpolator

from . import rng as rngmod
from .nn import autodiff as ad
from .nn.nets import ScaledTwoLayerNet, path_norm, path_norm_on_tape
from .nn.optim import Optimizer
from .nn.summation import canonical_sum
from .nn.autodiff import GradTape
from .records import write_csv


def unit_cube(d):
    """Sampler for Uniform[0,1]^d: ``sampler(gen, m) -> (m, d)``."""
    return lambda gen, m: gen.random((m, d))


def symmetric_cube(d):
    return lambda gen, m: gen.uniform(-1.0, 1.0, size=(m, d))


def fit_slope(m, err):
    """Least-squares slope of log(err) against log(m)."""
    m = np.asarray(m, dtype=np.float64)
    err = np.asarray(err, dtype=np.float64)
    if np.unique(m).size < 2:
        raise ValueError("degenerate fit: need at least two distinct m values")
    if np.any(err <= 0):
        raise ValueError("degenerate fit: errors must be positive for a log-log slope")
    return float(np.polyfit(np.log(m), np.log(err), 1)[0])


# -- Monte Carlo integration --------------------------------------------------

def mc_integrate(g, sampler, m, seed=0, stream="mc"):
    """(1/m) sum_j g(x_j) with x_j i.i.d. from ``sampler``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    x = sampler(rngmod.stream(seed, stream), int(m))
    return float(np.mean(g(x)))


def mc_replicate(g, sampler, m, replications, seed=0, stream="mc-rep"):
    """``replications`` independent estimates I_m, drawn as one (R, m) block."""
    if m < 1 or replications < 1:
        raise ValueError("m and replications must be >= 1")
    gen = rngmod.stream(seed, f"{stream}/{m}")
    x = sampler(gen, int(m) * int(replications))
    vals = np.asarray(g(x), dtype=np.float64).reshape(replications, m)
    return vals.mean(axis=1)


def antithetic(g):
    """x -> (g(x) + g(1 - x)) / 2, the antithetic average on the unit cube."""
    return lambda x: 0.5 * (g(x) + g(1.0 - x))


@dataclass
class RateStudy:
    m: np.ndarray
    mean_error: np.ndarray
    std_error: np.ndarray
    slope: float
    label: str = ""

    def to_csv(self, path=None):
        rows = [{"m": int(a), "mean_error": b, "std_error": c}
                for a, b, c in zip(self.m, self.mean_error, self.std_error)]
        return write_csv(path if path is not None else io.StringIO(),
                         ("m", "mean_error", "std_error"), rows)


def mc_rate_study(g, sampler, exact, m_ladder, replications=10**4, seed=0):
    """Mean squared error of I_m against ``exact`` along the ladder, plus its slope."""
    m_ladder = np.asarray(sorted(m_ladder), dtype=np.int64)
    mse, se = [], []
    for m in m_ladder:
        sq = (mc_replicate(g, sampler, int(m), replications, seed) - exact) ** 2
        mse.append(sq.mean())
        se.append(sq.std(ddof=1) / math.sqrt(replications))
    mse = np.array(mse)
    return RateStudy(m_ladder, mse, np.array(se), fit_slope(m_ladder, mse), "mc")


# -- sampled two-layer approximations ----------------------------------------

@dataclass
class BarronTarget:
    """f*(x) = E_{(a, w) ~ rho}[a sigma(w . x)] given as a sampler for rho.

    ``sample(gen, m)`` returns (a of shape (m,), w of shape (m, d)).
    ``exact(x)`` is a closed form of f* when one is known; otherwise a
    large sampled network stands in for it.
    """

    name: str
    d: int
    activation: str
    sample: object
    exact: object = None
    barron_norm_bound: float = float("nan")
    reference_particles: int = 2**18

    def network(self, m, gen):
        a, w = self.sample(gen, m)
        return ScaledTwoLayerNet(a, w, activation=self.activation)

    def __call__(self, x, seed=12345):
        if self.exact is not None:
            return self.exact(x)
        net = self.network(self.reference_particles, rngmod.stream(seed, f"reference/{self.name}"))
        return net(x)


def relu_gaussian_target(d):
    """a = 1, w ~ N(0, I): f*(x) = ||x|| / sqrt(2 pi)."""
    def sample(gen, m):
        return np.ones(m), gen.standard_normal((m, d))
    return BarronTarget("relu-gauss", d, "relu", sample,
                        exact=lambda x: np.linalg.norm(x, axis=-1) / math.sqrt(2 * math.pi),
                        barron_norm_bound=math.sqrt(d + d * (d - 1) * 2 / math.pi))


def relu_stein_target(d):
    """a = w_1, w ~ N(0, I): by Gaussian integration by parts f*(x) = x_1 / 2."""
    def sample(gen, m):
        w = gen.standard_normal((m, d))
        return w[:, 0].copy(), w
    return BarronTarget("relu-stein", d, "relu", sample, exact=lambda x: 0.5 * x[..., 0])


def gaussian_cos_target(d, scale=None):
    """a = 1, w ~ N(0, s^2 I) with cos features: f*(x) = exp(-s^2 ||x||^2 / 2).

    The default s = 1/sqrt(d) keeps s||x|| of order one on the unit cube
    for every d, so targets of different dimension are comparable.
    """
    s = 1.0 / math.sqrt(d) if scale is None else float(scale)

    def sample(gen, m):
        return np.ones(m), s * gen.standard_normal((m, d))
    return BarronTarget("cos-gauss", d, "cos", sample,
                        exact=lambda x: np.exp(-0.5 * s * s * np.sum(x * x, axis=-1)))


def single_neuron_target(a, w, activation="relu"):
    """rho is a point mass at (a, w): every sampled network equals f*."""
    w = np.asarray(w, dtype=np.float64)

    def sample(gen, m):
        return np.full(m, float(a)), np.tile(w, (m, 1))

    def exact(x):
        return float(a) * ad.activation(activation)[0](x @ w)

    return BarronTarget("single-neuron", w.shape[0], activation, sample, exact=exact,
                        barron_norm_bound=abs(a) * float(np.abs(w).sum()))


def sampled_mean(net, x):
    """(1/m) sum_j a_j sigma(w_j . x) by a BLAS product.

    The canonical sum in the network's own forward pass makes the result
    order-independent but costs a sort per point; rate studies at
    m = 2^12 do not need that property.
    """
    return (net.sigma(x @ net.w.T) @ net.a) / net.m


def l2_error(f, target, x):
    """Root-mean-square of f - f* over the points ``x`` (an L2(mu) estimate)."""
    diff = f(x) - target(x)
    return float(np.sqrt(np.mean(diff * diff)))


def fourier_feature_approx(d, m, seed=0, amplitude=None, scale=1.0, n_test=4096, sampler=None):
    """f_m(x) = (1/m) sum_j a(omega_j) cos(omega_j . x), omega_j ~ N(0, scale^2 I).

    With ``amplitude`` None (a = 1) the target is the Gaussian
    characteristic function exp(-scale^2 ||x||^2 / 2).  Returns the model
    (a ScaledTwoLayerNet with cos activation) and a report dict.
    """
    gen = rngmod.stream(seed, f"fourier/{d}/{m}")
    omega = scale * gen.standard_normal((m, d))
    a = np.ones(m) if amplitude is None else np.asarray(amplitude(omega), dtype=np.float64)
    net = ScaledTwoLayerNet(a, omega, activation="cos")
    sampler = sampler or unit_cube(d)
    x = sampler(rngmod.stream(seed, f"fourier-test/{d}"), n_test)
    target = gaussian_cos_target(d, scale)
    err = l2_error(lambda z: sampled_mean(net, z), target, x) if amplitude is None else float("nan")
    return net, {"m": m, "d": d, "l2_error": err, "target": target.name}


def barron_rate_study(target, m_ladder=tuple(2**k for k in range(4, 13)), trials=16, seed=0,
                      n_test=2048, sampler=None):
    """Slope of mean L2 error vs m for networks built by sampling rho."""
    m_ladder = np.asarray(sorted(m_ladder), dtype=np.int64)
    if m_ladder.size < 4:
        raise ValueError("rate study needs at least 4 rungs")
    sampler = sampler or unit_cube(target.d)
    x = sampler(rngmod.stream(seed, f"barron-test/{target.name}"), n_test)
    fstar = target(x)
    errs = np.empty((m_ladder.size, trials))
    for i, m in enumerate(m_ladder):
        for t in range(trials):
            net = target.network(int(m), rngmod.stream(seed, f"barron/{target.name}/{m}/{t}"))
            diff = sampled_mean(net, x) - fstar
            errs[i, t] = math.sqrt(float(np.mean(diff * diff)))
    mean = errs.mean(axis=1)
    if np.all(mean <= 1e-13 * max(1.0, float(np.max(np.abs(fstar))))):
        # rho is (numerically) a point mass: nothing left to converge
        return RateStudy(m_ladder, mean, np.zeros_like(mean), 0.0, target.name)
    return RateStudy(m_ladder, mean, errs.std(axis=1, ddof=1) / math.sqrt(trials),
                     fit_slope(m_ladder, mean), target.name)


# -- Rademacher complexity ----------------------------------------------------

class FiniteClass:
    """A finite hypothesis class given by its values on the sample."""

    def __init__(self, functions):
        self.functions = list(functions)

    def sup(self, xi, X, gen, budget):
        vals = np.array([np.asarray(f(X), dtype=np.float64) for f in self.functions])
        return float(np.max(vals @ xi) / X.shape[0]), len(self.functions)


class BarronBall:
    """{f : ||f||_B <= Q} for a positively homogeneous activation (ReLU).

    sup_f (1/n) sum_i xi_i f(x_i) is linear in rho, so it is attained at a
    point mass; with |a| ||w||_1 = Q that leaves
    Q * max over ||w||_1 = 1 of |(1/n) sum_i xi_i relu(w . x_i)|.
    The maximization over w is approximate (multi-start projected ascent),
    so the returned value is a lower bound on the true supremum.
    """

    def __init__(self, Q, starts=16, steps=40, lr=0.5):
        self.Q = float(Q)
        self.starts = starts
        self.steps = steps
        self.lr = lr

    @staticmethod
    def _value(W, xi, X):
        # W: (k, d) rows on the l1 sphere
        return (np.maximum(X @ W.T, 0.0).T @ xi) / X.shape[0]

    def sup(self, xi, X, gen, budget=None):
        n, d = X.shape
        starts = np.concatenate([np.eye(d), -np.eye(d), gen.standard_normal((self.starts, d))])
        W = starts / np.abs(starts).sum(axis=1, keepdims=True)
        evals = W.shape[0]
        steps = self.steps if budget is None else max(0, int(budget) // max(W.shape[0], 1) - 1)
        best = np.abs(self._value(W, xi, X))
        for _ in range(steps):
            pre = X @ W.T                      # (n, k)
            v = (np.maximum(pre, 0.0).T @ xi) / n
            sgn = np.sign(v)
            gW = ((pre > 0) * xi[:, None]).T @ X / n * sgn[:, None]
            W = W + self.lr * gW
            W = W / np.maximum(np.abs(W).sum(axis=1, keepdims=True), 1e-300)
            best = np.maximum(best, np.abs(self._value(W, xi, X)))
            evals += W.shape[0]
        return self.Q * float(best.max()), evals


def rademacher_bound(Q, d, n):
    """2 Q sqrt(2 ln(2d) / n) for the Barron ball on inputs with |x|_inf <= 1."""
    return 2.0 * Q * math.sqrt(2.0 * math.log(2 * d) / n)


def rademacher_estimate(hclass, X, trials=200, seed=0, budget=None, exact_below=16):
    """E_xi sup_{f in class} (1/n) sum_i xi_i f(x_i).

    For n <= ``exact_below`` all 2^n sign patterns are enumerated;
    otherwise ``trials`` draws are used in antithetic pairs (xi, -xi).
    Returns (estimate, report) with the total inner evaluations spent.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if trials < 1:
        raise ValueError("trials must be >= 1")
    n = X.shape[0]
    gen = rngmod.stream(seed, "rademacher")
    if n <= exact_below:
        # patterns with last sign +1; their negatives complete the enumeration
        base = 1.0 - 2.0 * ((np.arange(2 ** (n - 1))[:, None] >> np.arange(n)) & 1)
    else:
        base = np.where(gen.random((-(-trials // 2), n)) < 0.5, -1.0, 1.0)
    pairs, evals = [], 0
    for xi in base:
        v_pos, e1 = hclass.sup(xi, X, gen, budget)
        v_neg, e2 = hclass.sup(-xi, X, gen, budget)
        pairs.append(0.5 * (v_pos + v_neg))
        evals += e1 + e2
    est = float(np.mean(pairs))
    return est, {"patterns": 2 * len(base), "evaluations": evals, "exact": n <= exact_below}


# -- datasets and training ----------------------------------------------------

@dataclass
class SupervisedDataset:
    x: np.ndarray
    y: np.ndarray
    sampler: object
    target: object
    name: str = ""

    def __post_init__(self):
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError("inputs and targets must have the same length")

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def d(self):
        return self.x.shape[1]


def make_dataset(target, d, n, seed=0, stream="data", sampler=None):
    sampler = sampler or unit_cube(d)
    x = sampler(rngmod.stream(seed, stream), n)
    return SupervisedDataset(x, np.asarray(target(x), dtype=np.float64), sampler, target, stream)


def population_risk(net, dataset, n_test=10**4, seed=0):
    """Population risk E(f - f*)^2 estimated on fresh points from the data distribution."""
    x = dataset.sampler(rngmod.stream(seed, "test-points"), n_test)
    diff = net(x) - dataset.target(x)
    return float(np.mean(diff * diff))


def empirical_risk_on_tape(tape, net, dataset):
    r = net.on_tape(tape, dataset.x) - dataset.y
    return ad.square(r).mean()


def empirical_risk(net, dataset):
    r = net(dataset.x) - dataset.y
    return float(np.mean(r * r))


@dataclass
class FitConfig:
    steps: int = 2000
    optimizer: str = "sgd"
    lr: float = 0.1
    schedule: list = field(default_factory=list)


def fit(net, dataset, config=None, penalty=None):
    """Full-batch descent on the empirical risk (+ optional penalty on the tape).

    Returns a list of per-step objective values; stops early, marking the
    run as diverged, on a non-finite gradient.
    """
    cfg = config or FitConfig()
    opt = Optimizer(cfg.optimizer, cfg.lr, schedule=cfg.schedule)
    history = []
    for _ in range(cfg.steps):
        tape = GradTape(net.store)
        obj = empirical_risk_on_tape(tape, net, dataset)
        if penalty is not None:
            obj = obj + penalty(tape, net)
        grad = tape.backward(obj)
        history.append(float(obj.value))
        opt.step(net.store, grad)
    return history


def regularized_train(dataset, m, lam, config=None, seed=0, activation="relu", init=(-1.0, 1.0),
                      n_test=10**4):
    """Minimize R_n + lam sqrt(log(2d)/n) ||theta||_P for a scaled two-layer net.

    Returns (net, report) with the empirical risk, path norm and test risk.
    """
    if lam < 0:
        raise ValueError("lam must be >= 0")
    net = ScaledTwoLayerNet.init(m, dataset.d, rngmod.stream(seed, "init"), low=init[0], high=init[1],
                                 activation=activation)
    weight = lam * math.sqrt(math.log(2 * dataset.d) / dataset.n)
    penalty = None if lam == 0 else (lambda tape, n: path_norm_on_tape(tape, n) * weight)
    report = {"diverged": False}
    try:
        report["history"] = fit(net, dataset, config, penalty)
    except FloatingPointError:
        report["diverged"] = True
    report.update(empirical_risk=empirical_risk(net, dataset), path_norm=path_norm(net),
                  test_risk=population_risk(net, dataset, n_test, seed))
    return net, report


# -- particle flow ------------------------------------------------------------

def mean_field_velocity(a, w, dataset, activation="relu"):
    """Particle velocities -grad_u I(u_1..u_m) for R = (1/n) sum (f - y)^2.

    Written from the measure side: f is the particle average of
    a sigma(w . x); the first variation of R at u = (a, w) is
    (1/n) sum_i 2 r_i a sigma(w . x_i), and each particle moves along
    -(1/m) times its gradient.  Operations are ordered as the reverse
    sweep of the tape orders them, so both routes agree bit for bit.
    """
    sigma, dsigma = ad.activation(activation)
    x, y = dataset.x, dataset.y
    n, m = x.shape[0], a.shape[0]
    pre = x @ w.T
    h = sigma(pre)
    r = canonical_sum(h * a, axis=1) / m - y
    # d/df of (1/n) sum r^2, laid out as the tape computes it
    weight = np.broadcast_to(np.float64(1.0) * (1.0 / n), (n,)) * (2.0 * r)
    gs = weight * (1.0 / m)
    grad_a = h.T @ gs
    if activation == "relu":
        dpre = (gs[:, None] * a[None, :]) * (pre > 0).astype(np.float64)
    else:
        dpre = (gs[:, None] * a[None, :]) * _dsigma_from_tape(activation, pre, h)
    grad_w = (x.T @ dpre).T
    return -grad_a, -grad_w


def _dsigma_from_tape(activation, pre, h):
    if activation == "tanh":
        return 1.0 - h * h
    if activation == "cos":
        return -np.sin(pre)
    if activation == "identity":
        return np.ones_like(pre)
    raise ValueError(f"no particle derivative for {activation!r}")


def particle_flow_equivalence(dataset, m, steps, eta, seed=0, activation="relu", init=(-1.0, 1.0)):
    """Run the particle update and tape-driven GD side by side from one init.

    Returns the max absolute parameter difference over all steps together
    with both final parameter sets.
    """
    gen = rngmod.stream(seed, "particle-init")
    a0 = gen.uniform(init[0], init[1], size=m)
    w0 = gen.uniform(init[0], init[1], size=(m, dataset.d))
    net = ScaledTwoLayerNet(a0.copy(), w0.copy(), activation=activation)
    opt = Optimizer("sgd", eta)
    a, w = a0.copy(), w0.copy()
    dev = 0.0
    for _ in range(steps):
        tape = GradTape(net.store)
        grad = tape.backward(empirical_risk_on_tape(tape, net, dataset))
        opt.step(net.store, grad)
        va, vw = mean_field_velocity(a, w, dataset, activation)
        a = a + eta * va
        w = w + eta * vw
        dev = max(dev, float(np.max(np.abs(net.a - a))), float(np.max(np.abs(net.w - w))))
    return {"max_deviation": dev, "gd": (net.a.copy(), net.w.copy()), "particle": (a, w)}


# -- scaled vs unscaled heatmap ------------------------------------------------

@dataclass
class HeatmapResult:
    m_grid: tuple
    n_grid: tuple
    scaled: bool
    seeds: tuple
    errors: np.ndarray          # (len(m_grid), len(n_grid), len(seeds)); nan marks divergence
    seconds: float = 0.0

    def __post_init__(self):
        for g in (self.m_grid, self.n_grid):
            if len(g) == 0 or np.any(np.diff(g) <= 0):
                raise ValueError("grid axes must be non-empty and strictly increasing")

    def median(self):
        return np.nanmedian(np.where(np.isnan(self.errors), np.inf, self.errors), axis=2)

    def rows(self):
        for i, m in enumerate(self.m_grid):
            for j, n in enumerate(self.n_grid):
                for k, s in enumerate(self.seeds):
                    yield {"m": m, "n": n, "scaled": int(self.scaled), "seed": s,
                           "test_error": self.errors[i, j, k]}

    def to_csv(self, path=None):
        return write_csv(path if path is not None else io.StringIO(),
                         ("m", "n", "scaled", "seed", "test_error"), list(self.rows()))


@dataclass
class HeatmapConfig:
    d: int = 5
    steps: int = 1000
    optimizer: str = "adam"
    lr: float = 5e-3
    init: tuple = (-1.0, 1.0)
    n_test: int = 10**4
    activation: str = "relu"


def heatmap_target(d, activation="relu"):
    """Single neuron sigma(x_1)."""
    sigma = ad.activation(activation)[0]
    return lambda x: sigma(x[..., 0])


def heatmap_cell(m, n, scaled, seed, cfg):
    target = heatmap_target(cfg.d, cfg.activation)
    data = make_dataset(target, cfg.d, n, seed=seed, stream=f"heatmap-data/{n}", sampler=symmetric_cube(cfg.d))
    net = ScaledTwoLayerNet.init(m, cfg.d, rngmod.stream(seed, f"heatmap-init/{m}"), low=cfg.init[0],
                                 high=cfg.init[1], activation=cfg.activation, scaled=scaled)
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            fit(net, data, FitConfig(cfg.steps, cfg.optimizer, cfg.lr))
            err = population_risk(net, data, cfg.n_test, seed)
    except FloatingPointError:
        return float("nan")
    return err if np.isfinite(err) else float("nan")


def heatmap_experiment(m_grid, n_grid, scaled, seeds=(0, 1, 2, 3, 4), config=None):
    """Test error of trained scaled or unscaled two-layer nets over an (m, n) grid."""
    cfg = config or HeatmapConfig()
    m_grid, n_grid, seeds = tuple(m_grid), tuple(n_grid), tuple(seeds)
    t0 = time.perf_counter()
    errors = np.empty((len(m_grid), len(n_grid), len(seeds)))
    for i, m in enumerate(m_grid):
        for j, n in enumerate(n_grid):
            for k, s in enumerate(seeds):
                errors[i, j, k] = heatmap_cell(m, n, scaled, s, cfg)
    return HeatmapResult(m_grid, n_grid, bool(scaled), seeds, errors, time.perf_counter() - t0)


# -- Runge ---------------------------------------------------------------------

def runge_function(x):
    return 1.0 / (1.0 + 25.0 * x * x)


def runge_demo(degrees=(2, 4, 6, 8, 10, 12, 16, 20), f=runge_function, n_eval=10**4):
    """Max error of equispaced polynomial interpolation on [-1, 1] for each degree."""
    xs = np.linspace(-1.0, 1.0, n_eval)
    fx = f(xs)
    out = {}
    for k in degrees:
        if k < 2:
            raise ValueError("degrees must be >= 2")
        nodes = np.linspace(-1.0, 1.0, k + 1)
        p = BarycentricInterpolator(nodes, f(nodes))
        out[int(k)] = float(np.max(np.abs(p(xs) - fx)))
    return out
