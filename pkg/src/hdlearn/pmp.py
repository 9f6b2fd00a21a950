"""Training a scaled ResNet through its control formulation.

The ResNet z_{l+1} = z_l + (1/L) F(z_l, theta_l), with
F(z, theta) = (1/M) sum_j a_j sigma(w_j . z), is the forward Euler
discretization of a flow; H(z, p, theta) = p . F(z, theta) is its
Hamiltonian.  This module provides the state/costate sweep, the particle
gradient built from it (which coincides with backprop), and the method of
successive approximations in its basic and extended forms.

Conventions (the continuous statement leaves the discrete pairing open):

* costate: p_L = -2 (f - f*) alpha and
  p_l = p_{l+1} + (1/L) grad_z H(z_l, p_{l+1}, theta_l), the exact adjoint
  of the forward map, so p_l = -dR/dz_l for R = (f - f*)^2;
* layer l is driven by the pair (z_l, p_{l+1});
* the extended Hamiltonian of layer l uses the slots
  v = L (z_{l+1} - z_l) and q = L (p_{l+1} - p_l), which makes both
  penalties vanish at the cached trajectory.
"""

import io
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import rng as rngmod
from .nn import autodiff as ad
from .nn.autodiff import GradTape
from .nn.nets import ScaledResNet
from .nn.optim import Optimizer
from .nn.params import ParamStore
from .records import TrainRecord

_PRIME = {"relu": ad.relu_prime, "tanh": ad.tanh_prime, "identity": ad.identity_prime, "cos": ad.cos_prime}


def _sigmas(activation):
    sigma, _ = ad.activation(activation)
    return sigma, _PRIME[activation]


def vector_field(z, a, w, activation="tanh"):
    """F(z) = (1/M) sum_j a_j sigma(w_j . z) for a batch of states z (n, D)."""
    sigma, _ = _sigmas(activation)
    return (sigma(z @ w.T) @ a) * (1.0 / a.shape[0])


def hamiltonian(z, p, a, w, activation="tanh"):
    """H(z, p, mu) = (1/M) sum_j p . a_j sigma(w_j . z) for the layer's particles.

    ``z`` and ``p`` may be single vectors or (n, D) batches (one H per row).
    """
    z = np.asarray(z, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    single = z.ndim == 1
    zb, pb = np.atleast_2d(z), np.atleast_2d(p)
    h = np.sum(pb * vector_field(zb, a, w, activation), axis=1)
    return float(h[0]) if single else h


def grad_z_hamiltonian(z, p, a, w, activation="tanh"):
    """(1/M) sum_j (p . a_j) sigma'(w_j . z) w_j for batches (n, D)."""
    _, dsigma = _sigmas(activation)
    return (((p @ a.T) * dsigma(z @ w.T)) @ w) * (1.0 / a.shape[0])


@dataclass
class ForwardBackwardCache:
    z: np.ndarray        # (L+1, n, D)
    p: np.ndarray        # (L+1, n, D)
    f: np.ndarray        # (n,)
    residual: np.ndarray  # f - f*
    loss: float          # mean squared residual


def _layers(net):
    return [(net.a(l), net.w(l)) for l in range(net.L)]


def forward_backward(net, x, y):
    """States z_0..z_L and costates p_0..p_L of ``net`` for inputs x and targets y."""
    sigma, dsigma = _sigmas(net.activation)
    z0, _ = net.lift(np.atleast_2d(x))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    c = 1.0 / (net.L * net.M)
    zs = [z0]
    for a, w in _layers(net):
        z = zs[-1]
        zs.append(z + (sigma(z @ w.T) @ a) * c)
        if not np.all(np.isfinite(zs[-1])):
            raise FloatingPointError(f"non-finite state after layer {len(zs) - 1}")
    f = zs[-1] @ net.alpha
    r = f - y
    ps = [None] * (net.L + 1)
    ps[net.L] = (-2.0 * r)[:, None] * net.alpha[None, :]
    for l in range(net.L - 1, -1, -1):
        a, w = net.a(l), net.w(l)
        p = ps[l + 1]
        ps[l] = p + (((p @ a.T) * dsigma(zs[l] @ w.T)) @ w) * c
    return ForwardBackwardCache(np.stack(zs), np.stack(ps), f, r, float(np.mean(r * r)))


def pmp_gradient(net, x, y, cache=None):
    """dR/du for every particle, assembled from states and costates.

    R = mean (f - f*)^2.  For layer l the gradient is
    -(1/(L M)) E_x[grad_u (a sigma(w . z_l)) ^T p_{l+1}]; the descent
    direction is its negative.  Returns a dict {(kind, l): array} with
    kind in {"a", "w"}, shapes matching the ResNet's parameters.
    """
    sigma, dsigma = _sigmas(net.activation)
    cache = cache or forward_backward(net, x, y)
    n = cache.f.shape[0]
    c = 1.0 / (net.L * net.M)
    out = {}
    for l, (a, w) in enumerate(_layers(net)):
        z, p = cache.z[l], cache.p[l + 1]
        pre = z @ w.T
        out[("a", l)] = -(sigma(pre).T @ p) * (c / n)
        out[("w", l)] = -(((p @ a.T) * dsigma(pre)).T @ z) * (c / n)
    return out


def flat_particle_gradient(net, grads):
    """Place a pmp_gradient dict into a flat vector aligned with ``net.store``."""
    g = np.zeros(len(net.store))
    for (kind, l), v in grads.items():
        off, shape = net.store.index[net.name(kind, l)]
        g[off:off + v.size] = v.ravel()
    return g


def particle_slices(net):
    """Flat index mask of the trainable particles (everything except V and alpha)."""
    mask = np.zeros(len(net.store), dtype=bool)
    for l in range(net.L):
        for kind in ("a", "w"):
            off, shape = net.store.index[net.name(kind, l)]
            mask[off:off + int(np.prod(shape))] = True
    return mask


def resnet_loss_on_tape(tape, net, x, y):
    r = net.on_tape(tape, np.atleast_2d(x)) - np.asarray(y, dtype=np.float64).reshape(-1)
    return ad.square(r).mean()


# -- MSA -------------------------------------------------------------------

@dataclass
class MsaConfig:
    iters: int = 50
    inner_steps: int = 10        # maximizer evaluations per layer per outer iteration
    inner_lr: float = 1.0        # step size of the "ascent" maximizer
    inner: str = "ascent"        # "ascent" or "lbfgs"
    lam: float = 0.0             # extended-penalty weight; 0 gives the basic method
    starts: int = 1              # extra starts are jittered copies of the current layer
    jitter: float = 0.05
    seed: int = 0
    guard: float = 1e6           # loss growth factor treated as divergence
    budget: int = 0              # stop after this many forward/backward sweeps (0: no cap)
    adapt: bool = False          # accept/reject steps, halving or doubling lam
    adapt_factor: float = 2.0
    lam_min: float = 1e-3

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.inner_steps < 0 or self.iters < 0 or self.starts < 1:
            raise ValueError("iters, inner_steps must be >= 0 and starts >= 1")
        if self.inner not in ("ascent", "lbfgs"):
            raise ValueError(f"unknown inner maximizer {self.inner!r}")


def layer_objective_on_tape(tape, z, p, a, w, activation, lam=0.0, v=None, q=None):
    """Mean over the batch of H (lam = 0) or the extended Hamiltonian."""
    sigma, dsigma = _sigmas(activation)
    M = a.value.shape[0]
    pre = z @ w.T
    F = (sigma(pre) @ a) * (1.0 / M)
    H = (F * p).sum(axis=1)
    if lam == 0:
        return H.mean()
    gz = (((p @ a.T) * dsigma(pre)) @ w) * (1.0 / M)
    dv = F * -1.0 + v
    dq = gz + q
    pen = (ad.square(dv).sum(axis=1) + ad.square(dq).sum(axis=1)) * (0.5 * lam)
    return (H - pen).mean()


def extended_hamiltonian(z, p, a, w, v, q, lam, activation="tanh"):
    """H~ = H - lam/2 |v - F(z)|^2 - lam/2 |q + grad_z H|^2, per row of the batch."""
    F = vector_field(np.atleast_2d(z), a, w, activation)
    gz = grad_z_hamiltonian(np.atleast_2d(z), np.atleast_2d(p), a, w, activation)
    H = np.sum(np.atleast_2d(p) * F, axis=1)
    return H - 0.5 * lam * np.sum((v - F) ** 2, axis=1) - 0.5 * lam * np.sum((q + gz) ** 2, axis=1)


def _maximize_layer(z, p, a0, w0, activation, cfg, v, q, gen):
    """Inner maximization of one layer's (extended) Hamiltonian.

    Returns the best (a, w, value, evaluations) over the starts.
    """
    store = ParamStore()
    store.register("a", a0.copy())
    store.register("w", w0.copy())

    def value_and_grad(theta):
        store.data[:] = theta
        tape = GradTape(store)
        obj = layer_objective_on_tape(tape, z, p, tape.param("a"), tape.param("w"),
                                      activation, cfg.lam, v, q)
        return float(obj.value), tape.backward(obj)

    best, evals = None, 0
    for s in range(cfg.starts):
        theta = store.data.copy() if s == 0 else None
        if s:
            theta = np.concatenate([a0.ravel(), w0.ravel()])
            theta = theta + cfg.jitter * gen.standard_normal(theta.shape)
        if cfg.inner == "ascent":
            for _ in range(cfg.inner_steps):
                _, g = value_and_grad(theta)
                theta = theta + cfg.inner_lr * g
                evals += 1
            val = value_and_grad(theta)[0]
        else:
            res = minimize(lambda t: tuple(-u for u in value_and_grad(t)), theta, jac=True,
                           method="L-BFGS-B",
                           options={"maxiter": cfg.inner_steps, "maxfun": cfg.inner_steps})
            theta, val = res.x, -float(res.fun)
            evals += int(res.nfev)
        if best is None or val > best[2]:
            store.data[:] = theta
            best = (store.view("a").copy(), store.view("w").copy(), val)
    return best + (evals,)


def msa(net, x, y, config=None):
    """Method of successive approximations; ``config.lam > 0`` is the extended form.

    Each outer iteration updates every layer simultaneously from the
    cached (z_l, p_{l+1}), then runs one forward/backward sweep of the
    updated network.  The record keeps two counters: ``sweeps`` (loss
    gradient evaluations over the data, the unit shared with SGD) and
    ``inner_evals`` (layer-objective evaluations spent by the inner
    maximizer, counted as the largest number used by any layer).
    """
    cfg = config or MsaConfig()
    gen = rngmod.stream(cfg.seed, "msa-starts")
    rec = TrainRecord(("step", "loss", "lam", "sweeps", "inner_evals", "seconds", "seed"))
    t0 = time.perf_counter()
    lam = cfg.lam
    adapt = cfg.adapt and lam > 0
    try:
        cache = forward_backward(net, x, y)
    except FloatingPointError as exc:
        rec.abort(str(exc))
        return net, rec
    sweeps, inner_evals, first = 1, 0, cache.loss

    def log(k):
        rec.append(step=k, loss=cache.loss, lam=lam, sweeps=sweeps, inner_evals=inner_evals,
                   seconds=time.perf_counter() - t0, seed=cfg.seed)

    log(0)
    for k in range(1, cfg.iters + 1):
        if cfg.budget and sweeps >= cfg.budget:
            break
        if cfg.inner_steps:
            old = net.store.data.copy()
            lcfg = cfg if lam == cfg.lam else MsaConfig(**{**cfg.__dict__, "lam": lam})
            new = []
            for l in range(net.L):
                z, p = cache.z[l], cache.p[l + 1]
                v = (cache.z[l + 1] - cache.z[l]) * net.L
                q = (cache.p[l + 1] - cache.p[l]) * net.L
                new.append(_maximize_layer(z, p, net.a(l), net.w(l), net.activation, lcfg, v, q, gen))
            for l, (a, w, _, _) in enumerate(new):
                net.store.set(net.name("a", l), a)
                net.store.set(net.name("w", l), w)
            inner_evals += max(e for *_, e in new)
            try:
                cand = forward_backward(net, x, y)
            except FloatingPointError as exc:
                if not adapt:
                    rec.abort(str(exc))
                    break
                cand = None
            sweeps += 1
            if adapt and (cand is None or not cand.loss < cache.loss):
                net.store.data[:] = old          # reject: tighten the penalty
                lam *= cfg.adapt_factor
            else:
                cache = cand
                if adapt:
                    lam = max(lam / cfg.adapt_factor, cfg.lam_min)
        log(k)
        if not np.isfinite(cache.loss) or cache.loss > cfg.guard * max(first, 1e-300):
            rec.abort(f"loss grew past the guard at iteration {k}")
            break
    return net, rec


def basic_msa(net, x, y, config=None):
    cfg = config or MsaConfig()
    if cfg.lam != 0:
        raise ValueError("basic MSA has no penalty; use extended_msa for lam > 0")
    return msa(net, x, y, cfg)


def extended_msa(net, x, y, config=None):
    return msa(net, x, y, config or MsaConfig(lam=1.0))


@dataclass
class SgdConfig:
    steps: int = 500
    lr: float = 1.0
    optimizer: str = "sgd"
    batch: int = 0               # 0 means full batch
    seed: int = 0


def sgd_baseline(net, x, y, config=None):
    """Plain descent on the particles with autodiff gradients (V and alpha stay fixed)."""
    cfg = config or SgdConfig()
    opt = Optimizer(cfg.optimizer, cfg.lr)
    mask = particle_slices(net)
    x = np.atleast_2d(x)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = x.shape[0]
    rec = TrainRecord(("step", "loss", "evals", "seconds", "seed"))
    gen = rngmod.stream(cfg.seed, "sgd-batches")
    t0 = time.perf_counter()
    for k in range(cfg.steps + 1):
        full = float(np.mean((net(x) - y) ** 2))
        rec.append(step=k, loss=full, evals=k, seconds=time.perf_counter() - t0, seed=cfg.seed)
        if k == cfg.steps:
            break
        idx = gen.choice(n, cfg.batch, replace=False) if 0 < cfg.batch < n else slice(None)
        tape = GradTape(net.store)
        grad = tape.backward(resnet_loss_on_tape(tape, net, x[idx], y[idx]))
        grad[~mask] = 0.0
        try:
            opt.step(net.store, grad)
        except FloatingPointError as exc:
            rec.abort(str(exc))
            break
    return net, rec


def toy_regression(d=5, n=256, seed=0):
    """Inputs uniform on [-1, 1]^d, target sin(x_1 + x_2) + 0.5 x_3 x_4 (d >= 4)."""
    gen = rngmod.stream(seed, "msa-toy")
    x = gen.uniform(-1.0, 1.0, size=(n, d))
    y = np.sin(x[:, 0] + x[:, 1]) + 0.5 * x[:, 2] * x[:, min(3, d - 1)]
    return x, y


def make_resnet(d, L, M, seed=0, scale=1.0, activation="tanh"):
    return ScaledResNet.init(d, L, M, rngmod.stream(seed, "resnet-init"), scale=scale, activation=activation)


def compare_msa_sgd(d=5, L=4, M=8, n=256, budget=400, msa_config=None, sgd_lrs=(1.0, 3.0, 10.0, 20.0, 30.0),
                    seed=0, scale=1.0, activation="tanh"):
    """Extended MSA against the best plain-SGD rate from ``sgd_lrs``, from one init.

    Both methods get ``budget`` forward/backward sweeps over the data.
    Returns (msa_record, best_sgd_record, summary dict).
    """
    x, y = toy_regression(d, n, seed)
    mcfg = msa_config or MsaConfig(lam=10.0, inner="lbfgs", inner_steps=10, adapt=True, seed=seed)
    mcfg = MsaConfig(**{**mcfg.__dict__, "iters": budget, "budget": budget})
    _, mrec = msa(make_resnet(d, L, M, seed, scale, activation), x, y, mcfg)
    best = None
    for lr in sgd_lrs:
        with np.errstate(all="ignore"):
            _, srec = sgd_baseline(make_resnet(d, L, M, seed, scale, activation), x, y,
                                   SgdConfig(steps=budget, lr=lr, seed=seed))
        loss = srec.last["loss"] if srec.aborted is None else np.inf
        if np.isfinite(loss) and (best is None or loss < best[0]):
            best = (loss, lr, srec)
    target, lr, srec = best
    losses = mrec.column("loss")
    hit = np.flatnonzero(losses <= target)
    summary = {
        "sgd_lr": lr,
        "sgd_final_loss": target,
        "sgd_steps": budget,
        "msa_final_loss": float(losses[-1]),
        "msa_sweeps": int(mrec.last["sweeps"]),
        "msa_inner_evals": int(mrec.last["inner_evals"]),
        "msa_iters_to_match": int(mrec.column("step")[hit[0]]) if hit.size else None,
    }
    return mrec, srec, summary
