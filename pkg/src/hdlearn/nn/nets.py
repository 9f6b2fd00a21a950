"""The two network families: scaled two-layer nets and scaled ResNets.

Plus a plain feedforward block used for the BSDE gradient subnetworks and
the control policies.  Every network keeps its numbers in a ParamStore
under a name prefix; ``__call__`` evaluates with numpy and ``on_tape``
records the same computation on a GradTape.
"""

import numpy as np

from . import autodiff as ad
from .params import ParamStore
from .summation import canonical_sum


def _as_batch(x, d):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != d:
        raise ValueError(f"input dimension mismatch: expected last axis {d}, got shape {x.shape}")
    return xb, single


class ScaledTwoLayerNet:
    """f(x) = (1/m) sum_j a_j sigma(w_j . x), or the plain sum if ``scaled=False``."""

    def __init__(self, a, w, activation="relu", scaled=True, store=None, prefix="two_layer"):
        a = np.asarray(a, dtype=np.float64).reshape(-1)
        w = np.asarray(w, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != a.shape[0] or a.shape[0] < 1 or w.shape[1] < 1:
            raise ValueError("need a of shape (m,) and w of shape (m, d) with m, d >= 1")
        self.activation = activation
        self.sigma, self.sigma_prime = ad.activation(activation)
        self.scaled = scaled
        self.store = ParamStore() if store is None else store
        self.prefix = prefix
        self.store.register(f"{prefix}/a", a)
        self.store.register(f"{prefix}/w", w)

    @classmethod
    def init(cls, m, d, rng, low=-1.0, high=1.0, **kw):
        a = rng.uniform(low, high, size=m)
        w = rng.uniform(low, high, size=(m, d))
        return cls(a, w, **kw)

    @property
    def a(self):
        return self.store.view(f"{self.prefix}/a")

    @property
    def w(self):
        return self.store.view(f"{self.prefix}/w")

    @property
    def m(self):
        return self.a.shape[0]

    @property
    def d(self):
        return self.w.shape[1]

    def features(self, x):
        xb, _ = _as_batch(x, self.d)
        return self.sigma(xb @ self.w.T)

    def __call__(self, x):
        xb, single = _as_batch(x, self.d)
        out = ad.particle_mean(self.sigma(xb @ self.w.T), self.a, scaled=self.scaled)
        return out[0] if single else out

    def on_tape(self, tape, x):
        xb, _ = _as_batch(x, self.d)
        w = tape.param(f"{self.prefix}/w")
        a = tape.param(f"{self.prefix}/a")
        return ad.particle_mean(self.sigma(xb @ w.T), a, scaled=self.scaled)

    def path_norm(self):
        return path_norm(self)


def forward_two_layer(net, x):
    return net(x)


def path_norm(net):
    """((1/m) sum_k a_k^2 ||w_k||_1^2)^(1/2)."""
    terms = net.a**2 * np.sum(np.abs(net.w), axis=1) ** 2
    return float(np.sqrt(canonical_sum(terms) / net.m))


def path_norm_on_tape(tape, net):
    a = tape.param(f"{net.prefix}/a")
    w = tape.param(f"{net.prefix}/w")
    l1 = (ad.square(w) + 1e-300) ** 0.5  # |w| with a finite derivative at 0
    return (((a * a) * ad.square(l1.sum(axis=1))).mean() + 1e-300) ** 0.5


class ScaledResNet:
    """z_{l+1} = z_l + 1/(L M) sum_j a_{j,l} sigma(w_{j,l} . z_l), z_0 = V (x, 1), f = alpha . z_L."""

    def __init__(self, V, a, w, alpha, activation="relu", store=None, prefix="resnet"):
        a = np.asarray(a, dtype=np.float64)
        w = np.asarray(w, dtype=np.float64)
        V = np.asarray(V, dtype=np.float64)
        alpha = np.asarray(alpha, dtype=np.float64)
        if a.ndim != 3 or a.shape != w.shape:
            raise ValueError("a and w must both have shape (L, M, D)")
        L, M, D = a.shape
        if V.shape[0] != D or alpha.shape != (D,):
            raise ValueError("V must be (D, d+1) and alpha (D,)")
        self.L, self.M, self.D = L, M, D
        self.d = V.shape[1] - 1
        self.activation = activation
        self.sigma, self.sigma_prime = ad.activation(activation)
        self.store = ParamStore() if store is None else store
        self.prefix = prefix
        self.store.register(f"{prefix}/V", V)
        self.store.register(f"{prefix}/alpha", alpha)
        for l in range(L):
            self.store.register(f"{prefix}/a/{l}", a[l])
            self.store.register(f"{prefix}/w/{l}", w[l])

    @classmethod
    def init(cls, d, L, M, rng, D=None, scale=1.0, activation="relu", **kw):
        """Random particles in [-scale, scale]; V pads (x, 1) into D = d+1 by default."""
        D = d + 1 if D is None else D
        V = np.eye(D, d + 1)
        a = rng.uniform(-scale, scale, size=(L, M, D))
        w = rng.uniform(-scale, scale, size=(L, M, D))
        return cls(V, a, w, np.ones(D), activation=activation, **kw)

    def name(self, kind, l=None):
        return f"{self.prefix}/{kind}" if l is None else f"{self.prefix}/{kind}/{l}"

    def a(self, l):
        return self.store.view(self.name("a", l))

    def w(self, l):
        return self.store.view(self.name("w", l))

    @property
    def V(self):
        return self.store.view(self.name("V"))

    @property
    def alpha(self):
        return self.store.view(self.name("alpha"))

    def lift(self, x):
        xb, single = _as_batch(x, self.d)
        xt = np.concatenate([xb, np.ones((xb.shape[0], 1))], axis=1)
        return xt @ self.V.T, single

    def __call__(self, x, return_path=False):
        z, single = self.lift(x)
        path = [z]
        c = 1.0 / (self.L * self.M)
        for l in range(self.L):
            z = z + (self.sigma(z @ self.w(l).T) @ self.a(l)) * c
            path.append(z)
        f = z @ self.alpha
        if single:
            f, path = f[0], [p[0] for p in path]
        return (f, path) if return_path else f

    def on_tape(self, tape, x):
        xb, _ = _as_batch(x, self.d)
        xt = np.concatenate([xb, np.ones((xb.shape[0], 1))], axis=1)
        z = xt @ tape.param(self.name("V")).T
        c = 1.0 / (self.L * self.M)
        for l in range(self.L):
            w = tape.param(self.name("w", l))
            a = tape.param(self.name("a", l))
            z = z + (self.sigma(z @ w.T) @ a) * c
        return z @ tape.param(self.name("alpha"))


def forward_resnet(net, x, return_path=False):
    return net(x, return_path=return_path)


class FeedForward:
    """Dense net ``widths[0] -> ... -> widths[-1]``, activation between layers, linear output."""

    def __init__(self, widths, rng, activation="relu", store=None, prefix="ff",
                 bias=True, zero_last=False, init_gain=1.0):
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        self.widths = list(widths)
        self.sigma, _ = ad.activation(activation)
        self.activation = activation
        self.store = ParamStore() if store is None else store
        self.prefix = prefix
        self.bias = bias
        for k, (fi, fo) in enumerate(zip(widths[:-1], widths[1:])):
            lim = init_gain * np.sqrt(6.0 / (fi + fo))
            W = np.zeros((fi, fo)) if (zero_last and k == len(widths) - 2) else rng.uniform(-lim, lim, (fi, fo))
            self.store.register(f"{prefix}/W{k}", W)
            if bias:
                self.store.register(f"{prefix}/b{k}", np.zeros(fo))

    @property
    def depth(self):
        return len(self.widths) - 1

    def __call__(self, x):
        h = np.asarray(x, dtype=np.float64)
        for k in range(self.depth):
            h = h @ self.store.view(f"{self.prefix}/W{k}")
            if self.bias:
                h = h + self.store.view(f"{self.prefix}/b{k}")
            if k < self.depth - 1:
                h = self.sigma(h)
        return h

    def on_tape(self, tape, x):
        h = x if isinstance(x, ad.Var) else tape.constant(x)
        for k in range(self.depth):
            h = h @ tape.param(f"{self.prefix}/W{k}")
            if self.bias:
                h = h + tape.param(f"{self.prefix}/b{k}")
            if k < self.depth - 1:
                h = self.sigma(h)
        return h
