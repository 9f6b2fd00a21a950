"""Semilinear parabolic terminal-value problems.

Each problem is the PDE

    du/dt + 1/2 Sigma Sigma^T : D^2 u + mu . grad u + h(t, x, u, Sigma^T grad u) = 0,
    u(T, x) = g(x),

written for the BSDE recursion Y_{n+1} = Y_n - h dt + Z . dW.  ``h`` is
built from :mod:`hdlearn.nn.autodiff` functions so it runs on arrays and
on tape variables alike.
"""

from dataclasses import dataclass, field

import numpy as np

from ..nn import autodiff as ad
from ..sde import Dynamics


@dataclass
class PdeProblem:
    name: str
    d: int
    T: float
    xi: np.ndarray
    dynamics: Dynamics
    h: object  # h(t, x, y, z); y shape (B,), z shape (B, d)
    g: object  # g(x) on arrays of shape (B, d)
    y0_init: tuple = (0.0, 1.0)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.xi = np.broadcast_to(np.asarray(self.xi, dtype=np.float64), (self.d,)).copy()
        if not np.isfinite(self.g(self.xi[None, :])).all():
            raise ValueError("terminal condition is not finite at the start point")
        zero = np.zeros((1, self.d))
        if not np.isfinite(self.h(0.0, self.xi[None, :], np.zeros(1), zero)).all():
            raise ValueError("nonlinearity is not finite at z = 0")

    @property
    def sigma(self):
        return self.dynamics.diffusion


def lqg_terminal(x):
    return np.log((1.0 + np.sum(np.asarray(x) ** 2, axis=-1)) / 2.0)


def heat_problem(d, g, T=1.0, xi=0.0, sigma=np.sqrt(2.0), y0_init=(0.0, 1.0)):
    """h = 0: u(0, x) = E g(x + sigma W_T)."""
    return PdeProblem("heat", d, T, xi, Dynamics(None, sigma),
                      lambda t, x, y, z: 0.0 * y, g, y0_init, {"sigma": sigma})


def hjb_lqg_problem(d, lam, g=None, T=1.0, xi=0.0, y0_init=(0.0, 1.0)):
    """du/dt + Laplacian u - lam |grad u|^2 = 0 with Sigma = sqrt(2) I.

    z = sqrt(2) grad u, so the nonlinearity is h = -lam |z|^2 / 2.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    g = lqg_terminal if g is None else g

    def h(t, x, y, z):
        return -0.5 * lam * ad.square(z).sum(axis=1)

    return PdeProblem("hjb_lqg", d, T, xi, Dynamics(None, np.sqrt(2.0)), h, g, y0_init, {"lam": lam})


@dataclass(frozen=True)
class DefaultIntensity:
    """Piecewise-linear, non-increasing Q: gamma_h below v_h, gamma_l above v_l."""

    gamma_h: float = 0.2
    gamma_l: float = 0.02
    v_h: float = 50.0
    v_l: float = 70.0

    def __post_init__(self):
        if not (self.gamma_h >= self.gamma_l >= 0):
            raise ValueError("Q must be non-increasing and non-negative (gamma_h >= gamma_l >= 0)")
        if self.gamma_h != self.gamma_l and not self.v_h < self.v_l:
            raise ValueError("Q thresholds must satisfy v_h < v_l")

    @classmethod
    def constant(cls, q):
        return cls(q, q, 0.0, 1.0)

    def __call__(self, y):
        if self.gamma_h == self.gamma_l:
            return 0.0 * y + self.gamma_h
        slope = (self.gamma_l - self.gamma_h) / (self.v_l - self.v_h)
        return self.gamma_h + slope * (ad.clip(y, self.v_h, self.v_l) - self.v_h)


def min_terminal(x):
    return np.min(np.asarray(x), axis=-1)


def black_scholes_default_problem(d, delta=2.0 / 3.0, R=0.02, Q=None, g=None, T=1.0,
                                  xi=60.0, y0_init=(50.0, 60.0)):
    """du/dt + Laplacian u - (1 - delta) Q(u) u - R u = 0."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"recovery rate delta must lie in [0, 1], got {delta}")
    if R < 0:
        raise ValueError(f"R must be non-negative, got {R}")
    Q = DefaultIntensity() if Q is None else Q
    if isinstance(Q, dict):
        Q = DefaultIntensity(**Q)
    g = min_terminal if g is None else g

    def h(t, x, y, z):
        return -(1.0 - delta) * Q(y) * y - R * y

    return PdeProblem("black_scholes_default", d, T, xi, Dynamics(None, np.sqrt(2.0)), h, g, y0_init,
                      {"delta": delta, "R": R, "Q": Q})
