"""Brownian increments and Euler-Maruyama paths on uniform time grids."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as _rng


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int

    def __post_init__(self):
        if self.N < 1 or not self.T > 0:
            raise ValueError(f"need N >= 1 and T > 0, got N={self.N}, T={self.T}")

    @property
    def dt(self):
        return self.T / self.N

    @property
    def times(self):
        return np.arange(self.N + 1) * self.dt

    def t(self, n):
        return n * self.dt


@dataclass
class BrownianBatch:
    dW: np.ndarray  # (B, N, d)
    grid: TimeGrid
    seed: int
    stream: object
    start: int = 0

    @property
    def shape(self):
        return self.dW.shape

    @property
    def W(self):
        """Cumulative paths W_{t_0..t_N}, shape (B, N+1, d)."""
        B, _, d = self.dW.shape
        return np.concatenate([np.zeros((B, 1, d)), np.cumsum(self.dW, axis=1)], axis=1)


@dataclass
class Dynamics:
    """dX = drift(t, X) dt + diffusion(t, X) dW.

    ``diffusion`` is either a float (meaning scalar * identity) or a callable
    returning per-sample matrices of shape (B, d, d).  ``drift`` may be
    None for zero drift.
    """

    drift: object = None
    diffusion: object = 1.0

    def drift_at(self, t, x):
        return 0.0 if self.drift is None else self.drift(t, x)

    def noise(self, t, x, dw):
        if np.isscalar(self.diffusion):
            return self.diffusion * dw
        return np.einsum("bij,bj->bi", self.diffusion(t, x), dw)


@dataclass
class StatePathBatch:
    X: np.ndarray  # (B, N+1, d)
    grid: TimeGrid
    dynamics: Dynamics = field(repr=False, default=None)

    @property
    def terminal(self):
        return self.X[:, -1, :]


def sample_brownian(grid, d, B, seed, stream="brownian", start=0):
    """Increments ~ N(0, dt), keyed by (seed, stream, sample index, step index).

    Samples ``start .. start+B-1`` are identical whichever way the batch
    is partitioned across calls.
    """
    if B < 1 or d < 1:
        raise ValueError("need B >= 1 and d >= 1")
    z = _rng.normal_block(seed, stream, start, B, grid.N * d)
    return BrownianBatch(np.sqrt(grid.dt) * z.reshape(B, grid.N, d), grid, seed, stream, start)


def euler_maruyama(dyn, grid, xi, dW):
    dw = dW.dW if isinstance(dW, BrownianBatch) else np.asarray(dW, dtype=np.float64)
    B, N, d = dw.shape
    if N != grid.N:
        raise ValueError(f"increments have {N} steps, grid has {grid.N}")
    xi = np.broadcast_to(np.asarray(xi, dtype=np.float64), (d,))
    X = np.empty((B, N + 1, d))
    X[:, 0] = xi
    for n in range(N):
        t = grid.t(n)
        x = X[:, n]
        X[:, n + 1] = x + dyn.drift_at(t, x) * grid.dt + dyn.noise(t, x, dw[:, n])
        bad = ~np.all(np.isfinite(X[:, n + 1]), axis=1)
        if bad.any():
            raise FloatingPointError(f"non-finite state at sample {int(np.argmax(bad))}, step {n + 1}")
    return StatePathBatch(X, grid, dyn)


def controlled_step(x, drift, dt, noise=0.0):
    """One step x + drift*dt + noise of a controlled recursion.

    For the LQG dynamics ``drift = 2 sqrt(lam) m``; for the discrete
    recursion s + b_t(s, a) + xi pass ``drift = b_t(s, a)`` and ``dt = 1``.
    """
    x = np.asarray(x, dtype=np.float64)
    drift = np.asarray(drift, dtype=np.float64)
    if drift.shape[-1:] != x.shape[-1:]:
        raise ValueError(f"control drift shape {drift.shape} does not match state shape {x.shape}")
    return x + drift * dt + noise


def lqg_drift(m, lam):
    return 2.0 * np.sqrt(lam) * np.asarray(m, dtype=np.float64)


def dump_paths(path, paths, seed=None):
    """Write raw little-endian float64 states plus a JSON sidecar."""
    path = Path(path)
    X = np.ascontiguousarray(paths.X, dtype="<f8")
    path.write_bytes(X.tobytes())
    meta = {"shape": list(X.shape), "dtype": "<f8", "seed": seed,
            "grid": {"T": paths.grid.T, "N": paths.grid.N}}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2))


def load_paths(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    X = np.frombuffer(path.read_bytes(), dtype=meta["dtype"]).reshape(meta["shape"]).astype(np.float64)
    return StatePathBatch(X, TimeGrid(**meta["grid"])), meta
