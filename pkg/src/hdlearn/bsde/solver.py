"""The Deep BSDE method.

Y_0 and Z_0 are trainable, and Z_n = Sigma^T grad u(t_n, X_n) is produced by
one feedforward subnetwork per interior step.  The loss is the mean
squared mismatch between Y_N and g(X_N).
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .. import rng as _rng
from ..nn import FeedForward, GradTape, Optimizer, ParamStore
from ..records import TrainRecord
from ..sde import TimeGrid, euler_maruyama, sample_brownian


class BsdeSolver:
    def __init__(self, d, N, seed=0, hidden=None, activation="relu", y0_init=(0.0, 1.0),
                 z0_init=(-0.1, 0.1), y0_mode="point", share_weights=False, zero_last=True,
                 z_scale=None, time_input=None):
        self.d, self.N = d, N
        # subnet outputs are multiplied by z_scale (default 1/d): sigma^T grad u
        # has O(1/sqrt(d))-sized entries, far below one optimizer step on raw outputs
        self.z_scale = 1.0 / d if z_scale is None else float(z_scale)
        self.store = ParamStore()
        r = _rng.stream(seed, "bsde-init")
        self.store.register("y0", r.uniform(*y0_init, size=1))
        self.store.register("z0", r.uniform(*z0_init, size=d))
        hidden = [d + 10, d + 10] if hidden is None else list(hidden)
        # a shared subnet needs to know the step, so it takes t as an extra input
        self.time_input = share_weights if time_input is None else bool(time_input)
        widths = [d + int(self.time_input)] + hidden + [d]
        self.y0_mode = y0_mode
        if y0_mode == "network":
            # Y_0 = u(0, X_0) as a function of the start point
            self.y0_net = FeedForward([d] + hidden + [1], r, activation, self.store, "y0_net",
                                      zero_last=True)
        elif y0_mode != "point":
            raise ValueError(f"unknown y0_mode {y0_mode!r}")
        count = 1 if share_weights else N - 1
        # zero output layer: Z starts at 0, so h(t, x, y, 0) drives the first steps
        self.subnets = [FeedForward(widths, r, activation, self.store, f"z/{n}", zero_last=zero_last)
                        for n in range(count)]
        self.share_weights = share_weights
        # fixed input standardisation per step (see calibrate)
        self.shift = np.zeros((N + 1, d))
        self.scale = np.ones((N + 1, d))

    def subnet(self, n):
        """Network for step n in 1..N-1."""
        return self.subnets[0 if self.share_weights else n - 1]

    def calibrate(self, problem, grid, seed, batch=4096):
        """Freeze per-step input mean/std from a pilot batch of forward paths."""
        dW = sample_brownian(grid, self.d, batch, seed, "bsde-calibrate")
        X = euler_maruyama(problem.dynamics, grid, problem.xi, dW).X
        self.shift = X.mean(axis=0)
        sd = X.std(axis=0)
        self.scale = np.where(sd > 1e-8, sd, 1.0)
        return X

    @property
    def y0(self):
        return float(self.store.view("y0")[0])

    def y0_at(self, xi):
        if self.y0_mode == "network":
            return float(self.store.view("y0")[0] + self.y0_net(np.asarray(xi)[None, :])[0, 0])
        return self.y0


@dataclass
class BsdeTrainConfig:
    batch: int = 64
    iters: int = 2000
    optimizer: str = "adam"
    lr: float = 1e-2
    schedule: list = field(default_factory=list)
    seed: int = 0
    log_every: int = 1
    valid_batch: int = 0  # >0: report loss on a fixed validation batch


def rollout_loss(solver, problem, grid, dW):
    """Mean of |g(X_N) - Y_N|^2 over the batch, recorded on a fresh tape."""
    if grid.N != solver.N:
        raise ValueError(f"grid has N={grid.N} but the solver was built for N={solver.N}")
    dw = dW.dW if hasattr(dW, "dW") else np.asarray(dW)
    B = dw.shape[0]
    X = euler_maruyama(problem.dynamics, grid, problem.xi, dw).X
    tape = GradTape(solver.store)
    y = tape.param("y0") + np.zeros(B)
    z = tape.param("z0") + np.zeros((B, solver.d))
    if solver.y0_mode == "network":
        y = y + solver.y0_net.on_tape(tape, X[:, 0]).reshape(B)
    ys = []
    for n in range(grid.N):
        y = y - problem.h(grid.t(n), X[:, n], y, z) * grid.dt + (z * dw[:, n]).sum(axis=1)
        ys.append(y.value)
        if n < grid.N - 1:
            xin = (X[:, n + 1] - solver.shift[n + 1]) / solver.scale[n + 1]
            if solver.time_input:
                xin = np.concatenate([xin, np.full((B, 1), grid.t(n + 1))], axis=1)
            z = solver.subnet(n + 1).on_tape(tape, xin) * solver.z_scale
    r = problem.g(X[:, -1]) - y
    loss = (r * r).mean()
    if not np.isfinite(loss.value):
        bad = [n for n, v in enumerate(ys) if not np.all(np.isfinite(v))]
        where = f"step {bad[0] + 1}" if bad else "terminal condition"
        raise FloatingPointError(f"non-finite rollout loss (first blow-up at {where})")
    return loss, tape


def train(solver, problem, grid, config=None, callback=None):
    """Adam/SGD on the rollout loss with a fresh Brownian batch per step."""
    cfg = config or BsdeTrainConfig()
    if cfg.batch < 1 or cfg.iters < 0:
        raise ValueError("batch must be >= 1 and iters >= 0")
    opt = Optimizer(cfg.optimizer, cfg.lr, schedule=cfg.schedule)
    record = TrainRecord(("step", "loss", "y0", "seconds", "seed"))
    valid = None
    if cfg.valid_batch:
        valid = sample_brownian(grid, solver.d, cfg.valid_batch, cfg.seed, "bsde-valid")
    t0 = time.perf_counter()
    for it in range(cfg.iters + 1):
        dW = sample_brownian(grid, solver.d, cfg.batch, cfg.seed, "bsde-train", start=it * cfg.batch)
        try:
            loss, tape = rollout_loss(solver, problem, grid, dW)
            grad = tape.backward(loss)
        except FloatingPointError as exc:
            record.abort(str(exc))
            return record
        if it % cfg.log_every == 0 or it == cfg.iters:
            value = loss.value if valid is None else rollout_loss(solver, problem, grid, valid)[0].value
            record.append(step=it, loss=float(value), y0=solver.y0_at(problem.xi),
                          seconds=time.perf_counter() - t0, seed=cfg.seed)
            if callback is not None:
                callback(record)
        if it == cfg.iters:
            break
        try:
            opt.step(solver.store, grad)
        except FloatingPointError as exc:
            record.abort(str(exc))
            return record
    return record


def solve(problem, N=20, config=None, seed=None, calibrate=True, y0_start="uniform", **solver_kw):
    """Build, calibrate and train a solver on ``problem``; returns (solver, record).

    ``y0_start="terminal_mean"`` starts y0 at the Monte Carlo mean of
    g(X_N) from the calibration batch instead of the uniform init range.
    """
    cfg = config or BsdeTrainConfig()
    seed = cfg.seed if seed is None else seed
    grid = TimeGrid(problem.T, N)
    solver_kw.setdefault("y0_init", problem.y0_init)
    solver = BsdeSolver(problem.d, N, seed=seed, **solver_kw)
    if calibrate or y0_start == "terminal_mean":
        X = solver.calibrate(problem, grid, seed)
        if not calibrate:
            solver.shift[:] = 0.0
            solver.scale[:] = 1.0
        if y0_start == "terminal_mean":
            solver.store.set("y0", float(np.mean(problem.g(X[:, -1]))))
    elif y0_start != "uniform":
        raise ValueError(f"unknown y0_start {y0_start!r}")
    return solver, train(solver, problem, grid, cfg)
