import numpy as np


class Optimizer:
    """SGD or bias-corrected Adam acting in place on a ParamStore."""

    def __init__(self, kind="adam", lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, schedule=None):
        if kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {kind!r}")
        self.kind = kind
        self.lr = float(lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        # schedule: list of (step boundary, lr) pairs, applied when step >= boundary
        self.schedule = sorted(schedule or [])
        self.steps = 0
        self.m = self.v = None

    def current_lr(self):
        lr = self.lr
        for boundary, value in self.schedule:
            if self.steps >= boundary:
                lr = value
        return lr

    def step(self, params, grad):
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != params.data.shape:
            raise ValueError(f"gradient length {grad.size} != parameter length {params.data.size}")
        bad = np.flatnonzero(~np.isfinite(grad))
        if bad.size:
            raise FloatingPointError(f"non-finite gradient at {bad.size} entries (first index {bad[0]}); step refused")
        lr = self.current_lr()
        self.steps += 1
        if self.kind == "sgd":
            params.data -= lr * grad
            return params
        if self.m is None:
            self.m = np.zeros_like(grad)
            self.v = np.zeros_like(grad)
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1**self.steps)
        vhat = self.v / (1 - self.beta2**self.steps)
        params.data -= lr * mhat / (np.sqrt(vhat) + self.eps)
        return params


def optimizer_step(state, params, grad):
    return state.step(params, grad)
