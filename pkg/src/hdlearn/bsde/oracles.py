"""Monte Carlo reference values used to check the BSDE solver."""

import numpy as np
from scipy import integrate, stats

from ..sde import TimeGrid, sample_brownian


def _terminal_chunks(d, T, x0, sigma, mc_samples, seed, stream, chunk):
    grid = TimeGrid(T, 1)
    x0 = np.broadcast_to(np.asarray(x0, dtype=np.float64), (d,))
    for start in range(0, mc_samples, chunk):
        n = min(chunk, mc_samples - start)
        dW = sample_brownian(grid, d, n, seed, stream, start=start).dW[:, 0, :]
        yield x0 + sigma * dW


def hopf_cole_reference(d, lam, g, T=1.0, mc_samples=10**5, seed=0, x0=0.0, t=0.0,
                        shift=True, chunk=20000):
    """u(t, x0) = -(1/lam) ln E exp(-lam g(x0 + sqrt(2) W_{T-t})).

    Returns ``(estimate, standard_error)``; the error is the delta-method
    standard error of the log of the sample mean.  With ``shift`` the
    exponent is taken relative to the smallest g seen (log-sum-exp).
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if mc_samples < 1:
        raise ValueError("need at least one Monte Carlo sample")
    ref, s1, s2 = None, 0.0, 0.0
    for x in _terminal_chunks(d, T - t, x0, np.sqrt(2.0), mc_samples, seed, "hopf-cole", chunk):
        gv = g(x)
        if shift:
            low = float(gv.min())
            if ref is None:
                ref = low
            elif low < ref:
                s1 *= np.exp(-lam * (ref - low))
                s2 *= np.exp(-2.0 * lam * (ref - low))
                ref = low
        else:
            ref = 0.0
        e = np.exp(-lam * (gv - ref))
        s1 += e.sum()
        s2 += (e * e).sum()
    n = mc_samples
    mean = s1 / n
    var = max(s2 / n - mean * mean, 0.0) * n / max(n - 1, 1)
    estimate = ref - np.log(mean) / lam
    se = np.sqrt(var / n) / (lam * mean)
    return float(estimate), float(se)


def hopf_cole_radial(d, lam, g_of_r2, T=1.0, t=0.0, upper=None):
    """Hopf-Cole value at x0 = 0 for a radial terminal cost, by quadrature.

    With x0 = 0, |sqrt(2) W_{T-t}|^2 = 2 (T-t) C where C ~ chi^2_d, so the
    expectation collapses to a one dimensional integral.  This stays exact
    when exp(-lam g) puts its mass in a tail that sampling never reaches.
    ``g_of_r2`` maps squared radius to cost.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    tau = T - t
    upper = upper if upper is not None else d + 60.0 * np.sqrt(2.0 * d) + 60.0

    def logw(c):
        return -lam * g_of_r2(2.0 * tau * c) + stats.chi2.logpdf(c, d)

    grid = np.linspace(0.0, upper, 20001)[1:]
    lw = logw(grid)
    peak = float(lw.max())
    mode = float(grid[np.argmax(lw)])
    pts = sorted({p for p in (0.5 * mode, mode, 2.0 * mode, float(d)) if 0 < p < upper})
    val, _ = integrate.quad(lambda c: np.exp(logw(c) - peak), 0.0, upper, limit=1000,
                            points=pts, epsabs=0.0, epsrel=1e-11)
    return float(-(np.log(val) + peak) / lam)


def lqg_terminal_r2(r2):
    """The default LQG cost ln((1 + |x|^2) / 2) written in terms of |x|^2."""
    return np.log((1.0 + r2) / 2.0)


def heat_reference(d, g, T=1.0, x0=0.0, sigma=np.sqrt(2.0), mc_samples=10**5, seed=0,
                   discount=0.0, chunk=20000):
    """E[g(x0 + sigma W_T)] * exp(-discount T) with its standard error."""
    s1 = s2 = 0.0
    for x in _terminal_chunks(d, T, x0, sigma, mc_samples, seed, "heat", chunk):
        gv = g(x)
        s1 += gv.sum()
        s2 += (gv * gv).sum()
    n = mc_samples
    mean = s1 / n
    var = max(s2 / n - mean * mean, 0.0) * n / max(n - 1, 1)
    f = np.exp(-discount * T)
    return float(f * mean), float(f * np.sqrt(var / n))


def linear_decay_reference(c, rate, T=1.0):
    """u(0) = c exp(-rate T) for du/dt - rate u = 0, u(T) = c."""
    return c * np.exp(-rate * T)
