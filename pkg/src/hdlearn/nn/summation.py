import numpy as np


def canonical_sum(terms, axis=-1):
    """Order-independent compensated sum along ``axis``.

    Terms are sorted first, then accumulated left to right with Neumaier
    compensation, so any permutation of the input gives the same bits.
    """
    t = np.sort(np.moveaxis(np.asarray(terms, dtype=np.float64), axis, -1), axis=-1)
    s = np.zeros(t.shape[:-1])
    c = np.zeros(t.shape[:-1])
    for k in range(t.shape[-1]):
        x = t[..., k]
        tot = s + x
        big = np.abs(s) >= np.abs(x)
        c += np.where(big, (s - tot) + x, (x - tot) + s)
        s = tot
    return s + c
