"""Named, counter-based random streams.

Every random draw in the package goes through :func:`stream` or
:func:`uniform_block`, both keyed by an integer seed plus a stream name.
There is no ambient entropy anywhere.
"""

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stream_key(name):
    """Stable 64-bit id for a stream name (or pass an int through)."""
    if isinstance(name, (int, np.integer)):
        return int(name) & _MASK64
    raw = str(name).encode("utf-8")
    # two independent crc32 halves -> 64 bits, stable across runs and platforms
    lo = zlib.crc32(raw)
    hi = zlib.crc32(raw[::-1] + b"\x5a")
    return (hi << 32) | lo


def philox(seed, name):
    return np.random.Philox(key=[int(seed) & _MASK64, stream_key(name)])


def stream(seed, name):
    """A numpy Generator on its own Philox key (seed, name)."""
    return np.random.Generator(philox(seed, name))


def uniform_block(seed, name, start, count, width):
    """Uniforms in (0, 1) for records ``start .. start+count-1``.

    Record ``i`` always owns the same ``width`` numbers, whatever ``start``
    and ``count`` are, so any partition of a batch reproduces it exactly.
    """
    blocks = -(-width // 4)  # Philox emits 4 words per counter increment
    bg = philox(seed, name)
    if start:
        bg.advance(int(start) * blocks)
    raw = bg.random_raw(int(count) * blocks * 4).reshape(count, blocks * 4)[:, :width]
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def normal_block(seed, name, start, count, width):
    """Standard normals via Box-Muller on :func:`uniform_block` records."""
    half = -(-width // 2)
    u = uniform_block(seed, name, start, count, 2 * half)
    r = np.sqrt(-2.0 * np.log(u[:, :half]))
    theta = 2.0 * np.pi * u[:, half:]
    z = np.concatenate([r * np.cos(theta), r * np.sin(theta)], axis=1)
    return z[:, :width]
