"""Flat parameter storage with named slices, plus binary snapshots."""

import struct
from math import prod

import numpy as np

MAGIC = b"HDLP"
VERSION = 1


class ParamStore:
    """All trainable numbers of one model in a single float64 vector.

    Each registered tensor is a named, non-overlapping slice; :meth:`view`
    returns a reshaped view that aliases the flat storage.
    """

    def __init__(self):
        self.data = np.zeros(0)
        self.index = {}  # name -> (offset, shape)

    def __len__(self):
        return self.data.size

    def __contains__(self, name):
        return name in self.index

    @property
    def names(self):
        return list(self.index)

    def register(self, name, value):
        if name in self.index:
            raise KeyError(f"parameter {name!r} already registered")
        value = np.asarray(value, dtype=np.float64)
        self.index[name] = (self.data.size, value.shape)
        self.data = np.concatenate([self.data, value.ravel()])
        return self.view(name)

    def slice(self, name):
        off, shape = self.index[name]
        return slice(off, off + prod(shape))

    def view(self, name):
        return self.data[self.slice(name)].reshape(self.index[name][1])

    def set(self, name, value):
        self.data[self.slice(name)] = np.asarray(value, dtype=np.float64).ravel()

    def grad_view(self, grad, name):
        return grad[self.slice(name)].reshape(self.index[name][1])

    def copy(self):
        out = ParamStore()
        out.data = self.data.copy()
        out.index = dict(self.index)
        return out

    # -- snapshots -------------------------------------------------------

    def to_bytes(self):
        head = [MAGIC, struct.pack("<HI", VERSION, len(self.index))]
        for name, (off, shape) in self.index.items():
            raw = name.encode("utf-8")
            head.append(struct.pack("<I", len(raw)) + raw)
            head.append(struct.pack("<QB", off, len(shape)))
            head.append(struct.pack(f"<{len(shape)}Q", *shape))
        head.append(struct.pack("<Q", self.data.size))
        return b"".join(head) + self.data.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, buf):
        if buf[:4] != MAGIC:
            raise ValueError("not a parameter snapshot (bad magic)")
        pos = 4
        version, count = struct.unpack_from("<HI", buf, pos)
        pos += 6
        if version != VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        out = cls()
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            off, ndim = struct.unpack_from("<QB", buf, pos)
            pos += 9
            shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
            pos += 8 * ndim
            out.index[name] = (off, tuple(shape))
        (size,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        out.data = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).astype(np.float64)
        return out

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())
