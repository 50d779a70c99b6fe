"""Binary checkpoints of trainer state.

Layout (all integers unsigned 32-bit little-endian, all floats float64
little-endian, matrices row-major)::

    magic      8 bytes  b"MDMTCKPT"
    version    u32      1
    n_layers   u32
      per layer:  out u32, in u32, weight f64[out*in], bias f64[out]
    n_heads    u32
      per head:   task_id u32, d u32, C u32, weight f64[d*C], bias f64[C]
    quota      u32
    n_mem      u32
      per task:   task_id u32, count u32, input_dim u32, feature_dim u32,
                  inputs f64[count*input_dim], labels f64[count],
                  representations f64[count*feature_dim]
    T          u32
      matrix f64[T*T]
    n_curves   u32, curve_len u32
      curves f64[n_curves*curve_len]

Labels are stored as floats to keep the payload uniformly float64; they are
exact for any realistic class count.
"""
from __future__ import annotations

import io
import struct

import numpy as np

from .errors import ParseError
from .losses import TaskHead
from .memory import MemoryStore, TaskMemory
from .nn import DenseLayer, Network

MAGIC = b"MDMTCKPT"
VERSION = 1


def _u32(fh, *values):
    fh.write(struct.pack("<" + "I" * len(values), *values))


def _f64(fh, arr):
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def dumps(state) -> bytes:
    fh = io.BytesIO()
    fh.write(MAGIC)
    _u32(fh, VERSION)
    _u32(fh, len(state.net.layers))
    for layer in state.net.layers:
        _u32(fh, *layer.weight.shape)
        _f64(fh, layer.weight)
        _f64(fh, layer.bias)
    _u32(fh, len(state.heads))
    for head in state.heads:
        _u32(fh, head.task_id, *head.weight.shape)
        _f64(fh, head.weight)
        _f64(fh, head.bias)
    mem = state.memory
    _u32(fh, mem.per_task_quota, len(mem.tasks))
    for k in mem.task_ids:
        m = mem.tasks[k]
        _u32(fh, k, len(m), m.inputs.shape[1], m.representations.shape[1])
        _f64(fh, m.inputs)
        _f64(fh, m.labels)
        _f64(fh, m.representations)
    _u32(fh, state.matrix.shape[0])
    _f64(fh, state.matrix)
    curve_len = len(state.curves[0]) if state.curves else 0
    _u32(fh, len(state.curves), curve_len)
    for c in state.curves:
        _f64(fh, c)
    return fh.getvalue()


class _Reader:
    def __init__(self, buf: bytes, source):
        self.buf, self.pos, self.source = buf, 0, source

    def take(self, size):
        if self.pos + size > len(self.buf):
            raise ParseError("truncated checkpoint", source=self.source)
        out = self.buf[self.pos:self.pos + size]
        self.pos += size
        return out

    def u32(self, count=1):
        vals = struct.unpack("<" + "I" * count, self.take(4 * count))
        return vals if count > 1 else vals[0]

    def f64(self, *shape):
        n = int(np.prod(shape)) if shape else 1
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)


def loads(buf: bytes, source=None):
    """Rebuild the pieces of a trainer state: ``(net, heads, memory, matrix, curves)``."""
    r = _Reader(buf, source)
    if r.take(8) != MAGIC:
        raise ParseError("not a checkpoint (bad magic)", source=source)
    version = r.u32()
    if version != VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", source=source)
    layers = []
    for _ in range(r.u32()):
        out, inp = r.u32(2)
        layers.append(DenseLayer(r.f64(out, inp), r.f64(out)))
    heads = []
    for _ in range(r.u32()):
        k, d, c = r.u32(3)
        heads.append(TaskHead(k, r.f64(d, c), r.f64(c)))
    quota, n_mem = r.u32(2)
    memory = MemoryStore(quota)
    for _ in range(n_mem):
        k, count, in_dim, feat_dim = r.u32(4)
        inputs = r.f64(count, in_dim)
        labels = r.f64(count).astype(np.int64)
        memory.tasks[k] = TaskMemory(k, inputs, labels, r.f64(count, feat_dim))
    T = r.u32()
    matrix = r.f64(T, T)
    n_curves, curve_len = r.u32(2)
    curves = [r.f64(curve_len) for _ in range(n_curves)]
    if r.pos != len(buf):
        raise ParseError("trailing bytes after checkpoint", source=source)
    return Network(layers), heads, memory, matrix, curves


def save(state, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(state))


def load(path):
    """Load a checkpoint into a fresh ``TrainerState`` (without an RNG)."""
    from .trainer import TrainerState

    with open(path, "rb") as fh:
        net, heads, memory, matrix, curves = loads(fh.read(), source=str(path))
    return TrainerState(net, heads, memory, matrix, curves)
