"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is dynamic: every op executed while gradients are enabled records
its parents and a closure that pushes the output gradient back to them.
Values are numpy arrays (row-major, float64). Only the operations needed by
the attention policy are provided.
"""

from __future__ import annotations

import contextlib
import logging
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np
from scipy.special import expit

logger = logging.getLogger(__name__)

MASK_VALUE = -1e9

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._consumed = False

    # -- graph plumbing ---------------------------------------------------
    @staticmethod
    def _make(data, parents, backward):
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Populate ``.grad`` on every reachable leaf that requires it.

        The loss must hold a single element. The graph is released afterwards,
        so a second call on the same output raises.
        """
        if self.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise RuntimeError("backward already ran on this graph; rebuild it first")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen and parent.requires_grad:
                    stack.append((parent, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if node._backward is None:
                if g is not None:
                    node._accum(g)
                continue
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        for node in order:
            node._parents = ()
            node._backward = None
        self._consumed = True

    # -- elementwise ------------------------------------------------------
    def __add__(self, other):
        other = _as_tensor(other)
        a_shape, b_shape = self.shape, other.shape
        return Tensor._make(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)),
        )

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-_as_tensor(other))

    def __rsub__(self, other):
        return _as_tensor(other) + (-self)

    def __mul__(self, other):
        other = _as_tensor(other)
        a, b = self.data, other.data
        return Tensor._make(
            a * b,
            (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return self * other.pow(-1.0)
        return self * (1.0 / other)

    def pow(self, exponent: float):
        a = self.data
        return Tensor._make(a**exponent, (self,), lambda g: (g * exponent * a ** (exponent - 1),))

    def exp(self):
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,))

    def log(self):
        a = self.data
        return Tensor._make(np.log(a), (self,), lambda g: (g / a,))

    def tanh(self):
        out = np.tanh(self.data)
        return Tensor._make(out, (self,), lambda g: (g * (1.0 - out * out),))

    def sigmoid(self):
        out = _stable_sigmoid(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out * (1.0 - out),))

    # -- linear algebra ---------------------------------------------------
    def __matmul__(self, other):
        return matmul(self, other)

    # -- shape ------------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.shape
        return Tensor._make(self.data.reshape(shape), (self,), lambda g: (g.reshape(src),))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = tuple(np.argsort(axes))
        return Tensor._make(self.data.transpose(axes), (self,), lambda g: (g.transpose(inverse),))

    def swapaxes(self, a: int, b: int):
        return Tensor._make(self.data.swapaxes(a, b), (self,), lambda g: (g.swapaxes(a, b),))

    def __getitem__(self, index):
        src = self.shape
        parts = index if isinstance(index, tuple) else (index,)
        basic = all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)

        def backward(g):
            full = np.zeros(src)
            if basic:
                full[index] = g
            else:
                np.add.at(full, index, g)
            return (full,)

        return Tensor._make(self.data[index], (self,), backward)

    def sum(self, axis=None, keepdims: bool = False):
        src = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, src),)

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def softmax(self):
        return softmax(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _stable_sigmoid(a: np.ndarray) -> np.ndarray:
    return expit(a)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands need at least two dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    x, y = a.data, b.data

    def backward(g):
        if not a.requires_grad:
            ga = None
        elif y.ndim == 2:
            ga = (g.reshape(-1, g.shape[-1]) @ y.T).reshape(x.shape)
        else:
            ga = _unbroadcast(g @ np.swapaxes(y, -1, -2), x.shape)
        if not b.requires_grad:
            gb = None
        elif y.ndim == 2:
            # shared weight: fold all leading axes into one product
            gb = x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.swapaxes(x, -1, -2) @ g, y.shape)
        return ga, gb

    if y.ndim == 2 and x.ndim > 2:
        out = (x.reshape(-1, x.shape[-1]) @ y).reshape(x.shape[:-1] + (y.shape[-1],))
    else:
        out = x @ y
    return Tensor._make(out, (a, b), backward)


def add(a, b) -> Tensor:
    return _as_tensor(a) + b


def mul(a, b) -> Tensor:
    return _as_tensor(a) * b


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    ndim = tensors[0].ndim
    ax = axis % ndim
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            g[(slice(None),) * ax + (slice(bounds[i], bounds[i + 1]),)] for i in range(len(tensors))
        )

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), backward)


def softmax(logits: Tensor) -> Tensor:
    """Softmax over the last axis.

    Rows where every entry carries the mask value are rejected: a fully
    masked step has no feasible action.
    """
    logits = _as_tensor(logits)
    x = logits.data
    if x.size and np.any(np.all(x <= MASK_VALUE / 2, axis=-1)):
        raise ValueError("softmax over a fully masked row")
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return Tensor._make(out, (logits,), backward)


def masked_add(logits: Tensor, mask) -> Tensor:
    """Add an additive mask (0 or ``MASK_VALUE``); the mask carries no gradient."""
    mask = np.asarray(mask, dtype=np.float64)
    return _as_tensor(logits) + Tensor(mask)


def sigmoid(x: Tensor) -> Tensor:
    return _as_tensor(x).sigmoid()


def tanh(x: Tensor) -> Tensor:
    return _as_tensor(x).tanh()


def log(x: Tensor) -> Tensor:
    return _as_tensor(x).log()


# ---------------------------------------------------------------------------
# parameters, optimizer, checkpoints
# ---------------------------------------------------------------------------


class ParameterStore:
    """Named parameters in insertion order plus Adam moment buffers."""

    def __init__(self):
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.step_count = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64, copy=True), requires_grad=True)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {
            name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in self.params.items()
        }

    def n_values(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def copy(self) -> "ParameterStore":
        other = ParameterStore()
        for name, p in self.params.items():
            other.add(name, p.data)
        other.moments = {k: (m.copy(), v.copy()) for k, (m, v) in self.moments.items()}
        other.step_count = self.step_count
        return other

    def state_arrays(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict((name, p.data) for name, p in self.params.items())
        for name in self.params:
            if name in self.moments:
                m, v = self.moments[name]
                out[f"__adam_m__/{name}"] = m
                out[f"__adam_v__/{name}"] = v
        out["__adam_step__"] = np.array(float(self.step_count))
        return out

    @classmethod
    def from_arrays(cls, arrays) -> "ParameterStore":
        store = cls()
        for name, value in arrays.items():
            if not name.startswith("__"):
                store.add(name, value)
        for name in store.params:
            m = arrays.get(f"__adam_m__/{name}")
            v = arrays.get(f"__adam_v__/{name}")
            if m is not None and v is not None:
                store.moments[name] = (np.array(m, copy=True), np.array(v, copy=True))
        if "__adam_step__" in arrays:
            store.step_count = int(arrays["__adam_step__"])
        return store


def adam_step(
    store: ParameterStore,
    grads: dict | None = None,
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> bool:
    """Apply one bias-corrected Adam update in place.

    ``grads`` defaults to the ``.grad`` buffers of the store. Returns False
    (and leaves the store untouched) when any gradient is non-finite.
    """
    if grads is None:
        grads = store.grads()
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            logger.warning("non-finite gradient for %s; skipping Adam step", name)
            return False
    store.step_count += 1
    k = store.step_count
    c1 = 1.0 - beta1**k
    c2 = 1.0 - beta2**k
    for name, p in store.params.items():
        g = grads.get(name)
        if g is None:
            continue
        m, v = store.moments.get(name, (np.zeros_like(p.data), np.zeros_like(p.data)))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        store.moments[name] = (m, v)
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return True


CHECKPOINT_MAGIC = b"ATCOCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(arrays, path) -> None:
    """Write named float64 arrays to the binary checkpoint layout.

    Layout (all integers little-endian): 8-byte magic, u32 version, u32 count,
    then per entry u32 name length, UTF-8 name, u32 ndim, ndim x u64 dims and
    the row-major values as little-endian float64.
    """
    if isinstance(arrays, ParameterStore):
        arrays = arrays.state_arrays()
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(arrays))]
    for name, value in arrays.items():
        value = np.array(value, dtype="<f8", order="C")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}Q", *value.shape))
        chunks.append(value.tobytes(order="C"))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(chunks))


def load_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    buf = Path(path).read_bytes()
    if buf[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file")
    try:
        version, count = struct.unpack_from("<II", buf, 8)
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos = 16
        out = OrderedDict()
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos : pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
            pos += 8 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if pos + 8 * size > len(buf):
                raise CheckpointError("truncated checkpoint")
            out[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * size
    except struct.error as exc:
        raise CheckpointError("truncated checkpoint") from exc
    return out
