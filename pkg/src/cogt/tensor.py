"""Dense tensors with a reverse-mode tape, covering exactly the decoder's operations.

Default precision is float32; float64 exists for verification (grad checking,
score equality). Kernels are single-threaded numpy; disallowed attention keys
get probability exactly 0.0 so independence checks can be bitwise.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import CogtError


class ShapeMismatch(CogtError):
    pass


class EmptyMaskRow(CogtError):
    pass


class NonDeterministicFunction(CogtError):
    pass


def derive_seed(seed: int, *labels) -> int:
    """Stable 64-bit sub-seed from a root seed and a label path."""
    msg = repr((int(seed),) + tuple(str(x) for x in labels)).encode()
    return int.from_bytes(hashlib.sha256(msg).digest()[:8], "little")


def philox(seed: int, *labels) -> np.random.Generator:
    """Counter-based generator keyed by (seed, labels); independent per key."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(derive_seed(seed, *labels))))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return self.data.item()

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"


def tensor(data, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=requires_grad)


_tls = threading.local()


def _stack() -> list:
    if not hasattr(_tls, "stack"):
        _tls.stack = []
    return _tls.stack


class Tape:
    """Records operations in creation order; backward walks the exact reverse."""

    def __init__(self):
        self._nodes: list[tuple[Tensor, object]] = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def backward(self, loss: Tensor) -> None:
        if loss.data.shape != ():
            raise ShapeMismatch("backward needs a scalar loss")
        loss.grad = np.ones((), dtype=loss.data.dtype)
        for out, fn in reversed(self._nodes):
            if out.grad is not None:
                fn(out.grad)


def _record(out: Tensor, backward) -> None:
    stack = _stack()
    if stack and out.requires_grad:
        stack[-1]._nodes.append((out, backward))


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


def _need(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeMismatch(msg)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _need(a.data.ndim == 2 and b.data.ndim == 2, "matmul expects 2-d operands")
    _need(a.shape[1] == b.shape[0], f"matmul {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data, a.requires_grad or b.requires_grad)

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    _record(out, backward)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    bias = a.shape != b.shape
    if bias:
        _need(b.data.ndim == 1 and a.shape[-1] == b.shape[0], f"add {a.shape} + {b.shape}")
    out = Tensor(a.data + b.data, a.requires_grad or b.requires_grad)

    def backward(g):
        _accum(a, g)
        _accum(b, g.reshape(-1, b.shape[0]).sum(axis=0) if bias else g)

    _record(out, backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _need(a.shape == b.shape, f"mul {a.shape} * {b.shape}")
    out = Tensor(a.data * b.data, a.requires_grad or b.requires_grad)

    def backward(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    _record(out, backward)
    return out


def scale(a: Tensor, s: float) -> Tensor:
    c = a.data.dtype.type(s)
    out = Tensor(a.data * c, a.requires_grad)

    def backward(g):
        _accum(a, g * c)

    _record(out, backward)
    return out


def transpose(a: Tensor) -> Tensor:
    _need(a.data.ndim == 2, "transpose expects a matrix")
    out = Tensor(a.data.T, a.requires_grad)

    def backward(g):
        _accum(a, g.T)

    _record(out, backward)
    return out


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    _need(0 <= start and start + length <= a.shape[axis], f"narrow [{start}:{start+length}) on {a.shape}")
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(a.data[idx], a.requires_grad)

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        _accum(a, full)

    _record(out, backward)
    return out


def concat(parts: list[Tensor], axis: int) -> Tensor:
    _need(len(parts) > 0, "concat of nothing")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis), any(p.requires_grad for p in parts))
    sizes = [p.shape[axis] for p in parts]

    def backward(g):
        offset = 0
        for p, size in zip(parts, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offset, offset + size)
            _accum(p, g[tuple(idx)])
            offset += size

    _record(out, backward)
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum(), a.requires_grad)

    def backward(g):
        _accum(a, np.full_like(a.data, g))

    _record(out, backward)
    return out


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    _need(x.data.ndim == 2, "layernorm expects (rows, features)")
    d = x.shape[1]
    _need(gain.shape == (d,) and bias.shape == (d,), "layernorm gain/bias shape")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data, x.requires_grad or gain.requires_grad or bias.requires_grad)

    def backward(g):
        _accum(gain, (g * xhat).sum(axis=0))
        _accum(bias, g.sum(axis=0))
        if x.requires_grad:
            dxhat = g * gain.data
            term = dxhat - dxhat.mean(axis=1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
            _accum(x, inv * term)

    _record(out, backward)
    return out


def softmax_masked(logits: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis restricted to allowed keys; disallowed get exactly 0."""
    _need(mask.shape == logits.shape, f"mask {mask.shape} vs logits {logits.shape}")
    if not mask.any(axis=-1).all():
        raise EmptyMaskRow("softmax row with no allowed key")
    neg_inf = logits.data.dtype.type(-np.inf)
    xs = np.where(mask, logits.data, neg_inf)
    m = xs.max(axis=-1, keepdims=True)
    e = np.exp(xs - m)  # exp(-inf) = 0.0 exactly for disallowed keys
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p, logits.requires_grad)

    def backward(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        _accum(logits, p * (g - dot))

    _record(out, backward)
    return out


def gelu(x: Tensor) -> Tensor:
    """Exact gaussian-error-function form."""
    t = x.data.dtype.type
    phi = t(0.5) * (t(1.0) + erf(x.data * t(1.0 / np.sqrt(2.0))))
    out = Tensor(x.data * phi, x.requires_grad)

    def backward(g):
        pdf = np.exp(x.data * x.data * t(-0.5)) * t(1.0 / np.sqrt(2.0 * np.pi))
        _accum(x, g * (phi + x.data * pdf))

    _record(out, backward)
    return out


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    _need(table.data.ndim == 2 and ids.ndim == 1, "embedding_lookup shapes")
    _need(ids.size == 0 or (ids.min() >= 0 and ids.max() < table.shape[0]), "embedding id out of range")
    out = Tensor(table.data[ids], table.requires_grad)

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        _accum(table, full)

    _record(out, backward)
    return out


def dropout(x: Tensor, p: float, train: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not train or p == 0.0:
        return x
    if rng is None:
        raise NonDeterministicFunction("training-mode dropout needs a seeded generator")
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype)
    factor = keep * x.data.dtype.type(1.0 / (1.0 - p))
    out = Tensor(x.data * factor, x.requires_grad)

    def backward(g):
        _accum(x, g * factor)

    _record(out, backward)
    return out


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Per-row negative log-likelihood of the target id; returns a vector."""
    targets = np.asarray(targets, dtype=np.int64)
    _need(logits.data.ndim == 2 and targets.shape == (logits.shape[0],), "cross_entropy shapes")
    n = logits.shape[0]
    m = logits.data.max(axis=1, keepdims=True)
    z = logits.data - m
    se = np.exp(z).sum(axis=1, keepdims=True)
    lse = np.log(se) + m
    rows = np.arange(n)
    out = Tensor(lse[:, 0] - logits.data[rows, targets], logits.requires_grad)

    def backward(g):
        p = np.exp(z) / se
        d = p * g[:, None]
        d[rows, targets] -= g
        _accum(logits, d)

    _record(out, backward)
    return out


def log_softmax_np(rows: np.ndarray) -> np.ndarray:
    """Plain numpy log-softmax over the last axis (inference-side scoring)."""
    m = rows.max(axis=-1, keepdims=True)
    z = rows - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class GradCheckReport:
    per_param: dict[str, float]
    tol: float
    passed: bool

    @property
    def max_rel(self) -> float:
        return max(self.per_param.values()) if self.per_param else 0.0


# Relative error floor: float64 central differences carry ~1e-10 absolute noise,
# so near-zero gradients are compared against this scale instead of themselves.
REL_FLOOR = 1e-3


def grad_check(f, params: dict[str, Tensor], h: float = 1e-5, tol: float = 1e-6) -> GradCheckReport:
    """Compare tape gradients of scalar f() against central finite differences."""
    for name, t in params.items():
        if t.data.dtype != np.float64:
            raise CogtError(f"grad_check requires float64 parameters, {name} is {t.data.dtype}")
    v1 = f().data.item()
    v2 = f().data.item()
    if v1 != v2:
        raise NonDeterministicFunction("two forward passes disagree")
    zero_grads(params.values())
    with Tape() as tape:
        tape.backward(f())
    analytic = {name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy()) for name, t in params.items()}
    zero_grads(params.values())
    report: dict[str, float] = {}
    for name, t in params.items():
        flat = t.data.reshape(-1)
        aflat = analytic[name].reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f().data.item()
            flat[i] = orig - h
            fm = f().data.item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            a = aflat[i]
            if a != num:
                worst = max(worst, abs(a - num) / max(abs(a), abs(num), REL_FLOOR))
        report[name] = worst
    return GradCheckReport(per_param=report, tol=tol, passed=all(v < tol for v in report.values()))
