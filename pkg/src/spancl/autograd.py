"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

A Tensor wraps an ndarray plus a tuple of (parent, vector-Jacobian closure)
pairs. backward() runs one reverse topological sweep from a scalar root,
calling each closure exactly once and accumulating into .grad. Reductions
(sum, mean, logsumexp) and matmul/einsum accumulate in float64 and cast
back to the operand dtype, so float32 graphs keep 64-bit accumulators.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "DimensionError",
    "GradientError",
    "as_tensor",
    "no_grad",
    "add",
    "sub",
    "mul",
    "matmul",
    "concat",
    "stack",
    "reshape",
    "transpose",
    "take",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "softplus",
    "logsumexp",
    "tsum",
    "tmean",
    "tmax",
    "pow_const",
    "l2_normalize",
    "dropout",
    "pairwise_bilinear",
    "backward",
    "finite_diff_grad",
    "Adam",
]

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _GRAD_ENABLED
    saved = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = saved


class DimensionError(ValueError):
    """Operand shapes incompatible for the requested operation."""


class GradientError(RuntimeError):
    """Backward-contract violations and non-finite gradients."""


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents")

    def __init__(self, value, requires_grad: bool = False, parents: tuple = ()):
        self.value = np.asarray(value)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents = parents

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def item(self) -> float:
        return float(self.value)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.value, dtype)

    def backward(self) -> None:
        backward(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul(self, 1.0 / other)
        return mul(self, pow_const(other, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    @property
    def T(self):
        return transpose(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    """Wrap x as a constant Tensor; python scalars adopt `like`'s dtype so
    float32 graphs are not silently promoted."""
    if isinstance(x, Tensor):
        return x
    if like is not None and isinstance(x, (int, float)):
        return Tensor(np.asarray(x, dtype=like.dtype))
    return Tensor(np.asarray(x))


def _result(value: np.ndarray, pairs) -> Tensor:
    if _GRAD_ENABLED:
        tracked = tuple((t, fn) for t, fn in pairs if t.requires_grad)
        if tracked:
            return Tensor(value, requires_grad=True, parents=tracked)
    return Tensor(value)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    g = np.asarray(g)
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """matmul with float64 accumulation, cast back to the promoted dtype."""
    out_dtype = np.result_type(a.dtype, b.dtype)
    if out_dtype == np.float64:
        return a @ b
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(out_dtype)


def _es(spec: str, *ops: np.ndarray) -> np.ndarray:
    """einsum with float64 accumulation, cast back to the promoted dtype."""
    out_dtype = np.result_type(*[o.dtype for o in ops])
    if out_dtype == np.float64:
        return np.einsum(spec, *ops)
    return np.einsum(spec, *[o.astype(np.float64) for o in ops]).astype(out_dtype)


def _binary(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    if isinstance(b, Tensor):
        return as_tensor(a, like=b), b
    return as_tensor(a), as_tensor(b)


def add(a, b) -> Tensor:
    a, b = _binary(a, b)
    try:
        value = a.value + b.value
    except ValueError as exc:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from exc
    return _result(
        value,
        [
            (a, lambda g: _unbroadcast(g, a.shape)),
            (b, lambda g: _unbroadcast(g, b.shape)),
        ],
    )


def sub(a, b) -> Tensor:
    a, b = _binary(a, b)
    try:
        value = a.value - b.value
    except ValueError as exc:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} do not broadcast") from exc
    return _result(
        value,
        [
            (a, lambda g: _unbroadcast(g, a.shape)),
            (b, lambda g: _unbroadcast(-g, b.shape)),
        ],
    )


def mul(a, b) -> Tensor:
    a, b = _binary(a, b)
    try:
        value = a.value * b.value
    except ValueError as exc:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from exc
    return _result(
        value,
        [
            (a, lambda g: _unbroadcast(g * b.value, a.shape)),
            (b, lambda g: _unbroadcast(g * a.value, b.shape)),
        ],
    )


def matmul(a, b) -> Tensor:
    a, b = _binary(a, b)
    av, bv = a.value, b.value
    if av.ndim == 0 or bv.ndim == 0 or av.ndim > 2 or bv.ndim > 2:
        raise DimensionError(f"matmul: unsupported ranks {av.shape} @ {bv.shape}")
    if av.shape[-1] != bv.shape[0]:
        raise DimensionError(f"matmul: shapes {av.shape} and {bv.shape} do not align")
    value = _mm(av, bv)
    if av.ndim == 2 and bv.ndim == 2:
        vjps = [
            (a, lambda g: _mm(g, bv.T)),
            (b, lambda g: _mm(av.T, g)),
        ]
    elif av.ndim == 2 and bv.ndim == 1:
        vjps = [
            (a, lambda g: np.outer(g, bv).astype(av.dtype)),
            (b, lambda g: _mm(av.T, g)),
        ]
    elif av.ndim == 1 and bv.ndim == 2:
        vjps = [
            (a, lambda g: _mm(bv, g)),
            (b, lambda g: np.outer(av, g).astype(bv.dtype)),
        ]
    else:  # 1-D @ 1-D -> scalar
        vjps = [
            (a, lambda g: g * bv),
            (b, lambda g: g * av),
        ]
    return _result(value, vjps)


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(p) for p in parts]
    if not ts:
        raise DimensionError("concat: need at least one operand")
    try:
        value = np.concatenate([t.value for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(
            f"concat: shapes {[t.shape for t in ts]} do not align on axis {axis}"
        ) from exc
    vjps = []
    start = 0
    for t in ts:
        stop = start + t.shape[axis]

        def vjp(g, _s=start, _e=stop):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(_s, _e)
            return g[tuple(sl)]

        vjps.append((t, vjp))
        start = stop
    return _result(value, vjps)


def stack(parts: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(p) for p in parts]
    if not ts:
        raise DimensionError("stack: need at least one operand")
    try:
        value = np.stack([t.value for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(
            f"stack: shapes {[t.shape for t in ts]} differ"
        ) from exc
    vjps = []
    for i, t in enumerate(ts):
        def vjp(g, _i=i):
            return np.take(g, _i, axis=axis)

        vjps.append((t, vjp))
    return _result(value, vjps)


def reshape(t, shape) -> Tensor:
    t = as_tensor(t)
    value = t.value.reshape(shape)
    return _result(value, [(t, lambda g: np.asarray(g).reshape(t.shape))])


def transpose(t, axes=None) -> Tensor:
    t = as_tensor(t)
    value = np.transpose(t.value, axes)
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))
    return _result(value, [(t, lambda g: np.transpose(g, inv))])


def _scatter_add(out: np.ndarray, key, g: np.ndarray) -> None:
    def advanced(k) -> bool:
        return isinstance(k, (np.ndarray, list)) or (
            isinstance(k, tuple) and any(isinstance(x, (np.ndarray, list)) for x in k)
        )

    if advanced(key):
        np.add.at(out, key, g)
    else:
        out[key] += g


def take(t, key) -> Tensor:
    t = as_tensor(t)
    try:
        value = t.value[key]
    except IndexError as exc:
        raise DimensionError(f"take: index {key!r} invalid for shape {t.shape}") from exc

    def vjp(g):
        out = np.zeros_like(t.value)
        _scatter_add(out, key, g)
        return out

    return _result(value, [(t, vjp)])


def tanh(t) -> Tensor:
    t = as_tensor(t)
    value = np.tanh(t.value)
    return _result(value, [(t, lambda g: g * (1.0 - value * value))])


def sigmoid(t) -> Tensor:
    t = as_tensor(t)
    x = t.value
    value = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x)))).astype(x.dtype)
    return _result(value, [(t, lambda g: g * value * (1.0 - value))])


def exp(t) -> Tensor:
    t = as_tensor(t)
    value = np.exp(t.value)
    return _result(value, [(t, lambda g: g * value)])


def log(t) -> Tensor:
    t = as_tensor(t)
    value = np.log(t.value)
    return _result(value, [(t, lambda g: g / t.value)])


def softplus(t) -> Tensor:
    """log(1 + e^x), computed as logaddexp(0, x); finite for all finite x."""
    t = as_tensor(t)
    x = t.value
    value = np.logaddexp(np.zeros((), dtype=x.dtype), x)

    def vjp(g):
        s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        return g * s.astype(x.dtype)

    return _result(value, [(t, vjp)])


def logsumexp(t, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Max-shifted log-sum-exp with float64 accumulation of the inner sum."""
    t = as_tensor(t)
    x = t.value
    m = np.max(x, axis=axis, keepdims=True)
    s = np.sum(np.exp(x - m), axis=axis, keepdims=True, dtype=np.float64)
    out_k = (m + np.log(s).astype(x.dtype)).astype(x.dtype)
    if keepdims or axis is None and out_k.ndim == 0:
        value = out_k
    elif axis is None:
        value = out_k.reshape(())
    else:
        value = np.squeeze(out_k, axis=axis)

    def vjp(g):
        gk = np.asarray(g)
        if not keepdims and axis is not None:
            gk = np.expand_dims(gk, axis)
        w = np.exp(x - out_k)
        return (gk * w).astype(x.dtype)

    return _result(value, [(t, vjp)])


def tsum(t, axis: int | None = None, keepdims: bool = False) -> Tensor:
    t = as_tensor(t)
    x = t.value
    value = np.sum(x, axis=axis, keepdims=keepdims, dtype=np.float64).astype(x.dtype)

    def vjp(g):
        gk = np.asarray(g)
        if not keepdims and axis is not None:
            gk = np.expand_dims(gk, axis)
        return np.broadcast_to(gk, x.shape).astype(x.dtype)

    return _result(value, [(t, vjp)])


def tmean(t, axis: int | None = None, keepdims: bool = False) -> Tensor:
    t = as_tensor(t)
    x = t.value
    count = x.size if axis is None else x.shape[axis]
    value = np.mean(x, axis=axis, keepdims=keepdims, dtype=np.float64).astype(x.dtype)

    def vjp(g):
        gk = np.asarray(g)
        if not keepdims and axis is not None:
            gk = np.expand_dims(gk, axis)
        return (np.broadcast_to(gk, x.shape) / count).astype(x.dtype)

    return _result(value, [(t, vjp)])


def tmax(t, axis: int | None = None) -> Tensor:
    """Max over an axis; the gradient routes to the first (lowest-index)
    maximizing element of each slice."""
    t = as_tensor(t)
    x = t.value
    if axis is None:
        value = np.max(x)
        idx = int(np.argmax(x))

        def vjp(g):
            out = np.zeros_like(x)
            out.reshape(-1)[idx] = g
            return out

    else:
        value = np.max(x, axis=axis)
        idx = np.argmax(x, axis=axis)

        def vjp(g):
            out = np.zeros_like(x)
            np.put_along_axis(
                out, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis
            )
            return out

    return _result(value, [(t, vjp)])


def pow_const(t, exponent: float) -> Tensor:
    t = as_tensor(t)
    x = t.value
    value = x**exponent
    return _result(value, [(t, lambda g: g * exponent * x ** (exponent - 1.0))])


def l2_normalize(t, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """x / sqrt(sum(x^2, axis) + eps), composed from differentiable primitives."""
    t = as_tensor(t)
    sq = tsum(mul(t, t), axis=axis, keepdims=True)
    inv = pow_const(add(sq, eps), -0.5)
    return mul(t, inv)


def dropout(t, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout with an explicit generator; rate 0 is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    t = as_tensor(t)
    if rate == 0.0:
        return t
    keep = rng.random(t.shape) >= rate
    mask = (keep / (1.0 - rate)).astype(t.dtype)
    return _result(t.value * mask, [(t, lambda g: g * mask)])


def pairwise_bilinear(hf, u, hb) -> Tensor:
    """R[i, j, :] = hf[i] . U . hb[j] for a rank-3 U of shape (h1, r, h2)."""
    hf, u, hb = as_tensor(hf), as_tensor(u), as_tensor(hb)
    if hf.ndim != 2 or hb.ndim != 2 or u.ndim != 3:
        raise DimensionError(
            f"pairwise_bilinear: need (n,h1), (h1,r,h2), (m,h2); got "
            f"{hf.shape}, {u.shape}, {hb.shape}"
        )
    if hf.shape[1] != u.shape[0] or hb.shape[1] != u.shape[2]:
        raise DimensionError(
            f"pairwise_bilinear: shapes {hf.shape}, {u.shape}, {hb.shape} do not contract"
        )
    fv, uv, bv = hf.value, u.value, hb.value
    value = _es("ih,hrk,jk->ijr", fv, uv, bv)
    return _result(
        value,
        [
            (hf, lambda g: _es("ijr,hrk,jk->ih", g, uv, bv)),
            (u, lambda g: _es("ijr,ih,jk->hrk", g, fv, bv)),
            (hb, lambda g: _es("ijr,ih,hrk->jk", g, fv, uv)),
        ],
    )


def backward(root: Tensor) -> None:
    """Reverse sweep from a scalar root; every reachable node is processed
    exactly once and gradients accumulate additively across fan-out."""
    if root.value.size != 1:
        raise GradientError(
            f"backward root must be a scalar, got shape {root.shape}"
        )
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, processed = stack_.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in visited:
                stack_.append((parent, False))
    root.grad = np.ones_like(root.value)
    for node in reversed(topo):
        g = node.grad
        if g is None:
            continue
        for parent, vjp in node._parents:
            pg = np.asarray(vjp(g))
            if parent.grad is None:
                parent.grad = pg.astype(parent.dtype, copy=True)
            else:
                parent.grad = parent.grad + pg.astype(parent.dtype, copy=False)


def finite_diff_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central finite differences of a scalar function, evaluated in float64."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        grad[idx] = (float(f(xp)) - float(f(xm))) / (2.0 * h)
        it.iternext()
    return grad


class Adam:
    """Adam over a dict of named parameter tensors.

    Moments live in the parameter dtype. step() raises GradientError naming
    the parameter if its gradient is non-finite; a missing gradient counts
    as zero, which leaves the parameter unchanged.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self._m = {k: np.zeros_like(p.value) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.value) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.value)
            g = np.asarray(g, dtype=p.value.dtype)
            if not np.all(np.isfinite(g)):
                raise GradientError(f"non-finite gradient for parameter {name!r}")
            m = self._m[name]
            v = self._v[name]
            m[...] = self.beta1 * m + (1.0 - self.beta1) * g
            v[...] = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            p.value = p.value - self.lr * mhat / (np.sqrt(vhat) + self.eps)
