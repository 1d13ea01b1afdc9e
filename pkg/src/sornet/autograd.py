"""NCHW tensors and a tape-based reverse-mode differentiation engine.

Operations record themselves on the innermost active :class:`Tape`; outside
a tape they are plain numpy computations.  Only scalar broadcasting is
supported, every other shape mismatch raises ``ValueError``.

Backward rules are module-level functions looked up at call time so a test
can replace one (the gradient checker must then fail).
"""

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import backend


def _contiguous(a):
    return a if a.flags.c_contiguous else a.copy(order="C")


class Tensor:
    """An n-d array of reals (float32 unless float64 is asked for)."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=np.float32):
        self.data = _contiguous(np.asarray(data, dtype=dtype))
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, arr):
        t = cls.__new__(cls)
        t.data = _contiguous(np.asarray(arr))
        t.requires_grad = False
        t.name = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, c):
        return scalar_mul(self, c)

    __rmul__ = __mul__


@dataclass
class Node:
    inputs: tuple
    output: Tensor
    needs: tuple
    backward: Callable


@dataclass
class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; operations executed inside are appended in
    execution order, which is a topological order by construction.
    """

    nodes: list = field(default_factory=list)

    def __post_init__(self):
        self._produced = set()

    def tracks(self, t):
        return t.requires_grad or id(t) in self._produced

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False


_local = threading.local()


def _stack():
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def _record(out, inputs, backward_fn):
    tapes = _stack()
    if not tapes:
        return out
    tape = tapes[-1]
    needs = tuple(isinstance(t, Tensor) and tape.tracks(t) for t in inputs)
    if any(needs):
        tape.nodes.append(Node(tuple(inputs), out, needs, backward_fn))
        tape._produced.add(id(out))
    return out


def _check_same(op, x, y):
    if x.shape != y.shape:
        raise ValueError(f"{op}: shape mismatch {x.shape} vs {y.shape}")


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    raise TypeError(f"expected Tensor, got {type(x).__name__}")


# ---------------------------------------------------------------- conv2d

def _pad(x, kh, kw):
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=x.dtype)
    out[:, :, ph:ph + h, pw:pw + w] = x
    return out


def _conv_grad_input(dy, w):
    kh, kw = w.shape[2:]
    # correlation with the spatially flipped, channel-transposed kernel
    wt = np.ascontiguousarray(w.transpose(2, 3, 0, 1)[::-1, ::-1])
    return backend.conv_same(_pad(dy, kh, kw), wt)


def _conv_grad_kernel(xp, dy, kh, kw):
    return backend.kernel_grad(xp, dy, kh, kw)


def conv2d(x, w, bias=None):
    """Stride-1, zero-padded ("same") cross-correlation plus optional bias."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(f"conv2d: expected rank-4 input and kernel, got {x.shape} and {w.shape}")
    c_out, c_in, kh, kw = w.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d: kernel window must be odd, got {kh}x{kw}")
    if x.shape[1] != c_in:
        raise ValueError(f"conv2d: input {x.shape} does not match kernel {w.shape}")
    if bias is not None and bias.shape != (c_out,):
        raise ValueError(f"conv2d: bias {bias.shape} does not match kernel {w.shape}")
    dtype = np.result_type(x.data, w.data)
    xd = x.data.astype(dtype, copy=False)
    wd = w.data.astype(dtype, copy=False)
    xp = _pad(xd, kh, kw)
    out = backend.conv_same(xp, np.ascontiguousarray(wd.transpose(2, 3, 1, 0)))
    if bias is not None:
        out += bias.data.astype(dtype, copy=False)[None, :, None, None]

    def backward(g, needs):
        gx = _conv_grad_input(g, wd) if needs[0] else None
        gw = _conv_grad_kernel(xp, g, kh, kw) if needs[1] else None
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)) if needs[2] else None)
        return grads

    inputs = (x, w) if bias is None else (x, w, bias)
    return _record(Tensor._wrap(out), inputs, backward)


# ---------------------------------------------------------------- pointwise

def _ipow(x, n):
    # repeated products: numpy's generic power is an order of magnitude slower
    out = x.copy()
    for _ in range(n - 1):
        out *= x
    return out


def _pow_grad(x, n, g):
    if n == 1:
        return g.copy()
    out = _ipow(x, n - 1)
    out *= g
    out *= x.dtype.type(n)
    return out


def elem_pow(x, n):
    """Element-wise x**n for integer n >= 1."""
    if int(n) != n or n < 1:
        raise ValueError(f"elem_pow: exponent must be a positive integer, got {n}")
    n = int(n)
    xd = x.data
    out = _ipow(xd, n)

    def backward(g, needs):
        return [_pow_grad(xd, n, g)]

    return _record(Tensor._wrap(out), (x,), backward)


def _tanh_grad(y, g):
    return (1 - y * y) * g


def _relu_grad(x, g):
    return np.where(x > 0, g, 0).astype(g.dtype)


def activation(x, kind):
    if kind == "tanh":
        y = np.tanh(x.data)
        return _record(Tensor._wrap(y), (x,), lambda g, needs: [_tanh_grad(y, g)])
    if kind == "relu":
        xd = x.data
        y = np.maximum(xd, 0)
        return _record(Tensor._wrap(y), (x,), lambda g, needs: [_relu_grad(xd, g)])
    raise ValueError(f"unknown activation {kind!r}")


def tanh(x):
    return activation(x, "tanh")


def relu(x):
    return activation(x, "relu")


def add(x, y):
    if not isinstance(y, Tensor):
        return add_scalar(x, y)
    _check_same("add", x, y)
    return _record(Tensor._wrap(x.data + y.data), (x, y), lambda g, needs: [g, g])


def sub(x, y):
    if not isinstance(y, Tensor):
        return add_scalar(x, -y)
    _check_same("sub", x, y)
    return _record(Tensor._wrap(x.data - y.data), (x, y), lambda g, needs: [g, -g])


def add_scalar(x, c):
    out = x.data + x.dtype.type(c)
    return _record(Tensor._wrap(out), (x,), lambda g, needs: [g])


def scalar_mul(x, c):
    c = x.dtype.type(c)
    return _record(Tensor._wrap(x.data * c), (x,), lambda g, needs: [g * c])


def _mean_abs_grad(diff, count, g):
    # sign(0) == 0: ties contribute no gradient
    return np.sign(diff) * (g / count)


def mean_abs(x, y):
    """Mean absolute difference (the l1 loss), a scalar tensor."""
    _check_same("mean_abs", x, y)
    diff = x.data - y.data
    out = np.asarray(np.mean(np.abs(diff), dtype=np.float64), dtype=diff.dtype)

    def backward(g, needs):
        gx = _mean_abs_grad(diff, diff.size, g).astype(diff.dtype)
        return [gx, -gx]

    return _record(Tensor._wrap(out), (x, y), backward)


def weighted_sum(x, weights):
    """sum(x * weights) for a constant weight array; a smooth scalar probe."""
    wd = np.asarray(weights, dtype=x.dtype)
    if wd.shape != x.shape:
        raise ValueError(f"weighted_sum: shape mismatch {x.shape} vs {wd.shape}")
    out = np.asarray(np.sum(x.data.astype(np.float64) * wd), dtype=x.dtype)
    return _record(Tensor._wrap(out), (x,), lambda g, needs: [g * wd])


# ---------------------------------------------------------------- pixel shuffle

def _shuffle(a, r):
    n, c, h, w = a.shape
    return a.reshape(n, c // (r * r), r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(
        n, c // (r * r), h * r, w * r)


def _unshuffle(a, r):
    n, c, h, w = a.shape
    return a.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4).reshape(
        n, c * r * r, h // r, w // r)


def pixel_shuffle(x, r):
    """out[n, c, h*r + i, w*r + j] = in[n, c*r*r + i*r + j, h, w]."""
    if r < 2:
        raise ValueError(f"pixel_shuffle: factor must be >= 2, got {r}")
    if x.data.ndim != 4 or x.shape[1] % (r * r):
        raise ValueError(f"pixel_shuffle: {x.shape} channels not divisible by {r * r}")
    out = np.ascontiguousarray(_shuffle(x.data, r))
    return _record(Tensor._wrap(out), (x,),
                   lambda g, needs: [np.ascontiguousarray(_unshuffle(g, r))])


def pixel_unshuffle(x, r):
    """Index inverse of :func:`pixel_shuffle` (not differentiable)."""
    if x.shape[2] % r or x.shape[3] % r:
        raise ValueError(f"pixel_unshuffle: {x.shape} not divisible by {r}")
    return Tensor._wrap(np.ascontiguousarray(_unshuffle(x.data, r)))


# ---------------------------------------------------------------- backward

class Gradients(dict):
    """Mapping Tensor -> gradient array (keyed by tensor identity)."""


def backward(loss, tape, params: Optional[Sequence[Tensor]] = None):
    """Reverse-mode accumulation of d(loss)/d(leaf) over ``tape``.

    Returns gradients for every requires_grad leaf seen on the tape and for
    every tensor in ``params``; unused parameters get zero arrays.
    """
    if loss.size != 1 or loss.data.ndim != 0:
        raise ValueError(f"backward: loss must be a scalar, got shape {loss.shape}")
    grads = {id(loss): np.ones((), dtype=loss.dtype)}
    leaves = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward(g, node.needs)
        for inp, need, gi in zip(node.inputs, node.needs, in_grads):
            if not need or gi is None:
                continue
            if inp.requires_grad:
                leaves[id(inp)] = inp
            key = id(inp)
            grads[key] = gi if key not in grads else grads[key] + gi
    out = Gradients()
    for key, t in leaves.items():
        out[t] = np.asarray(grads[key], dtype=t.dtype).reshape(t.shape)
    for p in params or ():
        if p not in out:
            out[p] = np.zeros_like(p.data)
    return out


def finite_diff_check(fn, params, eps=1e-3, max_coords=16, rng=None,
                      precision="mixed"):
    """Max relative error between backprop and central differences.

    ``fn()`` must build a scalar loss from ``params`` (closed over).  Up to
    ``max_coords`` coordinates per parameter are probed.

    precision:
      "float32"  both passes in the parameters' own dtype
      "mixed"    analytic gradient as stored (float32), perturbed evaluations
                 in float64 so the difference quotient's rounding stays far
                 below the gradient being checked
      "float64"  both passes in float64; for deep compositions whose float32
                 gradients are limited by cancellation rather than by the rules
    """
    if precision not in ("float32", "mixed", "float64"):
        raise ValueError(f"unknown precision {precision!r}")
    rng = np.random.default_rng(0) if rng is None else rng
    originals = [p.data for p in params]
    worst = 0.0
    try:
        if precision == "float64":
            for p in params:
                p.data = p.data.astype(np.float64)
        with Tape() as tape:
            loss = fn()
        analytic = backward(loss, tape, params)
        if precision == "mixed":
            for p in params:
                p.data = p.data.astype(np.float64)
        for p in params:
            g = analytic[p].reshape(-1)
            flat_idx = np.arange(p.size)
            if p.size > max_coords:
                flat_idx = np.sort(rng.choice(p.size, size=max_coords, replace=False))
            base = p.data.copy()
            for i in flat_idx:
                pos = base.copy()
                neg = base.copy()
                pos.reshape(-1)[i] += eps
                neg.reshape(-1)[i] -= eps
                p.data = pos
                f_pos = float(fn().data)
                p.data = neg
                f_neg = float(fn().data)
                p.data = base
                numeric = (f_pos - f_neg) / (2 * eps)
                a = float(g[i])
                err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                worst = max(worst, err)
    finally:
        for p, orig in zip(params, originals):
            p.data = orig
    return worst
