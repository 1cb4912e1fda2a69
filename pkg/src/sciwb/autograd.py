"""Reverse-mode automatic differentiation on numpy buffers.

A :class:`Tensor` wraps a float32/float64 ``numpy.ndarray``. Every
differentiable operation records its parents and a backward closure on
the produced tensor; :meth:`Tensor.backward` replays those closures in
reverse topological order, accumulating into ``.grad``.

Only the operators needed by the reconstruction networks and the
unfolded solver are provided: elementwise arithmetic with broadcasting,
reductions, reshapes/slicing, ReLU, sigmoid, strided 2-D convolution,
pixel shuffle, global average pooling, and the two training losses.

The recording structures are per-result (each tensor owns its slice of
the graph), so independent forward passes may run on separate threads;
a single graph must stay on one thread. Repeated ``backward`` calls
without clearing gradients accumulate, matching the usual convention.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .exceptions import ContractError, DimensionError

_FLOAT_DTYPES = (np.float32, np.float64)

# Module-level switch: when False, ops still compute but record nothing.
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the ``with`` block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _coerce(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype not in _FLOAT_DTYPES:
        arr = arr.astype(np.float32)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, inverting numpy broadcasting."""
    if grad.shape == shape:
        return grad
    # Leading axes added by broadcasting are summed away entirely.
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    # Axes that were size 1 in the original are summed with keepdims.
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A differentiable array node.

    Parameters
    ----------
    data : array_like
        Values; coerced to float32 unless already float32/float64.
    requires_grad : bool
        Leaf flag. Non-leaf tensors inherit it from their parents.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data: np.ndarray = _coerce(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    # -- construction helpers -------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: Sequence["Tensor"],
                backward: Callable[[], None]) -> "Tensor":
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def _accumulate(self, grad: np.ndarray) -> None:
        grad = grad.astype(self.data.dtype, copy=False)
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad += grad

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"expected a scalar tensor, got shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # -- backward ---------------------------------------------------------

    def backward(self) -> None:
        """Propagate d(self)/d(leaf) into every reachable ``.grad``.

        ``self`` must hold a single element (the scalar loss). Visits
        the recorded operations in reverse topological order using an
        iterative traversal, so graph depth is not limited by the
        interpreter recursion limit.
        """
        if self.data.size != 1:
            raise ContractError(
                f"backward() requires a scalar loss, got shape {self.data.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(parent) not in seen:
                    stack.append((parent, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward()
        # Only leaves keep accumulated gradients; interior nodes are
        # cleared so a second backward adds exactly one more unit.
        for node in order:
            if node._backward is not None:
                node.grad = None

    # -- elementwise arithmetic -------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(_coerce(other))
        a, b = self, other

        def backward():
            g = out.grad
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.data.shape))

        out = Tensor._result(a.data + b.data, (a, b), backward)
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        a = self
        out = Tensor._result(-a.data, (a,), lambda: a._accumulate(-out.grad))
        return out

    def __sub__(self, other) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(_coerce(other))
        return self + (-other)

    def __rsub__(self, other) -> "Tensor":
        return (-self) + other

    def __mul__(self, other) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(_coerce(other))
        a, b = self, other
        data = a.data * b.data

        def backward():
            g = out.grad
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))

        out = Tensor._result(data, (a, b), backward)
        return out

    __rmul__ = __mul__

    def __truediv__(self, scalar) -> "Tensor":
        if isinstance(scalar, Tensor):
            raise ContractError("tensor/tensor division is not provided; multiply by a reciprocal")
        return self * (1.0 / float(scalar))

    def scale(self, factor: float) -> "Tensor":
        """Multiply by a python scalar (kept distinct for readability)."""
        return self * float(factor)

    # -- reductions ---------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self
        data = a.data.sum(axis=axis, keepdims=keepdims)

        def backward():
            g = out.grad
            if not keepdims and axis is not None:
                axes = axis if isinstance(axis, tuple) else (axis,)
                g = np.expand_dims(g, axes)
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())

        out = Tensor._result(np.asarray(data), (a,), backward)
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = 1
            for ax in axes:
                count *= self.data.shape[ax]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(count))

    # -- shape manipulation --------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        out = Tensor._result(
            a.data.reshape(shape), (a,),
            lambda: a._accumulate(out.grad.reshape(a.data.shape)))
        return out

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        a = self
        inv = tuple(np.argsort(axes))
        out = Tensor._result(
            np.transpose(a.data, axes), (a,),
            lambda: a._accumulate(np.transpose(out.grad, inv)))
        return out

    def __getitem__(self, index) -> "Tensor":
        a = self
        data = a.data[index]

        def backward():
            g = np.zeros_like(a.data)
            np.add.at(g, index, out.grad)
            a._accumulate(g)

        out = Tensor._result(np.asarray(data), (a,), backward)
        return out

    def astype(self, dtype) -> "Tensor":
        """Cast values; gradient passes through unchanged (cast back)."""
        a = self
        out = Tensor._result(
            a.data.astype(dtype), (a,),
            lambda: a._accumulate(out.grad.astype(a.data.dtype)))
        return out


# -- nonlinearities ----------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    """max(x, 0); the subgradient at exactly 0 is taken as 0."""
    mask = x.data > 0
    out = Tensor._result(
        np.where(mask, x.data, 0), (x,),
        lambda: x._accumulate(out.grad * mask))
    return out


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic function."""
    d = x.data
    s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                 np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    s = s.astype(d.dtype)
    out = Tensor._result(s, (x,), lambda: x._accumulate(out.grad * s * (1.0 - s)))
    return out


# -- convolution ---------------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation over NCHW input.

    Args:
        x: input of shape (N, C_in, H, W).
        weight: kernels of shape (C_out, C_in, k, k), k odd.
        bias: optional per-output-channel offset, shape (C_out,).
        stride: spatial step, same for both axes.
        padding: symmetric zero padding applied before the window sweep.

    Returns:
        Tensor of shape (N, C_out, H', W') with
        H' = (H + 2*padding - k) // stride + 1.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise DimensionError(
            f"conv2d expects 4-D input and weight, got {x.data.ndim}-D and {weight.data.ndim}-D")
    n, c_in, h, w = x.data.shape
    c_out, c_in_w, kh, kw = weight.data.shape
    if kh != kw:
        raise DimensionError(f"conv2d kernels must be square, got {kh}x{kw}")
    if kh % 2 != 1:
        raise DimensionError(f"conv2d kernel size must be odd, got {kh}")
    if c_in_w != c_in:
        raise DimensionError(
            f"conv2d weight expects {c_in_w} input channels, input has {c_in}")
    if bias is not None and bias.data.shape != (c_out,):
        raise DimensionError(
            f"conv2d bias must have shape ({c_out},), got {bias.data.shape}")
    if stride < 1 or padding < 0:
        raise ContractError("conv2d requires stride >= 1 and padding >= 0")
    k, s, p = kh, stride, padding
    h_out = (h + 2 * p - k) // s + 1
    w_out = (w + 2 * p - k) // s + 1
    if h_out < 1 or w_out < 1:
        raise DimensionError(
            f"conv2d output would be empty: input {h}x{w}, kernel {k}, "
            f"stride {s}, padding {p}")

    if p > 0:
        xp = np.zeros((n, c_in, h + 2 * p, w + 2 * p), dtype=x.data.dtype)
        xp[:, :, p:p + h, p:p + w] = x.data
    else:
        xp = x.data
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    windows = windows[:, :, ::s, ::s, :, :]
    out_data = np.einsum("nchwij,ocij->nohw", windows, weight.data, optimize=True)
    out_data = np.ascontiguousarray(out_data)
    if bias is not None:
        out_data += bias.data.reshape(1, c_out, 1, 1)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward():
        g = out.grad
        if weight.requires_grad:
            gw = np.einsum("nchwij,nohw->ocij", windows, g, optimize=True)
            weight._accumulate(np.ascontiguousarray(gw))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    patch = np.einsum("nohw,oc->nchw", g, weight.data[:, :, i, j],
                                      optimize=True)
                    gp[:, :, i:i + s * h_out:s, j:j + s * w_out:s] += patch
            gx = gp[:, :, p:p + h, p:p + w] if p > 0 else gp
            x._accumulate(gx)

    out = Tensor._result(out_data, parents, backward)
    return out


# -- layout ops -----------------------------------------------------------------


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Rearrange (N, C*r^2, H, W) into (N, C, H*r, W*r).

    output[n, c, h*r + i, w*r + j] == input[n, c*r^2 + i*r + j, h, w].
    """
    n, c_full, h, w = x.data.shape
    if r < 1 or c_full % (r * r) != 0:
        raise DimensionError(
            f"pixel_shuffle needs channels divisible by r^2; got {c_full} channels, r={r}")
    c = c_full // (r * r)
    y = x.reshape(n, c, r, r, h, w)
    y = y.transpose((0, 1, 4, 2, 5, 3))  # (n, c, h, i, w, j)
    return y.reshape(n, c, h * r, w * r)


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean of an NCHW tensor; returns shape (N, C)."""
    if x.data.ndim != 4:
        raise DimensionError(f"global_avg_pool expects NCHW input, got {x.data.ndim}-D")
    n, c, h, w = x.data.shape
    return x.sum(axis=(2, 3)) * (1.0 / float(h * w))


# -- losses -----------------------------------------------------------------------


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of squared differences over all elements."""
    _check_same_shape(pred, target, "mse_loss")
    diff = pred.data - target.data
    scale = 1.0 / diff.size
    out_val = np.asarray((diff * diff).sum() * scale, dtype=pred.data.dtype)

    def backward():
        g = out.grad * (2.0 * scale) * diff
        if pred.requires_grad:
            pred._accumulate(g)
        if target.requires_grad:
            target._accumulate(-g)

    out = Tensor._result(out_val, (pred, target), backward)
    return out


def l2_norm_loss(pred: Tensor, target: Tensor, eps: float = 1e-12) -> Tensor:
    """Non-squared L2 distance sqrt(sum((pred-target)^2) + eps).

    The eps smoothing keeps the gradient finite at pred == target.
    """
    _check_same_shape(pred, target, "l2_norm_loss")
    diff = pred.data - target.data
    norm = np.sqrt((diff * diff).sum() + eps)
    out_val = np.asarray(norm, dtype=pred.data.dtype)

    def backward():
        g = out.grad * diff / norm
        if pred.requires_grad:
            pred._accumulate(g)
        if target.requires_grad:
            target._accumulate(-g)

    out = Tensor._result(out_val, (pred, target), backward)
    return out


# -- parameter initialization ------------------------------------------------------


def init_conv_weight(rng: np.random.Generator, c_out: int, c_in: int, k: int,
                     dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    """Uniform(+-sqrt(1/fan_in)) kernel and zero bias, fan_in = c_in*k*k."""
    bound = float(np.sqrt(1.0 / (c_in * k * k)))
    w = rng.uniform(-bound, bound, size=(c_out, c_in, k, k)).astype(dtype)
    b = np.zeros(c_out, dtype=dtype)
    return w, b


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    """Filter an iterable down to tensors that require gradients."""
    return [t for t in tensors if isinstance(t, Tensor) and t.requires_grad]
