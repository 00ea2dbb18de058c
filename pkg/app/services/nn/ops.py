"""
Differentiable operations over Tensor.

Convolutions use kernels shaped (3, 3, 3, C_in, C_out) over activations
shaped (B, D, H, W, C). deconv3d is the exact adjoint of conv3d for a
shared kernel, so it maps C_out channels back to C_in.
"""
from typing import Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from app.exceptions import EmptyInputError, ShapeMismatchError
from app.services.nn.tensor import Tensor, as_tensor

BCE_CLAMP = 1e-7
PADDING = {"same": 1, "valid": 0}


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError as e:
        raise ShapeMismatchError(f"add: {a.shape} vs {b.shape}") from e
    return Tensor(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), op="add")


def neg(a: Tensor) -> Tensor:
    return Tensor(-a.data, (a,), lambda g: (-g,), op="neg")


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError as e:
        raise ShapeMismatchError(f"mul: {a.shape} vs {b.shape}") from e
    return Tensor(out, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), op="mul")


def scale(a: Tensor, factor: float) -> Tensor:
    return Tensor(a.data * factor, (a,), lambda g: (g * factor,), op="scale")


def matmul(a: Tensor, w: Tensor) -> Tensor:
    """(..., n) @ (n, m) -> (..., m)."""
    if w.data.ndim != 2 or a.shape[-1] != w.shape[0]:
        raise ShapeMismatchError(f"matmul: {a.shape} @ {w.shape}")

    def backward(g):
        return g @ w.data.T, a.data.reshape(-1, w.shape[0]).T @ g.reshape(-1, w.shape[1])

    return Tensor(a.data @ w.data, (a, w), backward, op="matmul")


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add(matmul(x, w), b)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), op="relu")


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, kept strictly inside (0, 1)."""
    z = x.data
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = np.clip(out, np.finfo(np.float64).tiny, 1.0 - np.finfo(np.float64).epsneg)
    return Tensor(out, (x,), lambda g: (g * out * (1.0 - out),), op="sigmoid")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Tensor(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), op="reshape")


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError as e:
        raise ShapeMismatchError(f"broadcast: {x.shape} -> {tuple(shape)}") from e
    return Tensor(out, (x,), lambda g: (_unbroadcast(g, x.shape),), op="broadcast")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeMismatchError(f"concat: {[t.shape for t in tensors]}") from e
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return Tensor(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)), op="concat")


def total(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward, op="sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = tuple(range(x.data.ndim)) if axis is None else np.atleast_1d(axis)
    count = int(np.prod([x.shape[a] for a in axes]))
    if count == 0:
        raise EmptyInputError("mean over an empty scope")
    return scale(total(x, axis, keepdims), 1.0 / count)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; ties route the gradient to `a`."""
    pick = a.data >= b.data
    return Tensor(np.where(pick, a.data, b.data), (a, b),
                  lambda g: (_unbroadcast(g * pick, a.shape), _unbroadcast(g * ~pick, b.shape)), op="maximum")


def max_reduce(x: Tensor, axis: Tuple[int, ...]) -> Tensor:
    """
    Max over the given axes; the gradient goes to the first maximal entry.
    """
    axis = tuple(a % x.data.ndim for a in np.atleast_1d(axis))
    if any(x.shape[a] == 0 for a in axis):
        raise EmptyInputError("max over an empty scope")
    keep = [a for a in range(x.data.ndim) if a not in axis]
    moved = np.transpose(x.data, keep + list(axis)).reshape([x.shape[a] for a in keep] + [-1])
    arg = np.argmax(moved, axis=-1)
    out = np.take_along_axis(moved, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        grad_moved = np.zeros_like(moved)
        np.put_along_axis(grad_moved, arg[..., None], g[..., None], axis=-1)
        grad_moved = grad_moved.reshape([x.shape[a] for a in keep] + [x.shape[a] for a in axis])
        return (np.transpose(grad_moved, np.argsort(keep + list(axis))),)

    return Tensor(out, (x,), backward, op="max")


def pool(x: Tensor, mode: str = "average", axis: Tuple[int, ...] = (1, 2, 3)) -> Tensor:
    """Global pooling over `axis` (spatial axes of a (B, D, H, W, C) grid by default)."""
    if mode == "average":
        return mean(x, axis=axis)
    if mode == "max":
        return max_reduce(x, axis)
    raise ValueError(f"unknown pooling mode '{mode}'")


def scatter_max(x: Tensor, cells: np.ndarray, n_cells: int) -> Tensor:
    """
    Cell-wise max pooling of point features.

    Args:
        x: (B, K, H) point features
        cells: (B, K) integer cell index of every point
        n_cells: number of cells per item

    Returns:
        (B, n_cells, H); cells without points hold zeros
    """
    batch, k, h = x.shape
    cells = np.asarray(cells, dtype=np.int64)
    if cells.shape != (batch, k):
        raise ShapeMismatchError(f"scatter_max: cells {cells.shape} vs features {x.shape}")
    flat = (np.arange(batch)[:, None] * n_cells + cells).reshape(-1)
    values = x.data.reshape(-1, h)
    out = np.full((batch * n_cells, h), -np.inf)
    np.maximum.at(out, flat, values)
    owner = np.full((batch * n_cells, h), batch * k, dtype=np.int64)
    rows = np.arange(batch * k)
    winners = np.where(values == out[flat], rows[:, None], batch * k)
    np.minimum.at(owner, flat, winners)
    occupied = owner < batch * k
    out = np.where(occupied, out, 0.0)
    cell_idx, channel_idx = np.nonzero(occupied)

    def backward(g):
        g = g.reshape(-1, h)
        grad_values = np.zeros_like(values)
        grad_values[owner[cell_idx, channel_idx], channel_idx] = g[cell_idx, channel_idx]
        return (grad_values.reshape(x.shape),)

    return Tensor(out.reshape(batch, n_cells, h), (x,), backward, op="scatter_max")


def masked_mean(x: Tensor, mask: np.ndarray) -> Tensor:
    """
    Mean of x (B, N, F) over the entries where mask (B, N) is set; an empty
    mask yields a zero vector.
    """
    mask = np.asarray(mask, dtype=np.float64)
    weights = mask / np.maximum(mask.sum(axis=1, keepdims=True), 1.0)
    return total(mul(x, Tensor(weights[..., None])), axis=1)


def _correlate(x: np.ndarray, kernel: np.ndarray, pad: int) -> np.ndarray:
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (pad, pad), (0, 0)))
    windows = sliding_window_view(x, kernel.shape[:3], axis=(1, 2, 3))
    return np.tensordot(windows, kernel, axes=([4, 5, 6, 7], [3, 0, 1, 2]))


def _kernel_grad(x: np.ndarray, gy: np.ndarray, pad: int) -> np.ndarray:
    """d<correlate(x, k, pad), gy>/dk."""
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (pad, pad), (0, 0)))
    windows = sliding_window_view(x, gy.shape[1:4], axis=(1, 2, 3))
    return np.tensordot(windows, gy, axes=([0, 5, 6, 7], [0, 1, 2, 3]))


def _flip(kernel: np.ndarray) -> np.ndarray:
    return kernel[::-1, ::-1, ::-1].swapaxes(3, 4)


def _check_conv(x: Tensor, kernel: Tensor, channels: int, padding: str, shrinks: bool = True) -> int:
    if padding not in PADDING:
        raise ValueError(f"padding must be 'same' or 'valid', got '{padding}'")
    if x.data.ndim != 5 or kernel.data.ndim != 5 or kernel.shape[:3] != (3, 3, 3):
        raise ShapeMismatchError(f"conv: input {x.shape}, kernel {kernel.shape}")
    if x.shape[-1] != channels:
        raise ShapeMismatchError(f"conv: {x.shape[-1]} input channels, kernel expects {channels}")
    pad = PADDING[padding]
    if shrinks and pad == 0 and min(x.shape[1:4]) < 3:
        raise ShapeMismatchError(f"valid conv needs spatial dims >= 3, got {x.shape[1:4]}")
    return pad


def conv3d(x: Tensor, kernel: Tensor, padding: str = "same") -> Tensor:
    """3D cross-correlation; 'valid' shrinks every spatial dim by 2."""
    pad = _check_conv(x, kernel, kernel.shape[3], padding)

    def backward(g):
        return _correlate(g, _flip(kernel.data), 2 - pad), _kernel_grad(x.data, g, pad)

    return Tensor(_correlate(x.data, kernel.data, pad), (x, kernel), backward, op="conv3d")


def deconv3d(y: Tensor, kernel: Tensor, padding: str = "same") -> Tensor:
    """
    Transposed convolution: the adjoint of conv3d with the same kernel and
    padding, so 'valid' grows every spatial dim by 2.
    """
    pad = _check_conv(y, kernel, kernel.shape[4], padding, shrinks=False)

    def backward(g):
        return _correlate(g, kernel.data, pad), _kernel_grad(g, y.data, pad)

    return Tensor(_correlate(y.data, _flip(kernel.data), 2 - pad), (y, kernel), backward, op="deconv3d")


def mlp_forward(x: Tensor, layers: Sequence[Tuple[Tensor, Tensor]], final_linear: bool = False) -> Tensor:
    """
    Affine + ReLU per layer; the last layer skips the ReLU when final_linear.
    """
    for i, (w, b) in enumerate(layers):
        x = linear(x, w, b)
        if not (final_linear and i == len(layers) - 1):
            x = relu(x)
    return x


def bce_loss(pred: Tensor, label: np.ndarray) -> Tensor:
    """
    Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7].
    """
    label = np.broadcast_to(np.asarray(label, dtype=np.float64), pred.shape)
    p = np.clip(pred.data, BCE_CLAMP, 1.0 - BCE_CLAMP)
    inside = (pred.data > BCE_CLAMP) & (pred.data < 1.0 - BCE_CLAMP)
    n = max(pred.size, 1)
    value = -np.mean(label * np.log(p) + (1.0 - label) * np.log(1.0 - p))

    def backward(g):
        return (g * inside * (p - label) / (p * (1.0 - p)) / n,)

    return Tensor(value, (pred,), backward, op="bce")


def square_mean(x: Tensor) -> Tensor:
    """Mean of squared entries: the squared Frobenius norm over x.size."""
    return mean(mul(x, x))


def constant(value) -> Tensor:
    return as_tensor(np.asarray(value, dtype=np.float64))


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """x[index] along the leading axis."""
    index = np.asarray(index, dtype=np.int64)

    def backward(g):
        out = np.zeros_like(x.data)
        np.add.at(out, index, g)
        return (out,)

    return Tensor(x.data[index], (x,), backward, op="gather")
