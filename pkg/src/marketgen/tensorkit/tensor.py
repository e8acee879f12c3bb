"""Dense float64 tensors with taped reverse-mode differentiation.

The kernel is deliberately small: just enough machinery to express a 1-D
convolutional U-Net, differentiate it, and train it with AdamW. All data is
float64 and row-major. Ops allocate fresh outputs; a tensor is never mutated
in place while a tape is recording it.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

Array = np.ndarray

_ACTIVE_TAPES: list["Tape"] = []

#: When true, every kernel output is checked for NaN/inf (slow; tests enable it).
check_finite = False


class Tensor:
    """A dense float64 array plus gradient metadata."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operators; the right operand may be a Tensor, scalar, or ndarray constant.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)


class Tape:
    """Execution record for one forward pass.

    Ops whose output depends on a trainable leaf append themselves while a
    tape is active (``with Tape() as tape: ...``). ``backward`` replays the
    records in reverse execution order, which is a reverse topological order
    of the graph, visiting each node exactly once.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _ACTIVE_TAPES.pop()
        return False

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> dict[Tensor, Array]:
        """Accumulate d(loss)/d(tensor) for every tensor reachable from loss.

        Also assigns ``.grad`` on trainable leaves. The loss must be a finite
        scalar.
        """
        if loss.data.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
        if not np.isfinite(loss.data):
            raise FloatingPointError("non-finite loss")
        grads: dict[Tensor, Array] = {loss: np.ones_like(loss.data)}
        for out, inputs, backward_fn in reversed(self._records):
            g = grads.pop(out, None)
            if g is None:
                continue
            for inp, ginp in zip(inputs, backward_fn(g)):
                if ginp is None:
                    continue
                acc = grads.get(inp)
                grads[inp] = ginp if acc is None else acc + ginp
        for t, g in grads.items():
            if t.requires_grad:
                t.grad = g
        return grads


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, Array]:
    """Gradients of a scalar loss with respect to everything on the tape."""
    return tape.backward(loss)


def _tape() -> Tape | None:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(out_data: Array, inputs: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    if check_finite and not np.all(np.isfinite(out_data)):
        raise FloatingPointError("kernel op produced non-finite values")
    out = Tensor(out_data)
    tape = _tape()
    if tape is not None and any(i.requires_grad for i in inputs):
        out.requires_grad = True
        tape._records.append((out, inputs, backward_fn))
    return out


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Reduce a broadcast gradient back to the shape of its source."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Elementwise and reduction ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    ash, bsh = a.data.shape, b.data.shape

    def bw(g):
        return _unbroadcast(g, ash), _unbroadcast(g, bsh)

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    ash, bsh = a.data.shape, b.data.shape

    def bw(g):
        return _unbroadcast(g, ash), _unbroadcast(-g, bsh)

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), bw)


def silu(x) -> Tensor:
    """x * sigmoid(x)."""
    x = _coerce(x)
    s = 1.0 / (1.0 + np.exp(-x.data))
    xd = x.data

    def bw(g):
        return (g * (s * (1.0 + xd * (1.0 - s))),)

    return _make(xd * s, (x,), bw)


def softmax(x, axis: int = -1) -> Tensor:
    x = _coerce(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)

    return _make(y, (x,), bw)


def mean(x) -> Tensor:
    x = _coerce(x)
    n = x.data.size
    shape = x.data.shape

    def bw(g):
        return (np.broadcast_to(g / n, shape).copy(),)

    return _make(np.asarray(x.data.mean()), (x,), bw)


def mean_squared_error(pred: Tensor, target) -> Tensor:
    diff = sub(pred, target)
    return mean(mul(diff, diff))


# ---------------------------------------------------------------------------
# Structural ops
# ---------------------------------------------------------------------------

def reshape(x, shape: Sequence[int]) -> Tensor:
    x = _coerce(x)
    old = x.data.shape

    def bw(g):
        return (g.reshape(old),)

    return _make(x.data.reshape(shape), (x,), bw)


def transpose(x, axes: Sequence[int]) -> Tensor:
    x = _coerce(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        return (g.transpose(inv),)

    return _make(x.data.transpose(axes), (x,), bw)


def matmul(a, b) -> Tensor:
    """2-D or batched 3-D matrix product (no broadcasting across batch)."""
    a, b = _coerce(a), _coerce(b)
    ad, bd = a.data, b.data

    def bw(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _make(ad @ bd, (a, b), bw)


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    parts = [_coerce(p) for p in parts]
    datas = [p.data for p in parts]
    offsets = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def bw(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _make(np.concatenate(datas, axis=axis), tuple(parts), bw)


def crop_length(x, length: int) -> Tensor:
    """Keep the first `length` entries of the last axis."""
    x = _coerce(x)
    full = x.data.shape

    def bw(g):
        gx = np.zeros(full)
        gx[..., :length] = g
        return (gx,)

    return _make(np.ascontiguousarray(x.data[..., :length]), (x,), bw)


def edge_pad_right(x, count: int) -> Tensor:
    """Replicate the last entry of the final axis `count` times."""
    x = _coerce(x)
    if count == 0:
        return add(x, 0.0)
    length = x.data.shape[-1]
    out = np.concatenate([x.data, np.repeat(x.data[..., -1:], count, axis=-1)], axis=-1)

    def bw(g):
        gx = np.ascontiguousarray(g[..., :length])
        gx[..., -1] += g[..., length:].sum(axis=-1)
        return (gx,)

    return _make(out, (x,), bw)


def upsample_nearest_2x(x) -> Tensor:
    """Nearest-neighbour doubling of the last axis."""
    x = _coerce(x)

    def bw(g):
        lead = g.shape[:-1]
        return (g.reshape(*lead, g.shape[-1] // 2, 2).sum(axis=-1),)

    return _make(np.repeat(x.data, 2, axis=-1), (x,), bw)


def embedding_lookup(weight: Tensor, indices) -> Tensor:
    """Row gather from an embedding matrix; gradient scatter-adds."""
    idx = np.asarray(indices, dtype=np.int64)
    wshape = weight.data.shape

    def bw(g):
        gw = np.zeros(wshape)
        np.add.at(gw, idx, g)
        return (gw,)

    return _make(weight.data[idx], (weight,), bw)


# ---------------------------------------------------------------------------
# Neural-network kernels
# ---------------------------------------------------------------------------

def _conv_cols(xp: Array, kernel: int, stride: int, out_len: int) -> Array:
    """im2col view of a padded (B, C, Lp) array -> (B*out_len, C*kernel)."""
    batch, chans, _ = xp.shape
    s0, s1, s2 = xp.strides
    cols = np.lib.stride_tricks.as_strided(
        xp,
        shape=(batch, chans, out_len, kernel),
        strides=(s0, s1, s2 * stride, s2),
        writeable=False,
    )
    return cols.transpose(0, 2, 1, 3).reshape(batch * out_len, chans * kernel)


def conv1d(x, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """Cross-correlation of (B, Cin, L) with (Cout, Cin, K) kernels."""
    x = _coerce(x)
    batch, cin, length = x.data.shape
    cout, cin_w, kernel = weight.data.shape
    if cin_w != cin:
        raise ValueError(f"conv1d channel mismatch: input {cin}, kernel {cin_w}")
    if bias is not None and bias.data.shape != (cout,):
        raise ValueError(f"conv1d bias shape {bias.data.shape} != ({cout},)")
    padded_len = length + 2 * padding
    if padded_len < kernel:
        raise ValueError("conv1d input shorter than kernel after padding")
    out_len = (padded_len - kernel) // stride + 1

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding)))
    else:
        xp = x.data
    cols = _conv_cols(xp, kernel, stride, out_len)
    w2 = weight.data.reshape(cout, cin * kernel)
    out = (cols @ w2.T).reshape(batch, out_len, cout).transpose(0, 2, 1)
    out = np.ascontiguousarray(out)
    if bias is not None:
        out += bias.data[None, :, None]

    def bw(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(batch * out_len, cout)
        cols_b = _conv_cols(xp, kernel, stride, out_len)
        gw = (g2.T @ cols_b).reshape(cout, cin, kernel)
        gcols = (g2 @ w2).reshape(batch, out_len, cin, kernel).transpose(0, 2, 1, 3)
        gxp = np.zeros((batch, cin, padded_len))
        for k in range(kernel):
            gxp[:, :, k:k + stride * out_len:stride] += gcols[:, :, :, k]
        gx = gxp[:, :, padding:padding + length] if padding else gxp
        if bias is None:
            return np.ascontiguousarray(gx), gw
        return np.ascontiguousarray(gx), gw, g.sum(axis=(0, 2))

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, inputs, bw)


def linear(x, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map of (B, Din) rows by (Dout, Din) weights."""
    x = _coerce(x)
    xd = x.data
    wd = weight.data

    def bw(g):
        return g @ wd, g.T @ xd, g.sum(axis=0)

    return _make(xd @ wd.T + bias.data, (x, weight, bias), bw)


def group_norm(x, gamma: Tensor, beta: Tensor, num_groups: int,
               eps: float = 1e-5) -> Tensor:
    """Per-group standardisation of (B, C, L) followed by a channel affine."""
    x = _coerce(x)
    batch, chans, length = x.data.shape
    if chans % num_groups:
        raise ValueError(f"channels {chans} not divisible by groups {num_groups}")
    grouped = x.data.reshape(batch, num_groups, -1)
    mu = grouped.mean(axis=-1, keepdims=True)
    var = grouped.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat_g = (grouped - mu) * inv
    xhat = xhat_g.reshape(batch, chans, length)
    out = xhat * gamma.data[None, :, None] + beta.data[None, :, None]
    gd = gamma.data

    def bw(g):
        gh = (g * gd[None, :, None]).reshape(batch, num_groups, -1)
        mean_gh = gh.mean(axis=-1, keepdims=True)
        mean_gh_xh = (gh * xhat_g).mean(axis=-1, keepdims=True)
        gx = (inv * (gh - mean_gh - xhat_g * mean_gh_xh)).reshape(batch, chans, length)
        ggamma = (g * xhat).sum(axis=(0, 2))
        gbeta = g.sum(axis=(0, 2))
        return gx, ggamma, gbeta

    return _make(out, (x, gamma, beta), bw)


def sinusoidal_embedding(steps, dim: int) -> Tensor:
    """Fixed sin/cos positional features for diffusion step indices.

    Returns a constant (non-trainable) (B, dim) tensor; dim must be even.
    """
    if dim % 2:
        raise ValueError("embedding dim must be even")
    steps = np.atleast_1d(np.asarray(steps, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    args = steps[:, None] * freqs[None, :]
    return Tensor(np.concatenate([np.sin(args), np.cos(args)], axis=-1))
