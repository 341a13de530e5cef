"""Dense float64 tensors and the primitive numerical operations.

A tensor is a C-contiguous ``numpy.ndarray`` of dtype float64: the shape
tuple plus the flat row-major buffer is the whole representation. All
operations here are pure functions, preserve finiteness of finite inputs,
and are bitwise deterministic for identical inputs.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ShapeError",
    "as_tensor",
    "conv2d",
    "affine",
    "map_sigmoid",
    "map_tanh",
    "hadamard",
    "add",
    "global_avg_pool",
    "avg_pool2d",
]

# Largest representable double strictly inside (0, 1) / (-1, 1); sigmoid and
# tanh outputs are pinned to the open interval at these bounds.
_ONE_MINUS = np.nextafter(1.0, 0.0)
_TINY = np.finfo(np.float64).tiny


class ShapeError(ValueError):
    """Shape or extent mismatch, naming the operation and offending axis."""

    def __init__(self, op: str, axis: str, detail: str):
        self.op = op
        self.axis = axis
        self.detail = detail
        super().__init__(f"{op}: {axis}: {detail}")


def as_tensor(values, shape=None) -> np.ndarray:
    """Coerce nested lists or arrays to a C-contiguous float64 tensor."""
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    return arr


def _im2col(padded: np.ndarray, kh: int, kw: int, h: int, w: int) -> np.ndarray:
    """Stack the kh*kw shifted views of a padded [C,H+2p,W+2p] map.

    Returns [C, kh, kw, H, W]; the (c, dy, dx) index order of this layout is
    the fixed summation order of conv2d.
    """
    c = padded.shape[0]
    cols = np.empty((c, kh, kw, h, w), dtype=np.float64)
    for dy in range(kh):
        for dx in range(kw):
            cols[:, dy, dx] = padded[:, dy : dy + h, dx : dx + w]
    return cols


def _conv2d_parts(input: np.ndarray, kernels: np.ndarray):
    """Shared forward machinery: validate, pad, im2col, multiply.

    Returns (out_without_bias, cols_matrix) so callers that also need the
    backward pass can reuse the column matrix.
    """
    if input.ndim != 3:
        raise ShapeError("conv2d", "input", f"expected rank 3, got rank {input.ndim}")
    if kernels.ndim != 4:
        raise ShapeError("conv2d", "kernels", f"expected rank 4, got rank {kernels.ndim}")
    c, h, w = input.shape
    o, kc, kh, kw = kernels.shape
    if kc != c:
        raise ShapeError(
            "conv2d", "channel", f"input has {c} channels, kernels expect {kc}"
        )
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("conv2d", "kernel extent", f"extents must be odd, got {kh}x{kw}")
    ph, pw = kh // 2, kw // 2
    padded = np.zeros((c, h + 2 * ph, w + 2 * pw), dtype=np.float64)
    padded[:, ph : ph + h, pw : pw + w] = input
    cols = _im2col(padded, kh, kw, h, w).reshape(c * kh * kw, h * w)
    out = (kernels.reshape(o, c * kh * kw) @ cols).reshape(o, h, w)
    return out, cols


def conv2d(
    input: np.ndarray,
    kernels: np.ndarray,
    bias: np.ndarray | None = None,
) -> np.ndarray:
    """Same-padded stride-1 2-D convolution (cross-correlation convention).

    input [C,H,W], kernels [O,C,Kh,Kw] with odd Kh, Kw, bias [O] or None.
    Output [O,H,W]: out[o,y,x] = bias[o] + sum over (c,dy,dx) of
    kernels[o,c,dy,dx] * padded_input[c, y+dy-Kh//2, x+dx-Kw//2], with zero
    fill outside the input.
    """
    o = kernels.shape[0]
    if bias is not None and bias.shape != (o,):
        raise ShapeError("conv2d", "bias", f"expected shape ({o},), got {bias.shape}")
    out, _ = _conv2d_parts(input, kernels)
    if bias is not None:
        out = out + bias[:, None, None]
    return out


def affine(input: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """weight [M,N] @ input [N] + bias [M] -> [M]."""
    if input.ndim != 1:
        raise ShapeError("affine", "input", f"expected rank 1, got rank {input.ndim}")
    if weight.ndim != 2:
        raise ShapeError("affine", "weight", f"expected rank 2, got rank {weight.ndim}")
    m, n = weight.shape
    if input.shape[0] != n:
        raise ShapeError(
            "affine", "inner extent", f"input has {input.shape[0]}, weight expects {n}"
        )
    if bias.shape != (m,):
        raise ShapeError("affine", "bias", f"expected shape ({m},), got {bias.shape}")
    return weight @ input + bias


def map_sigmoid(t: np.ndarray) -> np.ndarray:
    """Elementwise logistic sigmoid, pinned strictly inside (0, 1).

    Uses the numerically stable branch per sign; outputs that would round to
    exactly 0.0 or 1.0 are clamped to the nearest representable interior
    double so the open-interval contract holds for all finite inputs.
    """
    e = np.exp(-np.abs(t))
    out = np.where(t >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return np.clip(out, _TINY, _ONE_MINUS)


def map_tanh(t: np.ndarray) -> np.ndarray:
    """Elementwise tanh, pinned strictly inside (-1, 1)."""
    return np.clip(np.tanh(t), -_ONE_MINUS, _ONE_MINUS)


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise product of identically shaped tensors."""
    if a.shape != b.shape:
        raise ShapeError("hadamard", "shape", f"{a.shape} vs {b.shape}")
    return a * b


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise sum of identically shaped tensors."""
    if a.shape != b.shape:
        raise ShapeError("add", "shape", f"{a.shape} vs {b.shape}")
    return a + b


def global_avg_pool(t: np.ndarray) -> np.ndarray:
    """[C,H,W] -> [C], per-channel spatial mean."""
    if t.ndim != 3:
        raise ShapeError("global_avg_pool", "input", f"expected rank 3, got rank {t.ndim}")
    return t.mean(axis=(1, 2))


def avg_pool2d(t: np.ndarray, factor: int) -> np.ndarray:
    """Non-overlapping window means over [C,H,W] -> [C,ceil(H/f),ceil(W/f)].

    Edge windows average over the valid cells only, so no zero bias is
    introduced at the borders. Factor 1 returns a copy of the input.
    """
    if t.ndim != 3:
        raise ShapeError("avg_pool2d", "input", f"expected rank 3, got rank {t.ndim}")
    if factor < 1:
        raise ShapeError("avg_pool2d", "factor", f"must be >= 1, got {factor}")
    if factor == 1:
        return t.copy()
    c, h, w = t.shape
    ys = np.arange(0, h, factor)
    xs = np.arange(0, w, factor)
    sums = np.add.reduceat(np.add.reduceat(t, ys, axis=1), xs, axis=2)
    hc = np.minimum(ys + factor, h) - ys
    wc = np.minimum(xs + factor, w) - xs
    return sums / (hc[:, None] * wc[None, :])
