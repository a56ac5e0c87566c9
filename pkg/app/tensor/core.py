from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from app.errors import DimensionError

NORM_EPS = 1e-12


@dataclass
class FlopCounter:
    """
    Floating-point operation accumulator for one run.

    matmul_flops: 2*m*k*n per dense product
    softmax_flops: 4 per element (max-subtract, exp, row-sum, divide)
    elementwise_flops: 1 per element per pointwise op
    attention_query_tokens: query rows entering joint attention, once per forward call
    """
    matmul_flops: int = 0
    softmax_flops: int = 0
    elementwise_flops: int = 0
    attention_query_tokens: int = 0

    @property
    def forward_flops(self) -> int:
        return self.matmul_flops + self.softmax_flops + self.elementwise_flops

    def add_elementwise(self, n: int) -> None:
        self.elementwise_flops += int(n)

    def reset(self) -> None:
        self.matmul_flops = 0
        self.softmax_flops = 0
        self.elementwise_flops = 0
        self.attention_query_tokens = 0

    def snapshot(self) -> tuple[int, int]:
        """(forward_flops, attention_query_tokens) at this instant."""
        return self.forward_flops, self.attention_query_tokens


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def matmul(a: np.ndarray, b: np.ndarray, counter: FlopCounter | None = None) -> np.ndarray:
    """Dense a[m,k] @ b[k,n] in double precision, charged 2*m*k*n flops."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    if counter is not None:
        m, k = a.shape
        counter.matmul_flops += 2 * m * k * b.shape[1]
    return a @ b


def softmax_rows(x: np.ndarray, counter: FlopCounter | None = None) -> np.ndarray:
    """Row-wise softmax, stabilized by subtracting each row's max."""
    x = as_tensor(x)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)
    if counter is not None:
        counter.softmax_flops += 4 * x.size
    return out


def channel_normalize(x: np.ndarray) -> np.ndarray:
    """Unit L2 norm along the last (channel) axis; zero vectors stay zero."""
    x = as_tensor(x)
    norm = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    return x / (norm + NORM_EPS)


def avg_pool2d(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """Non-overlapping mean pooling of an h x w x c field."""
    x = as_tensor(x)
    if kernel != stride:
        raise DimensionError(f"avg_pool2d supports kernel == stride only (got {kernel}, {stride})")
    h, w = x.shape[0], x.shape[1]
    if kernel < 1 or h % stride or w % stride:
        raise DimensionError(f"avg_pool2d: {h}x{w} not divisible by stride {stride}")
    rest = x.shape[2:]
    blocks = x.reshape(h // stride, stride, w // stride, stride, *rest)
    return blocks.mean(axis=(1, 3))


def _source_coords(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centers, clamped at the borders
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def bilinear_resize(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of an h x w (x c) field, align-corners-false convention."""
    x = as_tensor(x)
    h, w = x.shape[0], x.shape[1]
    if min(h, w, out_h, out_w) < 1:
        raise DimensionError(f"bilinear_resize: invalid sizes {h}x{w} -> {out_h}x{out_w}")
    if (h, w) == (out_h, out_w):
        return x.copy()

    r0, r1, fr = _source_coords(h, out_h)
    c0, c1, fc = _source_coords(w, out_w)
    extra = (1,) * (x.ndim - 2)
    fr = fr.reshape(-1, 1, *extra)
    fc = fc.reshape(1, -1, *extra)

    top = x[r0][:, c0] * (1.0 - fc) + x[r0][:, c1] * fc
    bottom = x[r1][:, c0] * (1.0 - fc) + x[r1][:, c1] * fc
    return top * (1.0 - fr) + bottom * fr
