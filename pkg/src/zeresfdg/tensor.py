"""Dense NCHW tensors and the numeric primitives the guidance rules need.

Storage is float32 by default. Reductions accumulate with ``math.fsum`` so
sums are correctly rounded and independent of numpy's SIMD summation order,
which keeps golden files byte-stable. Elementwise work happens in float64
and is rounded once on the way out.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeMismatchError

_ALLOWED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor4:
    """Batched feature map of shape (n, c, h, w), row-major, batch outermost.

    The backing array is read-only. ``dtype`` is float32 unless float64 is
    asked for explicitly (used for exact high-frequency remainders).
    """

    __slots__ = ("data",)

    def __init__(self, data, dtype=np.float32):
        dtype = np.dtype(dtype)
        if dtype not in _ALLOWED_DTYPES:
            raise TypeError(f"unsupported dtype {dtype}")
        arr = np.array(data, dtype=dtype, order="C", copy=True)
        if arr.ndim != 4:
            raise ValueError(f"Tensor4 needs 4 dims, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ValueError(f"all dims must be >= 1, got {arr.shape}")
        arr.flags.writeable = False
        self.data = arr

    @classmethod
    def _wrap(cls, arr, dtype):
        # Internal constructor for freshly computed arrays: skips the defensive copy
        # when no cast is needed.
        out = cls.__new__(cls)
        arr = np.ascontiguousarray(arr, dtype=dtype)
        if arr.base is not None or arr.flags.writeable is False:
            arr = arr.copy()
        arr.flags.writeable = False
        out.data = arr
        return out

    @classmethod
    def zeros(cls, shape, dtype=np.float32):
        return cls(np.zeros(shape), dtype)

    @classmethod
    def ones(cls, shape, dtype=np.float32):
        return cls(np.ones(shape), dtype)

    @classmethod
    def full(cls, shape, value, dtype=np.float32):
        return cls(np.full(shape, value, dtype=np.float64), dtype)

    @classmethod
    def from_flat(cls, values, shape, dtype=np.float32):
        flat = np.asarray(values, dtype=np.float64).ravel()
        if flat.size != int(np.prod(shape)):
            raise ValueError(f"{flat.size} values cannot fill shape {tuple(shape)}")
        return cls(flat.reshape(shape), dtype)

    @property
    def shape(self):
        return self.data.shape

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def c(self):
        return self.data.shape[1]

    @property
    def h(self):
        return self.data.shape[2]

    @property
    def w(self):
        return self.data.shape[3]

    @property
    def dtype(self):
        return self.data.dtype

    def f64(self):
        """Float64 copy of the data as a plain (writable) ndarray."""
        return self.data.astype(np.float64)

    def astype(self, dtype):
        return Tensor4._wrap(self.data, dtype)

    def flat(self):
        return self.data.ravel()

    def is_finite(self):
        return bool(np.isfinite(self.data).all())

    def __repr__(self):
        return f"Tensor4(shape={self.shape}, dtype={self.dtype})"

    def _binary(self, other, op):
        if isinstance(other, Tensor4):
            _check_same(self, other)
            dtype = np.result_type(self.dtype, other.dtype)
            return Tensor4._wrap(op(self.f64(), other.f64()), dtype)
        return Tensor4._wrap(op(self.f64(), float(other)), self.dtype)

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self):
        return Tensor4._wrap(-self.data, self.dtype)


def _check_same(a, b, what="operands"):
    if a.shape != b.shape:
        raise ShapeMismatchError(a.shape, b.shape, what)


def as_tensor(x, dtype=np.float32):
    return x if isinstance(x, Tensor4) else Tensor4(x, dtype)


def add_scaled(a, b, k):
    """Return ``a + k*b`` elementwise."""
    _check_same(a, b)
    dtype = np.result_type(a.dtype, b.dtype)
    return Tensor4._wrap(a.f64() + float(k) * b.f64(), dtype)


def _rows(a):
    arr = a.data if isinstance(a, Tensor4) else np.asarray(a)
    return arr.reshape(arr.shape[0], -1).astype(np.float64)


def sum_per_sample(a):
    return np.array([math.fsum(row) for row in _rows(a)])


def dot_per_sample(a, b):
    """Per-sample inner product over (c, h, w)."""
    _check_same(a, b)
    prods = _rows(a) * _rows(b)
    return np.array([math.fsum(row) for row in prods])


def sqnorm_per_sample(a):
    rows = _rows(a)
    return np.array([math.fsum(row) for row in rows * rows])


def mean_per_sample(a):
    rows = _rows(a)
    return np.array([math.fsum(row) / row.size for row in rows])


def std_per_sample(a):
    """Population standard deviation (divide by element count) per sample."""
    rows = _rows(a)
    if rows.shape[1] < 2:
        raise ValueError("std_per_sample needs at least 2 elements per sample")
    out = np.empty(rows.shape[0])
    for i, row in enumerate(rows):
        mu = math.fsum(row) / row.size
        dev = row - mu
        out[i] = math.sqrt(math.fsum(dev * dev) / row.size)
    return out


@dataclass(frozen=True)
class GaussianKernel:
    sigma: float
    taps: np.ndarray
    radius: int

    @classmethod
    def from_sigma(cls, sigma):
        sigma = float(sigma)
        if not sigma > 0:
            raise ValueError(f"sigma must be > 0, got {sigma}")
        radius = int(math.ceil(3.0 * sigma))
        raw = [math.exp(-(i * i) / (2.0 * sigma * sigma)) for i in range(-radius, radius + 1)]
        total = math.fsum(raw)
        taps = np.array([v / total for v in raw])
        taps.flags.writeable = False
        return cls(sigma, taps, radius)

    def __len__(self):
        return self.taps.size


def _kernel(k):
    return k if isinstance(k, GaussianKernel) else GaussianKernel.from_sigma(k)


def _conv_axis(x, taps, radius, axis):
    pad = [(0, 0)] * x.ndim
    pad[axis] = (radius, radius)
    # numpy "reflect" mirrors without repeating the border sample.
    padded = np.pad(x, pad, mode="reflect")
    size = x.shape[axis]
    out = np.zeros_like(x)
    for j, t in enumerate(taps):
        sl = [slice(None)] * x.ndim
        sl[axis] = slice(j, j + size)
        out += t * padded[tuple(sl)]
    return out


def gaussian_blur(a, k):
    """Separable Gaussian blur (horizontal, then vertical) with reflect padding.

    ``k`` is a GaussianKernel or a sigma. The output keeps the input dtype.
    """
    kern = _kernel(k)
    x = a.f64()
    x = _conv_axis(x, kern.taps, kern.radius, axis=3)
    x = _conv_axis(x, kern.taps, kern.radius, axis=2)
    return Tensor4._wrap(x, a.dtype)


_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T


def sobel_magnitude(a):
    """Sobel gradient magnitude averaged over channels; returns (n, 1, h, w)."""
    if a.h < 3 or a.w < 3:
        raise ValueError(f"sobel_magnitude needs h, w >= 3, got {a.shape}")
    p = np.pad(a.f64(), [(0, 0), (0, 0), (1, 1), (1, 1)], mode="reflect")
    gx = np.zeros(a.shape)
    gy = np.zeros(a.shape)
    for dy in range(3):
        for dx in range(3):
            win = p[:, :, dy : dy + a.h, dx : dx + a.w]
            if _SOBEL_X[dy, dx]:
                gx += _SOBEL_X[dy, dx] * win
            if _SOBEL_Y[dy, dx]:
                gy += _SOBEL_Y[dy, dx] * win
    mag = np.sqrt(gx * gx + gy * gy)
    return Tensor4._wrap(mag.mean(axis=1, keepdims=True), a.dtype)


def quantile_per_sample(a, q):
    """Linear-interpolation quantile of each sample (position q*(m-1))."""
    q = float(q)
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"quantile level must lie in [0, 1], got {q}")
    return np.array([np.quantile(row, q, method="linear") for row in _rows(a)])


# -- raw tensor files -------------------------------------------------------

def _sidecar(path):
    path = Path(path)
    return path.with_suffix(".json")


def save_tensor(t, path):
    """Write little-endian float32 bytes to ``path`` and ``{"shape": ...}`` beside it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(t.data.astype("<f4").tobytes())
    _sidecar(path).write_text(json.dumps({"shape": list(t.shape)}) + "\n")


def load_tensor(path):
    path = Path(path)
    meta = json.loads(_sidecar(path).read_text())
    shape = tuple(int(s) for s in meta["shape"])
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    if raw.size != int(np.prod(shape)):
        raise ValueError(f"{path}: {raw.size} floats do not match shape {shape}")
    return Tensor4(raw.reshape(shape))
