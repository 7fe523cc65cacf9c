"""Inference-time stabilizer: per-sample quantile clamp and late-tail,
edge/depth-gated micro-detail injection."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, ShapeMismatchError
from .tensor import Tensor4, gaussian_blur, sobel_magnitude

RAMPS = ("smoothstep", "linear")


@dataclass(frozen=True)
class QSilkConfig:
    q_lo: float = 0.001
    q_hi: float = 0.999
    alpha_max: float = 0.08
    tail_fraction: float = 0.2
    sigma_detail: float = 1.0
    edge_gate_strength: float = 1.0
    depth_gate_enabled: bool = True
    ramp: str = "smoothstep"
    clamp_enabled: bool = True
    inject_enabled: bool = True

    def __post_init__(self):
        if not 0.0 <= self.q_lo < self.q_hi <= 1.0:
            raise ConfigError(
                f"need 0 <= q_lo < q_hi <= 1, got q_lo={self.q_lo}, q_hi={self.q_hi}",
                ("q_lo", "q_hi"),
            )
        if self.alpha_max < 0:
            raise ConfigError("alpha_max must be >= 0", ("alpha_max",))
        if not 0.0 < self.tail_fraction <= 1.0:
            raise ConfigError("tail_fraction must lie in (0, 1]", ("tail_fraction",))
        if not self.sigma_detail > 0:
            raise ConfigError("sigma_detail must be > 0", ("sigma_detail",))
        if not 0.0 <= self.edge_gate_strength <= 1.0:
            raise ConfigError("edge_gate_strength must lie in [0, 1]", ("edge_gate_strength",))
        if self.ramp not in RAMPS:
            raise ConfigError(f"ramp must be one of {RAMPS}", ("ramp",))

    @property
    def enabled(self):
        return self.clamp_enabled or self.inject_enabled

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class ClampStats:
    clipped: tuple  # elements altered per sample
    total: int  # elements per sample
    non_finite: tuple
    lo: tuple
    hi: tuple

    @property
    def fraction(self):
        return tuple(c / self.total for c in self.clipped)


class DepthMap:
    """Single-channel depth, larger = nearer. ``normalized()`` maps each sample to [0, 1]."""

    def __init__(self, values):
        if values.c != 1:
            raise ValueError(f"depth map must have one channel, got {values.shape}")
        if not values.is_finite():
            raise ValueError("depth map must be finite")
        self.values = values

    def normalized(self):
        return Tensor4._wrap(_minmax01(self.values.f64(), empty_value=1.0), np.float32)


def _minmax01(arr, empty_value):
    # per-sample min-max; a flat sample maps to empty_value everywhere
    out = np.empty_like(arr)
    for i in range(arr.shape[0]):
        lo, hi = arr[i].min(), arr[i].max()
        out[i] = (arr[i] - lo) / (hi - lo) if hi > lo else empty_value
    return out


def _inward_f32(lo, hi):
    # float32 bounds that never lie outside [lo, hi]
    lo32 = np.float32(lo)
    if float(lo32) < lo:
        lo32 = np.nextafter(lo32, np.float32(np.inf))
    hi32 = np.float32(hi)
    if float(hi32) > hi:
        hi32 = np.nextafter(hi32, np.float32(-np.inf))
    return lo32, hi32


def quantile_clamp(x, cfg):
    """Clip each sample to its own (q_lo, q_hi) linear-interpolated quantiles.

    Quantiles use finite elements only. +Inf goes to the upper bound, -Inf
    to the lower, NaN to ``clip(0, lo, hi)``. Returns ``(tensor, ClampStats)``.
    """
    arr = x.data.reshape(x.n, -1)
    out = np.empty(arr.shape, dtype=x.dtype)
    clipped, non_finite, los, his = [], [], [], []
    for i, row in enumerate(arr):
        finite = np.isfinite(row)
        vals = row[finite].astype(np.float64)
        if vals.size:
            lo = float(np.quantile(vals, cfg.q_lo, method="linear"))
            hi = float(np.quantile(vals, cfg.q_hi, method="linear"))
        else:
            lo = hi = 0.0
        if x.dtype == np.float32:
            lo_t, hi_t = _inward_f32(lo, hi)
        else:
            lo_t, hi_t = lo, hi
        nan_fill = min(max(0.0, float(lo_t)), float(hi_t))
        cleaned = np.where(np.isnan(row), nan_fill, row)
        res = np.clip(cleaned, lo_t, hi_t).astype(x.dtype)
        out[i] = res
        clipped.append(int(np.count_nonzero(~finite | (res != row))))
        non_finite.append(int(np.count_nonzero(~finite)))
        los.append(lo)
        his.append(hi)
    stats = ClampStats(tuple(clipped), arr.shape[1], tuple(non_finite), tuple(los), tuple(his))
    return Tensor4._wrap(out.reshape(x.shape), x.dtype), stats


def tail_start(total_steps, tail_fraction):
    """Number of leading steps with no injection: ceil((1 - tail_fraction) * steps)."""
    # round() strips representation noise such as 0.8 * 25 = 20.000000000000004
    return int(math.ceil(round((1.0 - tail_fraction) * total_steps, 9)))


def alpha_ramp(step_index, total_steps, cfg):
    """Injection strength for a step: zero before the tail, ``alpha_max`` at the last step.

    The ramp coordinate is ``u = (i - first_active + 1) / (steps - first_active)``,
    so the last inactive step sits at u = 0 and the final step at u = 1.
    """
    if total_steps < 1 or not 0 <= step_index < total_steps:
        raise IndexError(f"step_index {step_index} outside [0, {total_steps})")
    first_active = tail_start(total_steps, cfg.tail_fraction)
    if step_index < first_active:
        return 0.0
    u = (step_index - first_active + 1) / (total_steps - first_active)
    if cfg.ramp == "linear":
        return cfg.alpha_max * u
    return cfg.alpha_max * (3.0 * u * u - 2.0 * u * u * u)


def edge_gate(x, strength=1.0):
    """1 - strength * (Sobel magnitude / its per-sample max); flat images give 1."""
    mag = sobel_magnitude(x.astype(np.float64)).data
    norm = _max_normalize(mag)
    return 1.0 - strength * norm


def _max_normalize(mag):
    out = np.zeros_like(mag)
    for i in range(mag.shape[0]):
        peak = mag[i].max()
        if peak > 0:
            out[i] = mag[i] / peak
    return out


def micro_detail_inject(x_img, depth, alpha_t, cfg):
    """x + alpha_t * g_edge * g_depth * (x - blur(x)), gates broadcast over channels."""
    if depth is not None:
        dv = depth.values if isinstance(depth, DepthMap) else depth
        want = (x_img.n, 1, x_img.h, x_img.w)
        if dv.shape != want:
            raise ShapeMismatchError(want, dv.shape, "image/depth")
    if alpha_t == 0.0:
        return x_img.astype(x_img.dtype)
    if not x_img.is_finite():
        raise ValueError("micro_detail_inject needs a finite image")
    x = x_img.f64()
    detail = x - gaussian_blur(x_img.astype(np.float64), cfg.sigma_detail).data
    gate = edge_gate(x_img, cfg.edge_gate_strength)
    if depth is not None and cfg.depth_gate_enabled:
        dm = depth if isinstance(depth, DepthMap) else DepthMap(depth)
        gate = gate * _minmax01(dm.values.f64(), empty_value=1.0)
    return Tensor4._wrap(x + alpha_t * gate * detail, x_img.dtype)
