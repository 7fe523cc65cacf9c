"""Per-step guidance rules: FDG band reweighting, std rescale, zero-projection,
mask gating, and the combined ZeResFDG step.

Inputs are float32 predictions; intermediate signals are carried in float64
so that the guidance delta is exact and the band split is a true partition.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import controller
from .controller import ControllerState, Mode
from .errors import ConfigError, NonFiniteError, ShapeMismatchError
from .tensor import (
    Tensor4,
    dot_per_sample,
    gaussian_blur,
    sqnorm_per_sample,
    std_per_sample,
)

RESCALE_EPS = 1e-8
PROJECTION_EPS = 1e-12


@dataclass(frozen=True)
class GuidanceConfig:
    s: float = 4.5
    alpha_rescale: float = 0.7
    lambda_low: float = 0.6
    lambda_high: float = 1.3
    sigma_split: float = 1.0
    beta_ema: float = 0.8
    tau_lo: float = 0.45
    tau_hi: float = 0.60
    rescale_recenters: bool = False
    invert_mode_map: bool = False

    def __post_init__(self):
        checks = [
            (self.s > 0, "s must be > 0", ("s",)),
            (0.0 <= self.alpha_rescale <= 1.0, "alpha_rescale must lie in [0, 1]", ("alpha_rescale",)),
            (0.0 <= self.lambda_low <= 1.0, "lambda_low must lie in [0, 1]", ("lambda_low",)),
            (self.lambda_high >= 1.0, "lambda_high must be >= 1", ("lambda_high",)),
            (self.sigma_split > 0, "sigma_split must be > 0", ("sigma_split",)),
            (0.0 < self.beta_ema < 1.0, "beta_ema must lie in (0, 1)", ("beta_ema",)),
            (0.0 < self.tau_lo < 1.0, "tau_lo must lie in (0, 1)", ("tau_lo",)),
            (0.0 < self.tau_hi < 1.0, "tau_hi must lie in (0, 1)", ("tau_hi",)),
            (self.tau_lo < self.tau_hi,
             f"tau_lo ({self.tau_lo}) must be < tau_hi ({self.tau_hi})", ("tau_lo", "tau_hi")),
        ]
        for ok, msg, keys in checks:
            if not ok:
                raise ConfigError(msg, keys)

    def to_dict(self):
        return asdict(self)


@dataclass
class GuidedOutput:
    y: Tensor4
    r_hf: float
    mode_used: Mode
    r_hf_per_sample: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


def _require_finite(t, name):
    bad = np.size(t.data) - int(np.isfinite(t.data).sum())
    if bad:
        raise NonFiniteError(name, bad)


def split_bands(delta, sigma, low_dtype=np.float32):
    """Return (low, high) with ``low + high == delta``.

    The low band is rounded to ``low_dtype``; the high band is the float64
    remainder. With float32 rounding the sum is exact for any delta built
    from float32 values whose magnitudes are within 2**29 of each other.
    With float64 rounding it is exact only up to one float64 rounding.
    """
    low = gaussian_blur(delta.astype(np.float64), sigma).astype(low_dtype)
    high = Tensor4._wrap(delta.f64() - low.f64(), np.float64)
    return low, high


def _reweight(low, high, cfg):
    return cfg.lambda_low * low.f64() + cfg.lambda_high * high.f64()


def fdg_reweight(delta, cfg):
    """Split ``delta`` into Gaussian low/high bands and reweight them.

    Returns ``(delta_tilde, delta_low, delta_high)``; ``delta_tilde`` has
    the dtype of ``delta``.
    """
    _require_finite(delta, "delta")
    low, high = split_bands(delta, cfg.sigma_split, delta.dtype)
    tilde = Tensor4._wrap(_reweight(low, high, cfg), delta.dtype)
    return tilde, low, high


def _rescale_array(y_cfg, target_std, alpha, recenter=False):
    # y_cfg: float64 ndarray (n, c, h, w)
    rows = y_cfg.reshape(y_cfg.shape[0], -1)
    cur = std_per_sample(y_cfg)
    out = np.empty_like(rows)
    for i, row in enumerate(rows):
        gain = float(target_std[i]) / max(cur[i], RESCALE_EPS)
        if recenter:
            mu = math.fsum(row) / row.size
            scaled = (row - mu) * gain + mu
        else:
            scaled = row * gain
        out[i] = alpha * scaled + (1.0 - alpha) * row
    return out.reshape(y_cfg.shape)


def rescale_to_std(y_cfg, target_std, alpha, recenter=False):
    """Blend ``y_cfg`` with a copy gain-matched to ``target_std`` per sample.

    ``alpha=1`` returns the fully matched copy, ``alpha=0`` returns ``y_cfg``.
    With ``recenter`` the gain is applied about the sample mean instead of zero.
    """
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    target_std = np.asarray(target_std, dtype=np.float64).ravel()
    if target_std.size != y_cfg.n:
        raise ValueError(f"need {y_cfg.n} target stds, got {target_std.size}")
    if (target_std < 0).any():
        raise ValueError("target_std must be >= 0")
    if alpha == 0.0:
        return y_cfg.astype(y_cfg.dtype)
    return Tensor4._wrap(_rescale_array(y_cfg.f64(), target_std, alpha, recenter), y_cfg.dtype)


def _project(yc, yu):
    """Float64 zero-projection; returns (residual array, alpha_par, fallback flags)."""
    num = dot_per_sample(yc, yu)
    den = sqnorm_per_sample(yu)
    alpha_par = np.zeros(yc.shape[0])
    fallback = []
    for i in range(yc.shape[0]):
        if den[i] > PROJECTION_EPS:
            alpha_par[i] = num[i] / den[i]
            fallback.append(False)
        else:
            fallback.append(True)
    r = yc - alpha_par[:, None, None, None] * yu
    return r, alpha_par, fallback


def zero_project(y_c, y_u):
    """Remove from ``y_c`` its component along ``y_u``, per sample.

    Returns ``(r, alpha_par)`` with ``r = y_c - alpha_par * y_u``. When
    ``<y_u, y_u>`` is at most 1e-12 the coefficient is taken as 0.
    """
    if y_c.shape != y_u.shape:
        raise ShapeMismatchError(y_c.shape, y_u.shape, "y_c/y_u")
    r, alpha_par, _ = _project(y_c.f64(), y_u.f64())
    return Tensor4._wrap(r, y_c.dtype), alpha_par


def _check_mask(delta_tilde, g):
    n, c, h, w = delta_tilde.shape
    if g.shape not in ((n, 1, h, w), (n, c, h, w)):
        raise ShapeMismatchError(delta_tilde.shape, g.shape, "delta_tilde/mask")
    vals = g.data
    if not np.isfinite(vals).all() or vals.min() < 0.0 or vals.max() > 1.0:
        raise ValueError("mask values must lie in [0, 1]")


def apply_mask(delta_tilde, g):
    """Multiply by a spatial mask; a single mask channel broadcasts over c."""
    _check_mask(delta_tilde, g)
    return Tensor4._wrap(delta_tilde.f64() * g.f64(), delta_tilde.dtype)


def zeresfdg_step(y_c, y_u, cfg, state, mask=None, force_mode=None):
    """One guided prediction from a (conditional, unconditional) pair.

    The controller is updated from this step's r_HF before the branch is
    chosen. ``force_mode`` overrides the branch (the controller still
    advances). Returns ``(GuidedOutput, new_state)``.
    """
    if y_c.shape != y_u.shape:
        raise ShapeMismatchError(y_c.shape, y_u.shape, "y_c/y_u")
    _require_finite(y_c, "y_c")
    _require_finite(y_u, "y_u")
    if mask is not None:
        _check_mask(y_c, mask)

    yc = y_c.f64()
    yu = y_u.f64()
    delta = Tensor4._wrap(yc - yu, np.float64)
    low, high = split_bands(delta, cfg.sigma_split, y_c.dtype)

    ratios = controller.hf_ratios(low, high)
    r_hf = math.fsum(ratios) / len(ratios)
    new_state = controller.update(state, r_hf, cfg)
    mode = Mode(force_mode) if force_mode is not None else new_state.mode

    _, alpha_par, fallback = _project(yc, yu)
    diagnostics = {
        "energy_low": sqnorm_per_sample(low).tolist(),
        "energy_high": sqnorm_per_sample(high).tolist(),
        "alpha_par": alpha_par.tolist(),
        "alpha_par_fallback": fallback,
        "std_yc": std_per_sample(yc).tolist(),
    }

    if mode is Mode.CFG_ZERO_FD:
        r = Tensor4._wrap(yc - alpha_par[:, None, None, None] * yu, np.float64)
        r_low, r_high = split_bands(r, cfg.sigma_split, y_c.dtype)
        tilde = _reweight(r_low, r_high, cfg)
        if mask is not None:
            tilde = tilde * mask.f64()
        y = alpha_par[:, None, None, None] * yu + cfg.s * tilde
        diagnostics["std_ycfg"] = std_per_sample(y).tolist()
    else:
        tilde = _reweight(low, high, cfg)
        if mask is not None:
            tilde = tilde * mask.f64()
        y_cfg = yu + cfg.s * tilde
        diagnostics["std_ycfg"] = std_per_sample(y_cfg).tolist()
        if cfg.alpha_rescale != 0.0:
            y = _rescale_array(y_cfg, diagnostics["std_yc"], cfg.alpha_rescale,
                               cfg.rescale_recenters)
        else:
            y = y_cfg

    out = GuidedOutput(
        y=Tensor4._wrap(y, y_c.dtype),
        r_hf=r_hf,
        mode_used=mode,
        r_hf_per_sample=ratios,
        diagnostics=diagnostics,
    )
    return out, new_state
