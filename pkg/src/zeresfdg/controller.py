"""Spectral EMA + hysteresis controller choosing the guidance mode per step."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

from .errors import ShapeMismatchError
from .tensor import sqnorm_per_sample


class Mode(str, enum.Enum):
    CFG_ZERO_FD = "CFGZeroFD"  # conservative
    RESCALE_FDG = "RescaleFDG"  # detail-seeking

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class ControllerState:
    rho: float = 0.0
    mode: Mode = Mode.CFG_ZERO_FD
    initialized: bool = False
    step_index: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if self.step_index < 0:
            raise ValueError("step_index must be >= 0")
        object.__setattr__(self, "mode", Mode(self.mode))


def hf_ratios(delta_low, delta_high):
    """Per-sample share of squared energy in the high band; 0/0 gives 0."""
    if delta_low.shape != delta_high.shape:
        raise ShapeMismatchError(delta_low.shape, delta_high.shape, "delta_low/delta_high")
    lo = sqnorm_per_sample(delta_low)
    hi = sqnorm_per_sample(delta_high)
    out = []
    for e_lo, e_hi in zip(lo, hi):
        total = e_lo + e_hi
        out.append(e_hi / total if total > 0.0 else 0.0)
    return out


def hf_ratio(delta_low, delta_high):
    """Batch-mean high-frequency ratio ``|Dh|^2 / (|Dl|^2 + |Dh|^2)``."""
    ratios = hf_ratios(delta_low, delta_high)
    return math.fsum(ratios) / len(ratios)


def hysteresis_mode(rho, mode, tau_lo, tau_hi, invert=False):
    """Apply the two-threshold rule; inside the open band the mode is kept."""
    high, low = Mode.RESCALE_FDG, Mode.CFG_ZERO_FD
    if invert:
        high, low = low, high
    if rho >= tau_hi:
        return high
    if rho <= tau_lo:
        return low
    return Mode(mode)


def update(state, r_hf, cfg):
    """Fold one r_HF observation into the EMA, then re-select the mode.

    The first observation seeds the EMA directly.
    """
    r_hf = float(r_hf)
    if not 0.0 <= r_hf <= 1.0:
        raise ValueError(f"r_hf must lie in [0, 1], got {r_hf}")
    if state.initialized:
        rho = cfg.beta_ema * state.rho + (1.0 - cfg.beta_ema) * r_hf
    else:
        rho = r_hf
    # convex combination; clip only guards the last ulp
    rho = min(max(rho, 0.0), 1.0)
    mode = hysteresis_mode(rho, state.mode, cfg.tau_lo, cfg.tau_hi, cfg.invert_mode_map)
    return replace(state, rho=rho, mode=mode, initialized=True, step_index=state.step_index + 1)
