"""Deterministic toy diffusion loop driving ZeResFDG and QSilk end to end.

The model is analytic: each branch predicts the exact noise residual toward
its own target image, ``y = (x_t - target) / sigma``. Sampling is plain
Euler in sigma space on a Karras schedule.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .controller import ControllerState
from .errors import SamplingError, ShapeMismatchError
from .guidance import zeresfdg_step
from .qsilk import alpha_ramp, micro_detail_inject, quantile_clamp
from .tensor import Tensor4

_MASK64 = (1 << 64) - 1


def splitmix64(state):
    """One SplitMix64 step; returns (output, next_state)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31), state


def gaussian_noise(seed, shape):
    """Standard normal float32 tensor from a fixed, documented generator.

    Philox-4x64 keyed by two SplitMix64 outputs of ``seed`` supplies raw
    64-bit words; the top 53 bits become uniforms in (0, 1] and pairs go
    through Box-Muller (cos branch first). Transcendentals use ``math`` so
    the stream does not depend on numpy's vectorized kernels.
    """
    k0, st = splitmix64(int(seed) & _MASK64)
    k1, _ = splitmix64(st)
    bitgen = np.random.Philox(key=(k1 << 64) | k0)
    count = int(np.prod(shape))
    raw = bitgen.random_raw(2 * ((count + 1) // 2))
    u = ((raw >> np.uint64(11)).astype(np.float64) + 1.0) * (2.0 ** -53)
    out = np.empty(u.size)
    two_pi = 2.0 * math.pi
    for j in range(0, u.size, 2):
        rad = math.sqrt(-2.0 * math.log(u[j]))
        ang = two_pi * u[j + 1]
        out[j] = rad * math.cos(ang)
        out[j + 1] = rad * math.sin(ang)
    return Tensor4(out[:count].reshape(shape))


@dataclass(frozen=True)
class SigmaSchedule:
    sigmas: tuple

    def __post_init__(self):
        s = tuple(float(v) for v in self.sigmas)
        if len(s) < 2:
            raise ValueError("schedule needs at least one step")
        if s[-1] != 0.0:
            raise ValueError("schedule must end at 0")
        if any(b >= a for a, b in zip(s, s[1:])) or s[-2] <= 0:
            raise ValueError("sigmas must be positive and strictly decreasing")
        object.__setattr__(self, "sigmas", s)

    @property
    def steps(self):
        return len(self.sigmas) - 1

    @classmethod
    def karras(cls, steps, sigma_min=0.03, sigma_max=14.6, rho=7.0):
        if steps < 1:
            raise ValueError("steps must be >= 1")
        if not 0 < sigma_min < sigma_max:
            raise ValueError("need 0 < sigma_min < sigma_max")
        ramp = np.linspace(0.0, 1.0, steps)
        min_inv = sigma_min ** (1.0 / rho)
        max_inv = sigma_max ** (1.0 / rho)
        sig = (max_inv + ramp * (min_inv - max_inv)) ** rho
        return cls(tuple(sig.tolist()) + (0.0,))


@dataclass(frozen=True)
class ToyModel:
    target_cond: Tensor4
    target_uncond: Tensor4
    noise_seed: int = 0

    def __post_init__(self):
        if self.target_cond.shape != self.target_uncond.shape:
            raise ShapeMismatchError(self.target_cond.shape, self.target_uncond.shape,
                                     "target_cond/target_uncond")

    @property
    def shape(self):
        return self.target_cond.shape


def predict_pair(model, x_t, sigma):
    """Analytic epsilon predictions toward the conditional and unconditional targets."""
    sigma = float(sigma)
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    if x_t.shape != model.shape:
        raise ShapeMismatchError(x_t.shape, model.shape, "x_t/targets")
    x = x_t.f64()
    y_c = (x - model.target_cond.f64()) / sigma
    y_u = (x - model.target_uncond.f64()) / sigma
    return Tensor4(y_c), Tensor4(y_u)


@dataclass(frozen=True)
class StepTrace:
    step_index: int
    sigma: float
    r_hf: float
    rho: float
    mode: str
    std_yc: float
    std_ycfg: float
    alpha_par_mean: float
    clamp_fraction: float
    alpha_t: float

    @classmethod
    def columns(cls):
        return [f.name for f in fields(cls)]

    def to_dict(self):
        return asdict(self)


def _mean(values):
    values = list(values)
    return math.fsum(values) / len(values)


def run(model, schedule, gcfg, qcfg, mask=None, depth=None, force_mode=None):
    """Sample from the toy model; returns ``(final_image, traces)``.

    Per step: guided prediction, denoised estimate ``x0 = x - sigma * y``,
    quantile clamp of ``x0``, tail micro-detail injection on ``x0``, then
    the Euler move ``x = x0 + sigma_next * y``.
    """
    steps = schedule.steps
    x = Tensor4(gaussian_noise(model.noise_seed, model.shape).f64() * schedule.sigmas[0])
    state = ControllerState()
    traces = []
    for i in range(steps):
        sigma, sigma_next = schedule.sigmas[i], schedule.sigmas[i + 1]
        try:
            y_c, y_u = predict_pair(model, x, sigma)
            out, state = zeresfdg_step(y_c, y_u, gcfg, state, mask=mask, force_mode=force_mode)
            y = out.y.f64()
            x0 = Tensor4(x.f64() - sigma * y)
            clamp_fraction = 0.0
            if qcfg.clamp_enabled:
                x0, stats = quantile_clamp(x0, qcfg)
                clamp_fraction = _mean(stats.fraction)
            alpha_t = alpha_ramp(i, steps, qcfg) if qcfg.inject_enabled else 0.0
            if alpha_t > 0.0:
                x0 = micro_detail_inject(x0, depth, alpha_t, qcfg)
            x = Tensor4(x0.f64() + sigma_next * y)
            if not x.is_finite():
                raise FloatingPointError("latent became non-finite")
        except (ValueError, FloatingPointError, ArithmeticError) as exc:
            raise SamplingError(i, exc) from exc
        diag = out.diagnostics
        traces.append(StepTrace(
            step_index=i,
            sigma=sigma,
            r_hf=out.r_hf,
            rho=state.rho,
            mode=str(out.mode_used),
            std_yc=_mean(diag["std_yc"]),
            std_ycfg=_mean(diag["std_ycfg"]),
            alpha_par_mean=_mean(diag["alpha_par"]),
            clamp_fraction=clamp_fraction,
            alpha_t=alpha_t,
        ))
    return x, traces


def l2_distance(a, b):
    d = a.f64() - b.f64()
    return math.sqrt(math.fsum((d * d).ravel()))


def mode_switches(traces):
    return sum(1 for a, b in zip(traces, traces[1:]) if a.mode != b.mode)
