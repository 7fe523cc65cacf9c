"""Frequency-decoupled, rescaled, zero-projected guidance with a spectral
mode controller and a quantile-clamp / micro-detail stabilizer."""

from .controller import ControllerState, Mode, hf_ratio, hysteresis_mode, update
from .guidance import (
    GuidanceConfig,
    GuidedOutput,
    apply_mask,
    fdg_reweight,
    rescale_to_std,
    zero_project,
    zeresfdg_step,
)
from .qsilk import DepthMap, QSilkConfig, alpha_ramp, micro_detail_inject, quantile_clamp
from .sampler import SigmaSchedule, StepTrace, ToyModel, predict_pair, run
from .tensor import (
    GaussianKernel,
    Tensor4,
    add_scaled,
    dot_per_sample,
    gaussian_blur,
    load_tensor,
    quantile_per_sample,
    save_tensor,
    sobel_magnitude,
    std_per_sample,
)

__version__ = "0.1.0"
