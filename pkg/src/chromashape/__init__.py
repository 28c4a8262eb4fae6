"""Adversarial noise shaped in YUV: luminance kept, chroma scaled by alpha, windowed by a centred Gaussian."""
from .attacks import (
    ATTACKS,
    CW,
    FGSM,
    MIM,
    CwConfig,
    CwState,
    FgsmConfig,
    MimConfig,
    NoiseSource,
    cw_l2_noise,
    cw_l2_run,
    fgsm_noise,
    mim_noise,
)
from .classifier import (
    REFERENCE_ARCHITECTURE,
    Model,
    ToyDataset,
    cross_entropy_loss,
    generate_toy_dataset,
    init_model,
    input_gradient,
    load_model,
    predict_class,
    predict_logits,
    reference_model,
    save_model,
    train,
)
from .errors import *  # noqa: F401,F403
from .harness import SweepConfig, SweepReport, improvement_table, run_sweep
from .image import (
    NoiseField,
    RgbImage,
    YuvImage,
    clip_unit,
    l2_distance,
    load_png,
    noise_rgb_to_yuv,
    noise_yuv_to_rgb,
    rgb_to_yuv,
    save_png,
    yuv_to_rgb,
)
from .search import DEFAULT_SCHEDULES, SearchResult, StrengthSchedule, is_successful, search_minimal, search_with_fallback
from .shaping import GaussianMask, ShapeConfig, compose_adversarial, make_mask, shape_noise

__version__ = "0.1.0"
