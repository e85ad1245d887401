"""Self-supervised underwater image enhancement toolkit."""

from .attention import AttentionMap, attention_map, outlier_image, outlier_threshold, reinforcement_factor
from .degradation import (
    DegradationBundle,
    apply_ifm,
    context_luminosity,
    degradation_function,
    degrade_once,
    degrade_twice,
    estimate_bundle,
    gb_map,
    gd_map,
)
from .image import (
    EPS,
    ChannelStats,
    channel_stats,
    clamp01,
    load_image,
    resize_bilinear,
    save_image,
    stretch_histogram,
)
from .loss import (
    LossBreakdown,
    ambient_component,
    image_loss,
    scene_component,
    scene_loss,
    self_supervised_loss,
    total_loss,
)
from .metrics import ciede2000, gmsd, mse, psnr, ssim, uciqe, uiqm
from .network import (
    NetworkParams,
    adam_step,
    backward,
    build_network,
    forward,
    l1_penalty,
    load_checkpoint,
    param_count,
    save_checkpoint,
)
from .trainer import TrainConfig, enhance, fit, split_dataset, train_step

__version__ = "0.1.0"
