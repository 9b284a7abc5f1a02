"""Robust photometric-consistency multi-view stereo.

Calibrated plane-sweep depth estimation with a robust first-order loss
(Huber intensity + gradient matching, per-pixel top-K view aggregation,
SSIM and smoothness regularizers), analytic depth gradients, multi-view
depth fusion into point clouds, and distance/percentage evaluation metrics.
"""

from .evaluation import CloudMetrics, DepthMetrics, cloud_distance_metrics, depth_validation_metrics
from .fusion import FusionConfig, PointCloud, backproject, consistency_check, fuse, load_ply, save_ply
from .geometry import (
    Camera,
    PixelCoord,
    depth_hypotheses,
    homography_for_depth,
    load_camera,
    relative_transform,
    save_camera,
    warp_pixel,
)
from .imaging import (
    bilinear_sample,
    image_gradient,
    inverse_warp,
    load_image,
    read_pfm,
    save_image,
    write_pfm,
)
from .loss import (
    LossConfig,
    LossVolume,
    first_order_loss_map,
    loss_gradient,
    naive_photometric_loss,
    robust_topk_loss,
    smoothness_loss,
    ssim,
    ssim_loss,
    topk_selection_frequency,
    total_loss,
)
from .sweep import (
    ConfidenceMap,
    CostVolume,
    build_cost_volume,
    confidence_map,
    refine_depth_descent,
    select_views,
    soft_argmin_depth,
)
from .synth import Scene, make_ablation_scene, render, write_scene_dir

__version__ = "0.1.0"
