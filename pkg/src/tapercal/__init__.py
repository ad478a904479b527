"""Satellite-precipitation calibration toolkit.

Distance-tapered station losses, trainable calibrators, hydrological
verification metrics, raster resampling, and the preprocessing chain
that ties them together, exercisable end-to-end on synthetic scenes.
"""

from ._kernels import backend as kernel_backend
from .errors import TaperCalError
from .grid import GeoTransform, Grid, GridSeries, coords_to_index, grid_sample, index_to_coords
from .metrics import (
    EventCounts,
    MetricsReport,
    PairedSamples,
    classification_metrics,
    classify_level,
    event_counts,
    psnr,
    regression_metrics,
    ssim,
    table_a1_metrics,
)
from .models import (
    AffineCalibrator,
    MlpCalibrator,
    OptimizerSpec,
    TrainConfig,
    apply,
    backprop_check,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .pipeline import (
    PipelineConfig,
    PipelineResult,
    ResampleTarget,
    SweepSpec,
    run_pipeline,
    run_sweep,
    sweep_to_tsv,
)
from .preprocess import (
    CropWindow,
    NormSpec,
    QuantileStats,
    apply_window,
    compute_stats,
    crop_search,
    crop_search_series,
    denormalize,
    normalize,
)
from .resample import ResampleMethod, TimeInterpSpec, interp_time, resample_space
from .stations import (
    DistanceMetric,
    SpatialIndex,
    Station,
    StationSet,
    build_spatial_index,
    nn_distances,
    sample_at_stations,
)
from .synth import Scene, SceneSpec, Xoshiro256StarStar, generate_scene, generate_series
from .taper import (
    KernelSpec,
    TaperWeights,
    TotalLossConfig,
    compute_weights,
    kernel_weight,
    taper_loss,
    taper_loss_grad,
    total_loss,
)

__version__ = "0.1.0"
