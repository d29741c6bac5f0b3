"""Weakly-supervised vegetation stratum occupancy from LiDAR plots.

The package turns plot-level occupancy annotations (fraction of a circular
field plot covered by low, medium and high vegetation) into a point-wise
semantic segmentation problem: a pointwise network predicts per-point class
probabilities, a differentiable raster projection aggregates them back to
plot-level occupancies, and three loss terms (smooth occupancy data term,
Gamma-mixture elevation prior, raster entropy penalty) supervise the whole
pipeline end to end.
"""

from .errors import (
    CheckpointError,
    ContractError,
    DegeneracyError,
    DomainError,
    FittingError,
    FormatError,
    NumericError,
    ParseError,
    ValidationError,
    VegstrataError,
)
from .gammamix import GammaComponent, GammaMixture, ecm_fit
from .harness import (
    EvalReport,
    TrainConfig,
    cross_validate,
    evaluate,
    fit_elevation_mixture,
    make_folds,
    predict,
    train,
)
from .losses import LossBreakdown, LossWeights, global_loss, plot_loss_and_grad
from .pointcloud import (
    NormalizedPlot,
    Plot,
    load_labels,
    load_plot,
    load_plots,
    normalize,
    sample_points,
    save_labels,
    save_plots,
    upsample_predictions,
)
from .raster import (
    PixelIndexMap,
    StratumRasterSet,
    build_index,
    disk_mask,
    rasterize,
    rasterize_backward,
)
from .segnet import AdamState, OccupancyRegressor, SegNet, adam_step, learning_rate
from .synth import SceneSample, SceneSpec, generate, generate_corpus, random_scene

__all__ = [
    "AdamState",
    "CheckpointError",
    "ContractError",
    "DegeneracyError",
    "DomainError",
    "EvalReport",
    "FittingError",
    "FormatError",
    "GammaComponent",
    "GammaMixture",
    "LossBreakdown",
    "LossWeights",
    "NormalizedPlot",
    "NumericError",
    "OccupancyRegressor",
    "ParseError",
    "PixelIndexMap",
    "Plot",
    "SceneSample",
    "SceneSpec",
    "SegNet",
    "StratumRasterSet",
    "TrainConfig",
    "ValidationError",
    "VegstrataError",
    "adam_step",
    "build_index",
    "cross_validate",
    "disk_mask",
    "ecm_fit",
    "evaluate",
    "fit_elevation_mixture",
    "generate",
    "generate_corpus",
    "global_loss",
    "learning_rate",
    "load_labels",
    "load_plot",
    "load_plots",
    "make_folds",
    "normalize",
    "plot_loss_and_grad",
    "predict",
    "random_scene",
    "rasterize",
    "rasterize_backward",
    "sample_points",
    "save_labels",
    "save_plots",
    "train",
    "upsample_predictions",
]

__version__ = "0.1.0"
