"""Perspective skeleton interpretation from keypoint heatmaps."""

__version__ = "0.1.0"

from .skeleton import (  # noqa: E402
    SkeletonSpec,
    SpecFormatError,
    bundled_spec,
    canonicalize_shape,
    compose_shape,
    diagonal_length,
    load_spec,
    save_spec,
)
from .camera import (  # noqa: E402
    DEPTH_EPSILON,
    CameraPose,
    DepthDomainError,
    project,
    projection_jacobian,
    reproject,
    rodrigues,
    rotation_log,
)
from .heatmaps import (  # noqa: E402
    GridGeometry,
    HeatmapStack,
    NoiseConfig,
    corrupt_salt_pepper,
    decode_argmax,
    decode_soft,
    render_heatmaps,
)
from .datasets import (  # noqa: E402
    Dataset,
    Dataset2D,
    SampleRecord,
    SamplingRanges,
    generate_dataset,
    load_dataset,
    sample_instance,
    save_dataset,
    to_2d_view,
)
from .mlp import (  # noqa: E402
    Adam,
    MlpModel,
    ModelIntegrityError,
    TrainingError,
    init_mlp,
    load_model,
    save_model,
)
from .interpreter import (  # noqa: E402
    SkeletonInterpreter,
    interpreter_from_model,
    reprojection_report,
    split_prediction,
)
from .refiner import HeatmapRefiner, refiner_from_model  # noqa: E402
from .baseline import (  # noqa: E402
    FitResult,
    ParallelInit,
    UnderdeterminedFitError,
    fit_baseline,
    init_parallel,
    lift_to_perspective,
    refine_perspective,
)
from .metrics import (  # noqa: E402
    CurveSeries,
    MetricError,
    average_error,
    average_recall,
    azimuth_error,
    azimuth_recall,
    azimuth_recall_curve,
    pck_curve,
    pcp,
    retrieve_nearest,
    rmse_recall_curve,
    rmse_structure,
)
from .config import ConfigError, ExperimentConfig, load_config  # noqa: E402

__all__ = [
    "__version__",
    "SkeletonSpec",
    "SpecFormatError",
    "bundled_spec",
    "canonicalize_shape",
    "compose_shape",
    "diagonal_length",
    "load_spec",
    "save_spec",
    "DEPTH_EPSILON",
    "CameraPose",
    "DepthDomainError",
    "project",
    "projection_jacobian",
    "reproject",
    "rodrigues",
    "rotation_log",
    "GridGeometry",
    "HeatmapStack",
    "NoiseConfig",
    "corrupt_salt_pepper",
    "decode_argmax",
    "decode_soft",
    "render_heatmaps",
    "Dataset",
    "Dataset2D",
    "SampleRecord",
    "SamplingRanges",
    "generate_dataset",
    "load_dataset",
    "sample_instance",
    "save_dataset",
    "to_2d_view",
    "Adam",
    "MlpModel",
    "ModelIntegrityError",
    "TrainingError",
    "init_mlp",
    "load_model",
    "save_model",
    "SkeletonInterpreter",
    "interpreter_from_model",
    "reprojection_report",
    "split_prediction",
    "HeatmapRefiner",
    "refiner_from_model",
    "FitResult",
    "ParallelInit",
    "UnderdeterminedFitError",
    "fit_baseline",
    "init_parallel",
    "lift_to_perspective",
    "refine_perspective",
    "CurveSeries",
    "MetricError",
    "average_error",
    "average_recall",
    "azimuth_error",
    "azimuth_recall",
    "azimuth_recall_curve",
    "pck_curve",
    "pcp",
    "retrieve_nearest",
    "rmse_recall_curve",
    "rmse_structure",
    "ConfigError",
    "ExperimentConfig",
    "load_config",
]
