"""Selective state-space sequence mixing over curve-serialized point clouds.

Layers of the package, bottom up:

* machinery: ``spacefill`` (Hilbert/Z-order codecs, serialization, shuffle
  plans), ``autodiff``/``ops`` (reverse-mode tape over numpy primitives),
  ``scan``/``ssm`` (sequential oracle, chunked parallel scan, selective
  parameterization, multi-head and bidirectional mixers).
* network: ``blocks`` (conv + bidirectional-scan layer, residual block,
  embedding), ``resample`` (FPS, interpolation, grid pool/unpool),
  ``model`` (encoder/decoder assembly), ``train`` (AdamW toy trainer,
  ablation harness).
* surfaces: ``estimator`` (sklearn-style classifier/transformer),
  ``cli`` (the ``curvescan`` command).
"""

from .autodiff import Tensor, no_grad
from .estimator import CurveScanClassifier, CurveSerializer
from .gradcheck import check_gradients
from .model import (
    ModelConfig,
    StageConfig,
    build_model,
    forward,
    format_model_config,
    load_weights,
    parse_model_config,
    preset_config,
    save_weights,
)
from .pointio import (
    PointCloud,
    SyntheticSpec,
    load_xyz,
    make_synthetic,
    normalize_unit_sphere,
    save_xyz,
)
from .resample import Resampling, fps, grid_pool, grid_unpool, interp_weights
from .spacefill import (
    AXIS_PRIORITIES,
    CurveVariant,
    Serialization,
    ShufflePlan,
    make_shuffle_plan,
    serialize,
)
from .train import TrainConfig, ablate, evaluate, make_dataset, train_toy

__all__ = [
    "AXIS_PRIORITIES",
    "CurveScanClassifier",
    "CurveSerializer",
    "CurveVariant",
    "ModelConfig",
    "PointCloud",
    "Resampling",
    "Serialization",
    "ShufflePlan",
    "StageConfig",
    "SyntheticSpec",
    "Tensor",
    "TrainConfig",
    "ablate",
    "build_model",
    "check_gradients",
    "evaluate",
    "forward",
    "format_model_config",
    "fps",
    "grid_pool",
    "grid_unpool",
    "interp_weights",
    "load_weights",
    "load_xyz",
    "make_dataset",
    "make_shuffle_plan",
    "make_synthetic",
    "no_grad",
    "normalize_unit_sphere",
    "parse_model_config",
    "preset_config",
    "save_weights",
    "save_xyz",
    "serialize",
    "train_toy",
]
