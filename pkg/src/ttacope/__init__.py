"""Online self-training of a per-point NOCS pose estimator on unlabeled depth streams.

A toy per-point NOCS predictor is pretrained on a clean synthetic source
stream, then adapted frame by frame on a shifted target stream with a
teacher-student scheme whose pseudo labels are filtered by the fitted pose.
"""

from .adaptation import (
    METHODS,
    AdaptState,
    LossWeights,
    PretrainConfig,
    RunResult,
    TtaConfig,
    pretrain,
    run_method,
    tta_step,
)
from .ensemble import EnsembleMode, FilterResult, point_filter, pose_ensemble_inlier_max
from .errors import (
    ConfigError,
    DegenerateInput,
    EmptyInput,
    EmptyMask,
    ShapeMismatch,
    SizeMismatch,
    StreamFormatError,
    TooFewPoints,
    TtaCopeError,
    UnknownMethod,
)
from .geometry import RansacConfig, SimilarityTransform, ransac_umeyama, umeyama_fit
from .metrics import EvalSummary, OrientedBox, iou_3d, pose_error, summarize
from .nocs import NocsMap, NocsTarget, decode_bins, encode_bins
from .predictor import ModelParams, forward, init_params
from .synth import DomainParams, StreamConfig, make_streams

__version__ = "0.1.0"
