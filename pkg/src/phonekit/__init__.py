"""Phone-level speech objectives, decoding, and articulatory-feature scoring."""

from .analysis import coverage, coverage_report, family_breakdown, spearman
from .ctc import (
    OBJECTIVES,
    CtcResult,
    LogPosteriorGrid,
    LossConfig,
    TargetSequence,
    ctc_forward,
    ctc_loss,
    inter_ctc_loss,
    joint_loss,
)
from .decoding import Hypothesis, beam_decode, collapse, greedy_decode
from .errors import (
    ConfigError,
    DataError,
    DuplicateKeyError,
    FeatureValueError,
    NumericalError,
    ParseError,
    PhonekitError,
    TableMismatchError,
    UndefinedMetricError,
)
from .ipa import (
    FeatureTable,
    Phone,
    PhoneSequence,
    load_default_table,
    load_feature_table,
    phone_distance,
    segment,
)
from .metrics import (
    Alignment,
    AlignmentStep,
    ScoreReport,
    UtteranceScore,
    aggregate,
    align,
    feature_error_attribution,
    per,
    pfer,
    score_utterance,
)
from .toymodel import SyntheticTask, ToyModel, build_model, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "Alignment",
    "AlignmentStep",
    "ConfigError",
    "CtcResult",
    "DataError",
    "DuplicateKeyError",
    "FeatureTable",
    "FeatureValueError",
    "Hypothesis",
    "LogPosteriorGrid",
    "LossConfig",
    "NumericalError",
    "OBJECTIVES",
    "ParseError",
    "Phone",
    "PhoneSequence",
    "PhonekitError",
    "ScoreReport",
    "SyntheticTask",
    "TableMismatchError",
    "TargetSequence",
    "ToyModel",
    "UndefinedMetricError",
    "UtteranceScore",
    "aggregate",
    "align",
    "beam_decode",
    "build_model",
    "collapse",
    "coverage",
    "coverage_report",
    "ctc_forward",
    "ctc_loss",
    "evaluate",
    "family_breakdown",
    "feature_error_attribution",
    "greedy_decode",
    "inter_ctc_loss",
    "joint_loss",
    "load_default_table",
    "load_feature_table",
    "per",
    "pfer",
    "phone_distance",
    "score_utterance",
    "segment",
    "spearman",
    "train",
]
