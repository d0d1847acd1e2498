"""Dual-stream contrastive decoding with adaptive prior suppression."""

__version__ = "0.1.0"

from .core import (
    LogitVector,
    ProbDist,
    Vocabulary,
    entropy,
    js_divergence,
    kl_divergence,
    log_softmax,
    softmax,
    symmetric_kl,
)
from .modulation import (
    AlphaPolicy,
    ModulationRecord,
    PolicyKind,
    combine_logits,
    compute_alpha,
    compute_gamma,
    nolan_distribution,
)
from .engine import (
    DecodeMode,
    DecodeRequest,
    DecodeResult,
    DecodeStepRecord,
    FinishReason,
    LogitSource,
    SamplerConfig,
    SamplerKind,
    SourceDescriptor,
    SourceError,
    decode,
    generic_contrast_decode,
    sample,
    step_counts,
    text_only_view,
)
from .synthetic import (
    PopeItem,
    PriorModel,
    Scene,
    build_sources,
    build_vocabulary,
    compile_prior,
    corpus_stats,
    generate_pope_suite,
)
from .oracle import oracle_step_distribution
from .harness import (
    PopeEvaluation,
    PopeMetrics,
    ReportHeader,
    RunCounts,
    StrategyConfig,
    config_hash,
    entropy_report,
    evaluate_pope,
    kl_by_position,
    mutual_information_estimate,
    parse_report,
    render_report,
    subset_divergence_report,
    sweep,
    timing_report,
)
from .testbed import SyntheticTestbed, calibrated_testbed

__all__ = [name for name in dir() if not name.startswith("_")]
