"""Pivot-gated contrastive decoding for knowledge conflicts in retrieval-augmented VQA."""

from .adapters import (
    CountingModel,
    GenerationContext,
    RemoteEndpoint,
    RemoteModel,
    ScriptedModel,
    Vocabulary,
    dual_pathway_logits,
    next_logits,
    remote_next_logits,
)
from .contrast import ProjectionResult, apply_pivot_gate, gated_subtract, init_gate, projection_coefficient
from .core import DecodeConfig, DecodeTrace, StepRecord, load_config, logit_vector, validate_config
from .corpus import ConflictSample, read_corpus, write_corpus
from .decoding import (
    DecodeResult,
    cutoff_filter,
    greedy_decode,
    linear_contrast_decode,
    rpgd_decode,
    select_token,
)
from .experiment import EvalReport, Method, build_report, run_experiment
from .metrics import ConfusionCounts, balanced_accuracy, confusion, f1, mcc, span_f1
from .pivots import (
    PivotAssertion,
    PivotSpan,
    ReasoningChain,
    detect_conflicts,
    pivot_token_set,
    wrap_pivot_tokens,
)
from .shuffle import patch_grid, permutation_from_seed, shuffle_patches
from .synth import (
    MockRewriter,
    MockScorer,
    RewriteRequest,
    build_sample,
    rewrite_passage,
    select_counterfactual,
    vote_of_confidence,
)

__version__ = "0.1.0"
