"""Sum-of-Checks: weighted expert checks for auditable vision-language safety assessment."""

from .aggregation import CriterionScore, aggregate, decide, llm_aggregate
from .backend import ModelConfig, ModelResponse, Ruleset, cache_key, oracle_complete
from .dataset import (
    Exemplar,
    ExemplarSet,
    FrameRecord,
    GroundTruth,
    load_exemplars,
    load_manifest,
    sample_eval_split,
    validate_exemplar_combos,
)
from .metrics import average_precision, map_over_runs, per_check_reliability
from .parsing import CheckVerdict, parse_agg_score, parse_check_verdicts, parse_scalar_judgment
from .prompting import Method, PromptPayload
from .registry import Check, CheckRegistry, Criterion, default_cvs_registry, load_registry, validate_registry

__version__ = "0.1.0"
