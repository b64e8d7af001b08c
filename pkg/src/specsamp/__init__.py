"""Speculative sampling: draft with a cheap model, verify with the target in one
scoring call, and keep the output distribution identical to the target's."""

from .core import Distribution, RandomSource, TokenSequence, Vocab, normalize, sample_categorical, total_variation
from .decoding import DecodingMethod, apply_method, autoregressive_sample
from .errors import SpecSampError
from .models import LanguageModel, NGramModel, TabularModel, train_ngram
from .perf import AcceptanceStats, CostModel, expected_tokens_per_loop, k_sweep, loop_time, speedup
from .speculative import LoopTrace, SpsConfig, speculative_sample, speculative_step

__all__ = [
    "AcceptanceStats",
    "CostModel",
    "DecodingMethod",
    "Distribution",
    "LanguageModel",
    "LoopTrace",
    "NGramModel",
    "RandomSource",
    "SpecSampError",
    "SpsConfig",
    "TabularModel",
    "TokenSequence",
    "Vocab",
    "apply_method",
    "autoregressive_sample",
    "expected_tokens_per_loop",
    "k_sweep",
    "loop_time",
    "normalize",
    "sample_categorical",
    "speculative_sample",
    "speculative_step",
    "speedup",
    "total_variation",
]
__version__ = "0.1.0"
