"""Conversational search with an LLM as the search-intent interpreter.

Given a multi-turn conversation, prompt a language model for query rewrites
and hypothetical responses, aggregate their embeddings into one search-intent
vector, retrieve passages by dot product, and evaluate with TREC metrics.
"""

from .aggregation import (
    AggregationError,
    AggregationOutcome,
    EncodedBundle,
    aggregate,
    maxprob,
    mean,
    self_consistency,
)
from .config import (
    ConfigError,
    EncoderSettings,
    LLMSettings,
    MethodSettings,
    PipelineConfig,
    RunPaths,
    apply_overrides,
    build_encoder,
    build_llm,
    load_config,
)
from .core import (
    AggregationMethod,
    Generation,
    GenerationBundle,
    GenerationKind,
    InvalidSessionError,
    PromptingMode,
    Session,
    TextKind,
    Turn,
    load_sessions,
    save_sessions,
    validate_session,
)
from .encoders import (
    Encoder,
    EncoderError,
    HashingEncoder,
    IntentVector,
    PrecomputedEncoder,
    RemoteEncoder,
    write_vector_store,
)
from .evaluation import (
    MetricReport,
    Qrels,
    TTestResult,
    evaluate_run,
    load_run,
    mrr,
    ndcg_at_k,
    paired_t_test,
    recall_at_k,
    save_run,
)
from .index import (
    DenseIndex,
    Passage,
    PassageStore,
    RankedList,
    build_index,
    load_corpus,
    maxp_docs,
    save_corpus,
    split_document,
)
from .llm import GenerationRequest, GenerationResult, HttpLLM, LLMError, MockLLM
from .pipeline import (
    BenchmarkResult,
    ComparisonReport,
    PipelineRuntime,
    build_corpus_index,
    compare_runs,
    run_benchmark,
)
from .prompting import (
    OutputParseError,
    ParsedOutput,
    PromptTemplate,
    build_rar_prompt,
    build_rew_prompt,
    build_rtr_response_prompt,
    format_output,
    load_demonstrations,
    parse_output,
    truncate,
)

__version__ = "0.1.0"

__all__ = [
    "AggregationError",
    "AggregationMethod",
    "AggregationOutcome",
    "BenchmarkResult",
    "ComparisonReport",
    "ConfigError",
    "DenseIndex",
    "EncodedBundle",
    "Encoder",
    "EncoderError",
    "EncoderSettings",
    "Generation",
    "GenerationBundle",
    "GenerationKind",
    "GenerationRequest",
    "GenerationResult",
    "HashingEncoder",
    "HttpLLM",
    "IntentVector",
    "InvalidSessionError",
    "LLMError",
    "LLMSettings",
    "MethodSettings",
    "MetricReport",
    "MockLLM",
    "OutputParseError",
    "ParsedOutput",
    "Passage",
    "PassageStore",
    "PipelineConfig",
    "PipelineRuntime",
    "PrecomputedEncoder",
    "PromptTemplate",
    "PromptingMode",
    "Qrels",
    "RankedList",
    "RemoteEncoder",
    "RunPaths",
    "Session",
    "TTestResult",
    "TextKind",
    "Turn",
    "aggregate",
    "apply_overrides",
    "build_corpus_index",
    "build_encoder",
    "build_index",
    "build_llm",
    "build_rar_prompt",
    "build_rew_prompt",
    "build_rtr_response_prompt",
    "compare_runs",
    "evaluate_run",
    "format_output",
    "load_config",
    "load_corpus",
    "load_demonstrations",
    "load_run",
    "load_sessions",
    "maxp_docs",
    "maxprob",
    "mean",
    "mrr",
    "ndcg_at_k",
    "paired_t_test",
    "parse_output",
    "recall_at_k",
    "run_benchmark",
    "save_corpus",
    "save_run",
    "save_sessions",
    "self_consistency",
    "split_document",
    "truncate",
    "validate_session",
    "write_vector_store",
]
