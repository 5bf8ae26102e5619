"""Configuration for the batch pipeline, the session service, and the CLI.

Settings live in a TOML file mirroring every CLI flag; flags override the
file. Sample counts default per prompting mode (rewriting only: 5 rewrites;
rewrite-then-response: 1 rewrite with 5 responses; rewrite-and-response:
5 paired samples) and the sampling temperature defaults to 0.7.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .core import AggregationMethod, PromptingMode
from .encoders import Encoder, HashingEncoder, PrecomputedEncoder, RemoteEncoder
from .llm import HttpLLM, MockLLM

DEFAULT_TEMPERATURE = 0.7
DEFAULT_TOP_K = 1000

# (rewrites N, responses per rewrite M) when not set explicitly.
DEFAULT_SAMPLES: dict[PromptingMode, tuple[int, int]] = {
    PromptingMode.REW: (5, 0),
    PromptingMode.RTR: (1, 5),
    PromptingMode.RAR: (5, 1),
}


class ConfigError(Exception):
    """Configuration that cannot be acted on."""


def default_demonstrations_path() -> Path:
    return Path(__file__).parent / "data" / "demonstrations.json"


@dataclass(frozen=True)
class MethodSettings:
    """One cell of the method grid plus sampling and retrieval depth."""

    prompting: PromptingMode = PromptingMode.RAR
    aggregation: AggregationMethod = AggregationMethod.MEAN
    cot: bool = True
    n: int | None = None
    m: int | None = None
    temperature: float = DEFAULT_TEMPERATURE
    top_k: int = DEFAULT_TOP_K

    def resolve_samples(self) -> tuple[int, int]:
        """Effective (N, M), validated against the prompting mode."""
        default_n, default_m = DEFAULT_SAMPLES[self.prompting]
        n = self.n if self.n is not None else default_n
        m = self.m if self.m is not None else default_m
        if n < 1:
            raise ConfigError(f"n must be >= 1, got {n}")
        if self.prompting is PromptingMode.REW and m != 0:
            raise ConfigError(f"rewriting-only prompting takes no responses; got m={m}")
        if self.prompting is PromptingMode.RTR and m < 1:
            raise ConfigError(f"rewrite-then-response prompting needs m >= 1, got {m}")
        if self.prompting is PromptingMode.RAR and m != 1:
            raise ConfigError(f"rewrite-and-response prompting pairs one response per rewrite; got m={m}")
        return n, m

    def validate(self) -> None:
        self.resolve_samples()
        if self.temperature < 0:
            raise ConfigError(f"temperature must be >= 0, got {self.temperature}")
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")


@dataclass(frozen=True)
class LLMSettings:
    backend: str = "mock"
    seed: int = 0
    fixtures: str | None = None
    endpoint: str | None = None
    model: str | None = None
    api_key_env: str = "CONVSEARCH_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    requests_per_minute: int | None = None
    max_output_tokens: int = 512


@dataclass(frozen=True)
class EncoderSettings:
    backend: str = "mock"
    dim: int = 64
    endpoint: str | None = None
    store_path: str | None = None
    timeout: float = 60.0


@dataclass(frozen=True)
class RunPaths:
    index: str | None = None
    corpus: str | None = None
    topics: str | None = None
    qrels: str | None = None
    demos: str | None = None
    output_dir: str = "out"
    trace: str | None = None
    cache_dir: str | None = None

    def demos_path(self) -> Path:
        return Path(self.demos) if self.demos else default_demonstrations_path()


@dataclass(frozen=True)
class PipelineConfig:
    method: MethodSettings = field(default_factory=MethodSettings)
    llm: LLMSettings = field(default_factory=LLMSettings)
    encoder: EncoderSettings = field(default_factory=EncoderSettings)
    paths: RunPaths = field(default_factory=RunPaths)
    tag: str = "convsearch"
    workers: int = 4
    mrr_threshold: int = 1
    doc_maxp: bool = False
    split_window: int = 256
    split_stride: int = 128
    shard_size: int = 1024
    service_ttl_seconds: float = 3600.0
    journal: str | None = None

    def validate(self) -> None:
        self.method.validate()
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.mrr_threshold < 1:
            raise ConfigError(f"mrr_threshold must be >= 1, got {self.mrr_threshold}")


_SECTION_TYPES = {
    "method": MethodSettings,
    "llm": LLMSettings,
    "encoder": EncoderSettings,
    "paths": RunPaths,
}

_ENUM_FIELDS = {("method", "prompting"): PromptingMode, ("method", "aggregation"): AggregationMethod}


def _coerce_section(section: str, data: Mapping[str, Any]) -> Any:
    cls = _SECTION_TYPES[section]
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    converted = dict(data)
    for key, value in data.items():
        enum_type = _ENUM_FIELDS.get((section, key))
        if enum_type is not None:
            try:
                converted[key] = enum_type(value)
            except ValueError:
                choices = ", ".join(member.value for member in enum_type)
                raise ConfigError(f"{section}.{key} must be one of: {choices}; got {value!r}") from None
    try:
        return cls(**converted)
    except TypeError as exc:
        raise ConfigError(f"bad [{section}] section: {exc}") from exc


def method_settings_from_mapping(data: Mapping[str, Any]) -> MethodSettings:
    """Build and validate method settings from a JSON-style mapping (used by
    the session service's create endpoint).
    """
    settings = _coerce_section("method", data)
    settings.validate()
    return settings


def config_from_mapping(data: Mapping[str, Any]) -> PipelineConfig:
    top_fields = {f.name for f in fields(PipelineConfig)}
    unknown = set(data) - top_fields
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key in _SECTION_TYPES:
            if not isinstance(value, Mapping):
                raise ConfigError(f"[{key}] must be a table")
            kwargs[key] = _coerce_section(key, value)
        else:
            kwargs[key] = value
    try:
        config = PipelineConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    config.validate()
    return config


def load_config(path: str | Path) -> PipelineConfig:
    with open(path, "rb") as handle:
        try:
            data = tomllib.load(handle)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return config_from_mapping(data)


def apply_overrides(config: PipelineConfig, **overrides: Any) -> PipelineConfig:
    """Overlay non-None override values (CLI flags) onto a config. Keys use
    dotted section paths, e.g. ``method.prompting``.
    """
    sections: dict[str, dict[str, Any]] = {}
    top: dict[str, Any] = {}
    for dotted, value in overrides.items():
        if value is None:
            continue
        if "." in dotted:
            section, key = dotted.split(".", 1)
            sections.setdefault(section, {})[key] = value
        else:
            top[dotted] = value
    for section, values in sections.items():
        if section not in _SECTION_TYPES:
            raise ConfigError(f"unknown config section {section!r}")
        for (sec, key), enum_type in _ENUM_FIELDS.items():
            if sec == section and key in values and not isinstance(values[key], enum_type):
                values[key] = enum_type(values[key])
        top[section] = replace(getattr(config, section), **values)
    config = replace(config, **top)
    config.validate()
    return config


def build_llm(settings: LLMSettings, on_send=None):
    if settings.backend == "mock":
        return MockLLM(seed=settings.seed, fixture_path=settings.fixtures, on_send=on_send)
    if settings.backend == "http":
        if not settings.endpoint:
            raise ConfigError("llm.endpoint is required for the http backend")
        return HttpLLM(
            endpoint=settings.endpoint,
            model=settings.model,
            api_key_env=settings.api_key_env,
            timeout=settings.timeout,
            max_retries=settings.max_retries,
            requests_per_minute=settings.requests_per_minute,
            on_send=on_send,
        )
    raise ConfigError(f"unknown llm backend {settings.backend!r}; expected mock or http")


def build_encoder(settings: EncoderSettings) -> Encoder:
    if settings.backend == "mock":
        return HashingEncoder(dim=settings.dim)
    if settings.backend == "remote":
        if not settings.endpoint:
            raise ConfigError("encoder.endpoint is required for the remote backend")
        return RemoteEncoder(endpoint=settings.endpoint, dim=settings.dim, timeout=settings.timeout)
    if settings.backend == "precomputed":
        if not settings.store_path:
            raise ConfigError("encoder.store_path is required for the precomputed backend")
        return PrecomputedEncoder(settings.store_path)
    raise ConfigError(
        f"unknown encoder backend {settings.backend!r}; expected mock, remote, or precomputed"
    )
