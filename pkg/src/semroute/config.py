"""Run configuration.

One YAML file configures a run. Validation is strict in both directions:
unknown keys are rejected (typos must not silently fall back to defaults)
and keys required by the selected backends are reported with their full
dotted path. Command-line ``--set section.key=value`` overrides beat the
file; environment variables override only endpoint URLs and API keys:

    SEMROUTE_GENERATOR_URL   -> generator.http_url
    SEMROUTE_ENTAILMENT_URL  -> entailment.http_url
    SEMROUTE_API_KEY         -> api_key

All randomness derives from the single top-level ``seed``.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError

MOCK = "mock"
HTTP = "http"
BACKENDS = (MOCK, HTTP)
SIGNALS = ("se", "pe")

ENV_GENERATOR_URL = "SEMROUTE_GENERATOR_URL"
ENV_ENTAILMENT_URL = "SEMROUTE_ENTAILMENT_URL"
ENV_API_KEY = "SEMROUTE_API_KEY"


@dataclass
class GeneratorConfig:
    backend: str = MOCK
    mock_scenario: str | None = None
    http_url: str | None = None
    model: str = "default"
    timeout_s: float = 30.0
    max_retries: int = 3
    fan_out: int = 4
    max_n_per_request: int = 0
    demo_question: str = "What is the capital of France?"
    demo_answer: str = "Paris"
    context_header: str = "Context:"


@dataclass
class EntailmentConfig:
    backend: str = MOCK
    alias_table: str | None = None
    antonym_table: str | None = None
    http_url: str | None = None
    timeout_s: float = 30.0
    max_retries: int = 3


@dataclass
class SamplingConfig:
    n: int = 10
    temperature: float = 1.0


@dataclass
class EntropyConfig:
    length_normalized: bool = False


@dataclass
class RouterConfig:
    tau_low: float = 0.4
    tau_high: float = 0.9
    signal: str = "se"


@dataclass
class RetrieverConfig:
    k: int = 5
    index_dir: str | None = None


@dataclass
class MultistepConfig:
    max_steps: int = 3


@dataclass
class RunnerConfig:
    parallelism: int = 4
    measure_time: bool = False


@dataclass
class RunConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    entailment: EntailmentConfig = field(default_factory=EntailmentConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    entropy: EntropyConfig = field(default_factory=EntropyConfig)
    router: RouterConfig = field(default_factory=RouterConfig)
    retriever: RetrieverConfig = field(default_factory=RetrieverConfig)
    multistep: MultistepConfig = field(default_factory=MultistepConfig)
    runner: RunnerConfig = field(default_factory=RunnerConfig)
    seed: int = 42
    api_key: str | None = None

    def replace(self, **sections) -> "RunConfig":
        """Copy with whole sections swapped out (used by ablation arms)."""
        return dataclasses.replace(self, **sections)


_OPTIONAL_STR_FIELDS = {
    "generator.mock_scenario",
    "generator.http_url",
    "entailment.alias_table",
    "entailment.antonym_table",
    "entailment.http_url",
    "retriever.index_dir",
    "api_key",
}


def _coerce(path: str, value: object, target_type: type) -> object:
    """Coerce a raw config value onto a dataclass field, strictly."""
    if path in _OPTIONAL_STR_FIELDS:
        if value is None:
            return None
        if isinstance(value, str):
            return value
        raise ConfigError(f"config key {path}: expected a string or null")
    if target_type is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"config key {path}: expected a boolean")
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {path}: expected an integer")
        return value
    if target_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {path}: expected a number")
        return float(value)
    if target_type is str:
        if not isinstance(value, str):
            raise ConfigError(f"config key {path}: expected a string")
        return value
    raise ConfigError(f"config key {path}: unsupported type")  # pragma: no cover


_SECTIONS: dict[str, type] = {
    "generator": GeneratorConfig,
    "entailment": EntailmentConfig,
    "sampling": SamplingConfig,
    "entropy": EntropyConfig,
    "router": RouterConfig,
    "retriever": RetrieverConfig,
    "multistep": MultistepConfig,
    "runner": RunnerConfig,
}

_FIELD_TYPES: dict[str, type] = {"seed": int, "api_key": str}
for _name, _cls in _SECTIONS.items():
    _defaults = _cls()
    for _leaf in dataclasses.fields(_cls):
        _value = getattr(_defaults, _leaf.name)
        _FIELD_TYPES[f"{_name}.{_leaf.name}"] = type(_value) if _value is not None else str


def _apply(config: RunConfig, path: str, value: object) -> None:
    if path not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key: {path}")
    coerced = _coerce(path, value, _FIELD_TYPES[path])
    if "." in path:
        section_name, leaf = path.split(".", 1)
        setattr(getattr(config, section_name), leaf, coerced)
    else:
        setattr(config, path, coerced)


def _walk(config: RunConfig, raw: dict, prefix: str = "") -> None:
    for key, value in raw.items():
        if not isinstance(key, str):
            raise ConfigError(f"config keys must be strings, got {key!r}")
        path = f"{prefix}{key}"
        if isinstance(value, dict):
            if path in _FIELD_TYPES:
                raise ConfigError(f"config key {path}: expected a scalar, got a section")
            if not any(p.startswith(path + ".") for p in _FIELD_TYPES):
                raise ConfigError(f"unknown config key: {path}")
            _walk(config, value, prefix=f"{path}.")
        else:
            _apply(config, path, value)


def _validate(config: RunConfig) -> None:
    checks = [
        (config.generator.backend in BACKENDS, "generator.backend must be mock or http"),
        (config.entailment.backend in BACKENDS, "entailment.backend must be mock or http"),
        (config.router.signal in SIGNALS, "router.signal must be se or pe"),
        (config.sampling.n >= 1, "sampling.n must be >= 1"),
        (config.sampling.temperature >= 0, "sampling.temperature must be >= 0"),
        (config.router.tau_low >= 0, "router.tau_low must be >= 0"),
        (
            config.router.tau_low <= config.router.tau_high,
            f"router.tau_low > router.tau_high "
            f"({config.router.tau_low} > {config.router.tau_high})",
        ),
        (config.retriever.k >= 1, "retriever.k must be >= 1"),
        (config.multistep.max_steps >= 1, "multistep.max_steps must be >= 1"),
        (config.runner.parallelism >= 1, "runner.parallelism must be >= 1"),
        (config.generator.fan_out >= 1, "generator.fan_out must be >= 1"),
    ]
    for ok, message in checks:
        if not ok:
            raise ConfigError(message)
    if config.generator.backend == MOCK and not config.generator.mock_scenario:
        raise ConfigError(
            "missing required config key: generator.mock_scenario "
            "(required when generator.backend = mock)"
        )
    if config.generator.backend == HTTP and not config.generator.http_url:
        raise ConfigError(
            "missing required config key: generator.http_url "
            "(required when generator.backend = http)"
        )
    if config.entailment.backend == HTTP and not config.entailment.http_url:
        raise ConfigError(
            "missing required config key: entailment.http_url "
            "(required when entailment.backend = http)"
        )


def _apply_env(config: RunConfig, env: dict[str, str]) -> None:
    if env.get(ENV_GENERATOR_URL):
        config.generator.http_url = env[ENV_GENERATOR_URL]
    if env.get(ENV_ENTAILMENT_URL):
        config.entailment.http_url = env[ENV_ENTAILMENT_URL]
    if env.get(ENV_API_KEY):
        config.api_key = env[ENV_API_KEY]


def parse_override(raw: str) -> tuple[str, object]:
    """Parse one --set KEY=VALUE override; the value is YAML-interpreted."""
    if "=" not in raw:
        raise ConfigError(f"override {raw!r} is not of the form key=value")
    key, text = raw.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {raw!r} has an empty key")
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {raw!r}: unparseable value ({exc})") from exc
    return key, value


def load_config(
    path: str | Path | None = None,
    overrides: list[str] | None = None,
    seed: int | None = None,
    env: dict[str, str] | None = None,
    validate: bool = True,
) -> RunConfig:
    """Load, override, and validate a run configuration.

    Precedence, lowest to highest: built-in defaults, the config file,
    environment variables (endpoint URLs and API key only), --set overrides,
    and the --seed flag.

    Raises:
        ConfigError: Unknown keys, type mismatches, missing required keys,
            or inconsistent values. Raised before any backend is touched.
    """
    config = RunConfig()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            raw = yaml.safe_load(p.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: invalid YAML ({exc})") from exc
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
        _walk(config, raw)
    _apply_env(config, os.environ if env is None else env)
    for override in overrides or []:
        key, value = parse_override(override)
        _apply(config, key, value)
    if seed is not None:
        config.seed = seed
    if validate:
        _validate(config)
    return config
