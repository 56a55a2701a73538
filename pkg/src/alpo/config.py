"""Pipeline configuration: one flat INI section, overridable from the command line.

Credentials never live in the file; the HTTP backends read ``ALPO_API_KEY``.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, fields

from alpo.errors import ConfigError
from alpo.losses import MixSchedule
from alpo.sampling import RetryPolicy, SamplingParams

SECTION = "alpo"


@dataclass
class PipelineConfig:
    src_lang: str = "zh"
    tgt_lang: str = "en"
    # sampling
    k: int = 15
    n: int = 35
    temperature: float = 1.0
    top_k: int = 40
    top_p: float = 0.9
    max_new_tokens: int = 256
    use_reference: bool = True
    # preference training
    lambda_start: float = 0.2
    lambda_end: float = 0.6
    alpo_optimizer: str = "AdamW"
    alpo_lr: float = 1e-6
    alpo_epochs: int = 1
    alpo_batch_size: int = 96
    # supervised warm-up
    sft_fraction: float = 0.8
    sft_optimizer: str = "AdamW"
    sft_lr: float = 1e-6
    sft_epochs: int = 4
    sft_batch_size: int = 96
    # corpus
    align_threshold: float = 0.7
    # backends
    generator_url: str = ""
    generator_model: str = ""
    evaluator_url: str = ""
    evaluator_model: str = ""
    eval_dimension: str = "vividness"
    max_in_flight: int = 8
    request_timeout: float = 60.0
    retries: int = 3
    backoff: float = 0.5
    # offline stubs
    stub_drop_rate: float = 0.1
    stub_score_scale: float = 1.0
    stub_lexicon_seed: int = 0
    # toy policy
    toy_order: int = 1
    toy_lr: float = 0.5
    toy_steps: int = 200
    toy_init_scale: float = 0.1
    # randomness
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.k < 2:
            raise ConfigError("k must be at least 2")
        if self.n < 1:
            raise ConfigError("n must be at least 1")
        if not 0.0 < self.sft_fraction < 1.0:
            raise ConfigError("sft_fraction must lie strictly between 0 and 1")
        if self.max_in_flight < 1 or self.retries < 1:
            raise ConfigError("max_in_flight and retries must be positive")
        if self.toy_order < 1 or self.toy_steps < 0:
            raise ConfigError("toy_order must be positive and toy_steps non-negative")
        try:
            self.sampling_params()
            self.mix_schedule()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def direction(self) -> tuple[str, str]:
        return (self.src_lang, self.tgt_lang)

    def sampling_params(self) -> SamplingParams:
        return SamplingParams(self.temperature, self.top_k, self.top_p, self.max_new_tokens)

    def mix_schedule(self) -> MixSchedule:
        return MixSchedule(self.lambda_start, self.lambda_end)

    def retry_policy(self) -> RetryPolicy:
        return RetryPolicy(self.retries, self.backoff)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def with_overrides(self, **values) -> "PipelineConfig":
        known = {f.name: f for f in fields(self)}
        clean = {}
        for key, value in values.items():
            if value is None:
                continue
            if key not in known:
                raise ConfigError(f"unknown configuration key {key!r}")
            clean[key] = _coerce(known[key], value)
        return dataclasses.replace(self, **clean)

    def to_ini(self) -> str:
        rows = [f"[{SECTION}]"]
        for key, value in self.to_dict().items():
            rows.append(f"{key} = {str(value).lower() if isinstance(value, bool) else value}")
        return "\n".join(rows) + "\n"


def _coerce(f: dataclasses.Field, value):
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    if not isinstance(value, str):
        return value
    try:
        if kind == "bool":
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"{f.name}: cannot read {value!r} as {kind}") from None
    return value.strip()


def load_config(path=None, **overrides) -> PipelineConfig:
    """Defaults, then the ``[alpo]`` section of ``path`` if given, then ``overrides``."""
    values = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if parser.has_section(SECTION):
            values = dict(parser.items(SECTION))
        extra = [s for s in parser.sections() if s != SECTION]
        if extra:
            raise ConfigError(f"unexpected section(s) {extra} in {path}")
    try:
        return PipelineConfig().with_overrides(**values).with_overrides(**overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
