"""Run configuration: a YAML document with nested sections.

Every section has defaults; unknown keys are rejected with the offending
dotted field name. :meth:`RunConfig.to_dict` returns the effective config with
all defaults filled in, which is what reports echo.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .attention import AttentionMode
from .dit import placement
from .errors import ConfigError
from .masks import Axis


@dataclass
class RegionsSection:
    axis: str = "height"
    count: int = 2
    layout: list[int] | None = None


@dataclass
class GridSection:
    height: int = 32
    width: int = 32


@dataclass
class ModelSection:
    num_blocks: int = 39
    injected: Any = "all"
    mode: str = AttentionMode.REGION_OUTPUT_MASKED.value
    d_model: int = 64
    heads: int = 4
    head_dim: int = 16
    d_long: int = 32
    d_short: int = 24


@dataclass
class SamplerSection:
    steps: int = 20
    sigma_max: float = 1.0
    sigma_min: float = 0.01
    cfg_scale: float = 6.0
    denoise: float = 1.0


@dataclass
class LlmSection:
    endpoint: str = "http://127.0.0.1:8000/v1/chat/completions"
    model: str = "gpt-4o-mini"
    api_key_env: str = "REGIONDIT_LLM_API_KEY"
    timeout: float = 30.0
    max_retries: int = 3
    backoff: float = 0.5
    concurrency: int = 2


@dataclass
class PromptsSection:
    source: str = "offline"
    intent: str = "a coastal landscape at sunset"
    llm: LlmSection = field(default_factory=LlmSection)
    # source=files: {"high_level": str, "negative": {...}, "merged": {...},
    #                "positives": [{"text", "long", "short"}, ...]}
    files: dict | None = None


@dataclass
class SeedsSection:
    weights: int = 0
    noise: int = 0
    text: int = 0


@dataclass
class AblationSection:
    counts: list[int] = field(default_factory=lambda: [0, 13, 26, 39])
    policies: list[str] = field(default_factory=lambda: ["deepest-first", "shallowest-first"])
    explicit: list[list[int]] = field(default_factory=list)
    timestep: float = 0.5
    trend_seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    trend_policy: str = "shallowest-first"
    workers: int = 1


@dataclass
class RunConfig:
    regions: RegionsSection = field(default_factory=RegionsSection)
    grid: GridSection = field(default_factory=GridSection)
    model: ModelSection = field(default_factory=ModelSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    prompts: PromptsSection = field(default_factory=PromptsSection)
    seeds: SeedsSection = field(default_factory=SeedsSection)
    ablation: AblationSection = field(default_factory=AblationSection)
    output: str = "out"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"]["injected"] = sorted(self.injected_blocks())
        return d

    def injected_blocks(self) -> frozenset[int]:
        return resolve_injected(self.model.injected, self.model.num_blocks)

    def validate(self) -> "RunConfig":
        _check_positive(self, ("grid.height", "grid.width", "regions.count", "model.num_blocks",
                               "model.d_model", "model.heads", "model.head_dim", "model.d_long",
                               "model.d_short", "sampler.steps", "ablation.workers"))
        try:
            Axis(self.regions.axis)
        except ValueError:
            raise ConfigError(f"unknown axis {self.regions.axis!r}", "regions.axis") from None
        if self.regions.layout is not None:
            lay = self.regions.layout
            if (not isinstance(lay, list) or len(lay) != 2 or lay[0] * lay[1] != self.regions.count):
                raise ConfigError("layout must be [rows, cols] with rows*cols == count", "regions.layout")
        try:
            AttentionMode(self.model.mode)
        except ValueError:
            raise ConfigError(f"unknown attention mode {self.model.mode!r}", "model.mode") from None
        self.injected_blocks()
        s = self.sampler
        if not s.sigma_max > s.sigma_min > 0:
            raise ConfigError("need sigma_max > sigma_min > 0", "sampler.sigma_min")
        if s.cfg_scale < 0:
            raise ConfigError("cfg scale must be >= 0", "sampler.cfg_scale")
        if not 0 < s.denoise <= 1:
            raise ConfigError("denoise must lie in (0, 1]", "sampler.denoise")
        if self.prompts.source not in ("offline", "llm", "files"):
            raise ConfigError(f"unknown prompt source {self.prompts.source!r}", "prompts.source")
        if self.prompts.source == "files":
            files = self.prompts.files or {}
            for key in ("positives", "negative", "merged"):
                if key not in files:
                    raise ConfigError(f"missing '{key}'", f"prompts.files.{key}")
            if len(files["positives"]) != self.regions.count:
                raise ConfigError(
                    f"{len(files['positives'])} positive prompts for {self.regions.count} regions",
                    "prompts.files.positives",
                )
        if not self.prompts.intent.strip():
            raise ConfigError("intent must be non-empty", "prompts.intent")
        for k in self.ablation.counts:
            if not isinstance(k, int) or not 0 <= k <= self.model.num_blocks:
                raise ConfigError(f"injection count {k!r} outside [0, {self.model.num_blocks}]",
                                  "ablation.counts")
        for p in self.ablation.policies + [self.ablation.trend_policy]:
            if p not in ("deepest-first", "shallowest-first"):
                raise ConfigError(f"unknown placement policy {p!r}", "ablation.policies")
        for sset in self.ablation.explicit:
            resolve_injected(list(sset), self.model.num_blocks, "ablation.explicit")
        return self


def resolve_injected(spec, num_blocks: int, where: str = "model.injected") -> frozenset[int]:
    if spec == "all":
        return frozenset(range(num_blocks))
    if spec in ("none", None):
        return frozenset()
    if isinstance(spec, list):
        if not all(isinstance(i, int) and 0 <= i < num_blocks for i in spec):
            raise ConfigError(f"block indices must lie in [0, {num_blocks})", where)
        return frozenset(spec)
    if isinstance(spec, dict) and set(spec) == {"policy", "count"}:
        try:
            return placement(spec["policy"], int(spec["count"]), num_blocks)
        except ValueError as exc:
            raise ConfigError(str(exc), where) from None
    raise ConfigError(f"cannot interpret injection spec {spec!r}", where)


def _check_positive(cfg: RunConfig, names) -> None:
    for dotted in names:
        obj = cfg
        for part in dotted.split("."):
            obj = getattr(obj, part)
        if not isinstance(obj, int) or isinstance(obj, bool) or obj < 1:
            raise ConfigError(f"must be a positive integer, got {obj!r}", dotted)


_SECTIONS = {
    "regions": RegionsSection, "grid": GridSection, "model": ModelSection,
    "sampler": SamplerSection, "prompts": PromptsSection, "seeds": SeedsSection,
    "ablation": AblationSection,
}


def _build(cls, data, prefix: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError("expected a mapping", prefix)
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, val in data.items():
        if key not in known:
            raise ConfigError("unknown key", f"{prefix}.{key}")
        if cls is PromptsSection and key == "llm":
            val = _build(LlmSection, val, f"{prefix}.llm")
        else:
            default = getattr(cls(), key)
            val = _coerce(val, default, f"{prefix}.{key}")
        kwargs[key] = val
    return cls(**kwargs)


def _coerce(val, default, where):
    if isinstance(default, bool):
        if not isinstance(val, bool):
            raise ConfigError(f"expected true/false, got {val!r}", where)
    elif isinstance(default, int):
        if not isinstance(val, int) or isinstance(val, bool):
            raise ConfigError(f"expected an integer, got {val!r}", where)
    elif isinstance(default, float):
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise ConfigError(f"expected a number, got {val!r}", where)
        val = float(val)
    elif isinstance(default, str) and where != "model.injected":
        if not isinstance(val, str):
            raise ConfigError(f"expected a string, got {val!r}", where)
    return val


def config_from_dict(data: dict | None) -> RunConfig:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping")
    kwargs = {}
    for key, val in data.items():
        if key == "output":
            if not isinstance(val, str):
                raise ConfigError("expected a string", "output")
            kwargs[key] = val
        elif key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], val, key)
        else:
            raise ConfigError("unknown key", key)
    return RunConfig(**kwargs).validate()


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ConfigError(f"YAML syntax error: {exc.problem}", line=line) from None
    return config_from_dict(data)
