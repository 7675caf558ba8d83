"""Run configuration: one JSON document, overridable from the command line.

Example::

    {
      "input_dir": "raw/", "output_dir": "dataset/",
      "provider": {"kind": "http", "preset": "gemini"},
      "strategy": "fpb", "vocabulary": "ET", "sqr_enabled": true,
      "ensemble_weights": [0.5, 0.5],
      "preprocess": {"target_size": 512, "interpolation": "bilinear",
                     "normalization": "minmax_per_channel"},
      "evaluation_enabled": true,
      "code_mapping": {"A": "crack", "B": "efflorescence", "C": "scaling",
                       "D": "corrosion", "N": "non_defective"},
      "seed": null, "max_sqr_rounds": 1
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .evaluation import DEFAULT_CODE_MAPPING, parse_mapping
from .exceptions import ConfigError
from .imaging import PreprocessConfig
from .labels import Strategy, VocabularyKind
from .provider import PRESETS, MockProviderConfig, ProviderConfig, preset
from .sqr import KeywordRules

# noiseless mock: every class is perceived as itself
IDENTITY_CONFUSION = {label: {label: 1.0} for label in
                      ("crack", "efflorescence", "scaling", "corrosion", "non_defective")}


def parse_provider(spec: dict | None, seed: int | None = None):
    if spec is None:
        return None
    spec = dict(spec)
    kind = spec.pop("kind", "http")
    if kind == "mock":
        spec.pop("seed", None)
        spec.setdefault("confusion", IDENTITY_CONFUSION)
        try:
            return MockProviderConfig(seed=seed if seed is not None else 0, **spec)
        except TypeError as exc:
            raise ConfigError(f"mock provider: {exc}") from None
    if kind != "http":
        raise ConfigError(f"unknown provider kind {kind!r}")
    name = spec.pop("preset", None)
    try:
        if name is not None:
            return preset(name, **spec)
        return ProviderConfig(**spec)
    except TypeError as exc:
        raise ConfigError(f"provider config: {exc}") from None


@dataclass
class RunConfig:
    input_dir: str | None = None
    output_dir: str | None = None
    provider: ProviderConfig | MockProviderConfig | None = None
    strategy: Strategy = Strategy.FPB
    vocabulary: VocabularyKind = VocabularyKind.ET
    sqr_enabled: bool = False
    ensemble_weights: tuple[float, float] | None = (0.5, 0.5)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    evaluation_enabled: bool = False
    code_mapping: dict = field(default_factory=lambda: dict(DEFAULT_CODE_MAPPING))
    seed: int | None = None
    max_sqr_rounds: int = 1
    embedder: dict | None = None
    keyword_rules: KeywordRules = field(default_factory=KeywordRules)
    concurrency: int = 4
    mode: str = "copy"
    template_dir: str | None = None
    media_type: str = "image/png"
    # raw provider sections kept so --provider can switch between them
    provider_sections: dict = field(default_factory=dict, repr=False)

    @property
    def is_mock(self) -> bool:
        return isinstance(self.provider, MockProviderConfig)

    def validate(self) -> RunConfig:
        if self.provider is None:
            raise ConfigError("no provider configured")
        if self.strategy is Strategy.ENSEMBLE:
            if self.ensemble_weights is None or len(self.ensemble_weights) != 2:
                raise ConfigError("the ensemble strategy needs two path weights")
            from .ensemble import EnsembleConfig

            EnsembleConfig.from_pair(self.ensemble_weights)
        if self.is_mock and self.seed is None:
            raise ConfigError("a seed is required with the mock provider")
        if self.max_sqr_rounds < 1:
            raise ConfigError("max_sqr_rounds must be >= 1")
        if self.concurrency < 1:
            raise ConfigError("concurrency must be >= 1")
        if self.mode not in ("copy", "move"):
            raise ConfigError("mode must be copy or move")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__} | {"mock", "providers"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        seed = d.get("seed")
        if seed is not None and not isinstance(seed, int):
            raise ConfigError("seed must be an integer")
        sections = dict(d.get("providers") or {})
        if d.get("mock") is not None:
            sections["mock"] = dict(d["mock"], kind="mock")
        provider_spec = d.get("provider")
        if provider_spec is not None and provider_spec.get("kind") == "mock":
            sections.setdefault("mock", provider_spec)
        try:
            return cls(
                input_dir=d.get("input_dir"),
                output_dir=d.get("output_dir"),
                provider=parse_provider(provider_spec, seed),
                strategy=Strategy(str(d.get("strategy", "fpb")).lower()),
                vocabulary=VocabularyKind.parse(d.get("vocabulary", "ET")),
                sqr_enabled=bool(d.get("sqr_enabled", False)),
                ensemble_weights=tuple(d["ensemble_weights"]) if d.get("ensemble_weights") is not None else (0.5, 0.5),
                preprocess=PreprocessConfig(**(d.get("preprocess") or {})),
                evaluation_enabled=bool(d.get("evaluation_enabled", False)),
                code_mapping=parse_mapping(d.get("code_mapping")),
                seed=seed,
                max_sqr_rounds=int(d.get("max_sqr_rounds", 1)),
                embedder=d.get("embedder"),
                keyword_rules=KeywordRules.from_dict(d.get("keyword_rules")),
                concurrency=int(d.get("concurrency", 4)),
                mode=d.get("mode", "copy"),
                template_dir=d.get("template_dir"),
                media_type=d.get("media_type", "image/png"),
                provider_sections=sections,
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from None

    @classmethod
    def load(cls, path) -> RunConfig:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def with_overrides(self, *, input_dir=None, output_dir=None, strategy=None, vocabulary=None,
                       sqr=None, provider=None, seed=None, concurrency=None, move=None) -> RunConfig:
        cfg = replace(self)
        if input_dir is not None:
            cfg.input_dir = str(input_dir)
        if output_dir is not None:
            cfg.output_dir = str(output_dir)
        if strategy is not None:
            cfg.strategy = Strategy(strategy.lower())
        if vocabulary is not None:
            cfg.vocabulary = VocabularyKind.parse(vocabulary)
        if sqr:
            cfg.sqr_enabled = True
        if seed is not None:
            cfg.seed = int(seed)
        if provider is not None:
            cfg.provider = self._select_provider(provider, cfg.seed)
        elif cfg.is_mock and seed is not None:
            cfg.provider = replace(cfg.provider, seed=cfg.seed)
        if concurrency is not None:
            cfg.concurrency = int(concurrency)
        if move:
            cfg.mode = "move"
        return cfg

    def _select_provider(self, name: str, seed):
        section = self.provider_sections.get(name)
        if name == "mock":
            return parse_provider(section or {"kind": "mock"}, seed)
        if section is not None:
            return parse_provider(dict(section, kind="http", **({} if "preset" in section or "endpoint" in section
                                                                 else {"preset": name})), seed)
        if name in PRESETS:
            return preset(name)
        raise ConfigError(f"unknown provider {name!r}; known: mock, {', '.join(sorted(PRESETS))}")
