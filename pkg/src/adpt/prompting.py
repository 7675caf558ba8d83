"""Category vocabularies and prompt rendering.

Prompt bodies live in plain-text template files (``templates/*.txt`` by
default) with ``{name}`` placeholders. Only one vocabulary term per
category is ever placed in a category prompt.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path

from .exceptions import ConfigError, InvalidLabelForSqr
from .imaging import ImagePayload
from .labels import CATEGORIES, DefectLabel, Strategy, VocabularyKind


class PromptStrategy(str, Enum):
    ZSR = "ZSR"
    FPB = "FPB"
    BINARY = "BINARY"
    SQR = "SQR"


@dataclass(frozen=True)
class CategoryLexicon:
    category: DefectLabel
    gl_term: str
    et_term: str
    tj_term: str
    # visual cue, rendered as "<term>: <feature_description>"
    feature_description: str

    def __post_init__(self):
        if self.category in (DefectLabel.UNCERTAIN, DefectLabel.NON_DEFECTIVE):
            raise ConfigError(f"{self.category} cannot carry a lexicon")
        for name in ("gl_term", "et_term", "tj_term", "feature_description"):
            if not getattr(self, name).strip():
                raise ConfigError(f"{self.category}: {name} is empty")

    def term(self, kind: VocabularyKind) -> str:
        return {VocabularyKind.GL: self.gl_term, VocabularyKind.ET: self.et_term,
                VocabularyKind.TJ: self.tj_term}[VocabularyKind.parse(kind)]

    @property
    def terms(self) -> tuple[str, str, str]:
        return (self.gl_term, self.et_term, self.tj_term)

    def feature_line(self, kind: VocabularyKind) -> str:
        return f"{self.term(kind)}: {self.feature_description}"


_DEFAULT_LEXICONS = (
    CategoryLexicon(
        DefectLabel.CRACK, "Split", "Crack", "Fissure",
        "narrow linear fractures or gaps with sharp edges running through concrete or masonry",
    ),
    CategoryLexicon(
        DefectLabel.EFFLORESCENCE, "Salting", "Efflorescence", "Weathering",
        "white, powdery or crystalline salt deposits on concrete or masonry surfaces",
    ),
    CategoryLexicon(
        DefectLabel.SCALING, "Flaking", "Scaling", "Peeling",
        "layered loss of the thin surface mortar in patches, exposing rough aggregate beneath",
    ),
    CategoryLexicon(
        DefectLabel.CORROSION, "Rust", "Corrosion", "Erosion",
        "rusty, eroded, or oxidized surfaces, especially on metal parts",
    ),
)


def default_lexicons() -> list[CategoryLexicon]:
    """The four defect categories with their GL/ET/TJ synonyms."""
    return list(_DEFAULT_LEXICONS)


def lexicon_for(label: DefectLabel, lexicons) -> CategoryLexicon:
    for lex in lexicons:
        if lex.category == label:
            return lex
    raise ConfigError(f"no lexicon for {label}")


@dataclass(frozen=True)
class PromptTemplate:
    strategy: PromptStrategy
    body: str

    @property
    def placeholders(self) -> set[str]:
        return {field for _, field, _, _ in string.Formatter().parse(self.body) if field}

    def render(self, **values: str) -> str:
        missing = self.placeholders - values.keys()
        if missing:
            raise ConfigError(f"{self.strategy.value} template: unresolved placeholders {sorted(missing)}")
        return self.body.format(**values)


_TEMPLATE_FILES = {
    PromptStrategy.ZSR: "zsr.txt",
    PromptStrategy.FPB: "fpb.txt",
    PromptStrategy.BINARY: "binary.txt",
    PromptStrategy.SQR: "sqr.txt",
}

_ALLOWED = {
    PromptStrategy.ZSR: {"categories"},
    PromptStrategy.FPB: {"categories", "features"},
    PromptStrategy.BINARY: set(),
    PromptStrategy.SQR: {"description", "label"},
}


class TemplateSet:
    """The four prompt templates, loaded once and then read-only."""

    def __init__(self, templates: dict[PromptStrategy, PromptTemplate]):
        for strategy, tpl in templates.items():
            unknown = tpl.placeholders - _ALLOWED[strategy]
            if unknown:
                raise ConfigError(f"{strategy.value} template uses unknown placeholders {sorted(unknown)}")
        self._templates = dict(templates)

    @classmethod
    def load(cls, directory: str | Path | None = None) -> TemplateSet:
        """Load templates from ``directory``; files missing there fall back to the packaged defaults."""
        out = {}
        packaged = resources.files("adpt") / "templates"
        for strategy, fname in _TEMPLATE_FILES.items():
            override = Path(directory) / fname if directory else None
            if override is not None and override.is_file():
                body = override.read_text(encoding="utf-8")
            else:
                body = (packaged / fname).read_text(encoding="utf-8")
            out[strategy] = PromptTemplate(strategy, body.strip("\n"))
        return cls(out)

    def __getitem__(self, strategy: PromptStrategy) -> PromptTemplate:
        return self._templates[PromptStrategy(strategy)]


_default_templates: TemplateSet | None = None


def default_templates() -> TemplateSet:
    global _default_templates
    if _default_templates is None:
        _default_templates = TemplateSet.load()
    return _default_templates


def _as_prompt_strategy(strategy) -> PromptStrategy:
    if isinstance(strategy, Strategy):
        if strategy is Strategy.ENSEMBLE:
            raise ConfigError("ensemble is not a single prompt strategy")
        return PromptStrategy(strategy.value.upper())
    return PromptStrategy(str(strategy).upper())


def build_category_prompt(strategy, kind, lexicons, templates: TemplateSet | None = None) -> str:
    """Render the ZSR or FPB category-description prompt for one vocabulary kind."""
    strategy = _as_prompt_strategy(strategy)
    kind = VocabularyKind.parse(kind)
    lexicons = list(lexicons)
    if not lexicons:
        raise ValueError("lexicons must be non-empty")
    templates = templates or default_templates()
    categories = ", ".join(lex.term(kind) for lex in lexicons)
    if strategy is PromptStrategy.ZSR:
        return templates[strategy].render(categories=categories)
    if strategy is PromptStrategy.FPB:
        features = "\n".join(f"- {lex.feature_line(kind)}" for lex in lexicons)
        return templates[strategy].render(categories=categories, features=features)
    raise ConfigError(f"{strategy.value} is not a category prompt")


def build_binary_prompt(templates: TemplateSet | None = None) -> str:
    return (templates or default_templates())[PromptStrategy.BINARY].render()


def build_sqr_prompt(payload: ImagePayload, description: str, label: DefectLabel,
                     templates: TemplateSet | None = None) -> str:
    """Render the self-questioning prompt.

    The payload travels beside the text in the provider request; it is
    taken here so callers cannot build an SQR prompt without an image.
    """
    if payload is None:
        raise ValueError("an image payload is required")
    if not description or not description.strip():
        raise ValueError("description must be non-empty")
    label = DefectLabel.parse(label)
    if label not in CATEGORIES:
        raise InvalidLabelForSqr(f"SQR re-evaluates committed category labels only, got {label}")
    tpl = (templates or default_templates())[PromptStrategy.SQR]
    return tpl.render(description=description.strip(), label=label.value)
