"""Self-questioning refinement: ask the model to audit its own label."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from .exceptions import InvalidLabelForSqr, ProviderError, ConfigError
from .labels import CATEGORIES, DefectLabel, EvaluationFlag
from .prompting import build_sqr_prompt, default_lexicons
from .provider import GenerationRequest

logger = logging.getLogger(__name__)

DEFAULT_CORRECT_MARKERS = ("reasonable", "correct", "consistent", "appropriate")
DEFAULT_INCORRECT_MARKERS = ("incorrect", "wrong", "inconsistent", "suggest changing", "suggested change")
DEFAULT_CORRECTION_PATTERN = (
    r"sugges\w*\s+chang\w*\s+(?:\w+\s+)?to\s*:?\s*"
    r"(?:[\"'‘’“”]([^\"'‘’“”]+)[\"'‘’“”]"
    r"|([A-Za-z][\w\-]*))"
)


def _marker_regex(marker: str) -> re.Pattern:
    body = r"\s+".join(re.escape(part) for part in marker.split())
    return re.compile(rf"(?<!\w){body}(?!\w)", re.IGNORECASE)


@dataclass(frozen=True)
class KeywordRules:
    correct_markers: tuple[str, ...] = DEFAULT_CORRECT_MARKERS
    incorrect_markers: tuple[str, ...] = DEFAULT_INCORRECT_MARKERS
    correction_pattern: str = DEFAULT_CORRECTION_PATTERN

    def __post_init__(self):
        correct = tuple(m.strip().lower() for m in self.correct_markers)
        incorrect = tuple(m.strip().lower() for m in self.incorrect_markers)
        if not correct or not incorrect or not all(correct) or not all(incorrect):
            raise ConfigError("marker lists must be non-empty")
        if set(correct) & set(incorrect):
            raise ConfigError(f"markers in both lists: {sorted(set(correct) & set(incorrect))}")
        try:
            pattern = re.compile(self.correction_pattern, re.IGNORECASE)
        except re.error as exc:
            raise ConfigError(f"bad correction_pattern: {exc}") from exc
        object.__setattr__(self, "correct_markers", correct)
        object.__setattr__(self, "incorrect_markers", incorrect)
        object.__setattr__(self, "_correct_re", [_marker_regex(m) for m in correct])
        object.__setattr__(self, "_incorrect_re", [_marker_regex(m) for m in incorrect])
        object.__setattr__(self, "_correction_re", pattern)

    @classmethod
    def from_dict(cls, d: dict | None) -> KeywordRules:
        d = d or {}
        return cls(
            correct_markers=tuple(d.get("correct_markers", DEFAULT_CORRECT_MARKERS)),
            incorrect_markers=tuple(d.get("incorrect_markers", DEFAULT_INCORRECT_MARKERS)),
            correction_pattern=d.get("correction_pattern", DEFAULT_CORRECTION_PATTERN),
        )


@dataclass(frozen=True)
class SqrVerdict:
    flag: EvaluationFlag
    rationale: str
    correction: DefectLabel | None = None

    def __post_init__(self):
        if self.correction is not None and self.flag is not EvaluationFlag.INCORRECT:
            raise ValueError("a correction is only allowed on an Incorrect verdict")
        if not self.rationale or not self.rationale.strip():
            raise ValueError("rationale must be non-empty")


@dataclass(frozen=True)
class RoutingDecision:
    folder: str
    final_label: DefectLabel
    suggested_label: DefectLabel | None = None
    reason: str = ""


def resolve_category(text: str, lexicons=None) -> DefectLabel | None:
    """Map a free-text category name or a lexicon synonym to a category."""
    key = re.sub(r"[\s\-]+", "_", text.strip().strip(".").lower())
    for label in CATEGORIES:
        if key == label.value:
            return label
    for lex in lexicons or default_lexicons():
        if key in {t.lower() for t in lex.terms}:
            return lex.category
    return None


def parse_verdict(response: str, rules: KeywordRules | None = None, lexicons=None) -> SqrVerdict:
    if not response or not response.strip():
        raise ValueError("response must be non-empty")
    rules = rules or KeywordRules()
    text = response.strip()
    has_correct = any(r.search(text) for r in rules._correct_re)
    has_incorrect = any(r.search(text) for r in rules._incorrect_re)
    if has_correct and has_incorrect:
        return SqrVerdict(EvaluationFlag.UNCERTAIN, text)
    if has_correct:
        return SqrVerdict(EvaluationFlag.CORRECT, text)
    if not has_incorrect:
        return SqrVerdict(EvaluationFlag.UNCERTAIN, text)

    match = rules._correction_re.search(text)
    if match is None:
        return SqrVerdict(EvaluationFlag.INCORRECT, text)
    raw = next((g for g in match.groups() if g), None)
    correction = resolve_category(raw, lexicons) if raw else None
    if correction is None:
        # a correction we cannot map is treated as ambiguous feedback
        return SqrVerdict(EvaluationFlag.UNCERTAIN, text)
    return SqrVerdict(EvaluationFlag.INCORRECT, text, correction)


def run_sqr(record, provider, rules: KeywordRules | None = None, *, payload, sample_id: str,
            path: str = "", round_index: int = 0, lexicons=None, templates=None) -> SqrVerdict:
    """Re-present (image, description, label) to ``provider`` and parse its verdict.

    ``record`` is anything with ``description`` and ``committed_label``
    (an AnnotationRecord or a PathPrediction). Provider failures yield an
    Uncertain verdict instead of raising.
    """
    label = record.committed_label
    if label is None or DefectLabel.parse(label) not in CATEGORIES:
        raise InvalidLabelForSqr(f"cannot self-question label {label}")
    prompt = build_sqr_prompt(payload, record.description, label, templates)
    req = GenerationRequest(
        payload=payload, prompt=prompt,
        request_id=f"{sample_id}#sqr-{path or 'main'}-{round_index}",
        task="sqr",
        context={"sample_id": sample_id, "path": path, "label": label, "round": round_index},
    )
    try:
        resp = provider.generate(req)
        verdict = parse_verdict(resp.text, rules, lexicons)
    except ProviderError as exc:
        logger.warning("SQR call failed for %s: %s", sample_id, exc)
        verdict = SqrVerdict(EvaluationFlag.UNCERTAIN, f"provider failure: {exc}")
    record.sqr_flag = verdict.flag
    record.sqr_rationale = verdict.rationale
    return verdict


def apply_verdict(record, verdict: SqrVerdict) -> RoutingDecision:
    """Correct keeps the label; a usable correction goes to review/; the rest to uncertain/."""
    label = DefectLabel.parse(record.committed_label)
    if verdict.flag is EvaluationFlag.CORRECT:
        decision = RoutingDecision(label.value, label, None, "self-check confirmed the label")
    elif verdict.flag is EvaluationFlag.INCORRECT and verdict.correction not in (None, label):
        decision = RoutingDecision("review", DefectLabel.UNCERTAIN, verdict.correction,
                                   f"self-check suggests {verdict.correction.value}")
    elif verdict.flag is EvaluationFlag.INCORRECT:
        decision = RoutingDecision("uncertain", DefectLabel.UNCERTAIN, None,
                                   "self-check flagged the label without a usable correction")
    else:
        decision = RoutingDecision("uncertain", DefectLabel.UNCERTAIN, None, "self-check was inconclusive")
    record.sqr_flag = verdict.flag
    record.sqr_rationale = verdict.rationale
    record.suggested_label = decision.suggested_label
    if hasattr(record, "final_label"):
        record.final_label = decision.final_label
        record.final_folder = decision.folder
        record.routing_reason = decision.reason
    return decision
