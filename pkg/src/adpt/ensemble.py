"""Confidence-weighted voting over the zsr and fpb paths."""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

from .exceptions import ConfigError
from .labels import CATEGORIES, DefectLabel, EvaluationFlag

PATH_IDS = ("zsr", "fpb")
DEFAULT_WEIGHTS = {"zsr": 0.5, "fpb": 0.5}
WEIGHT_GRID = ((1.0, 1.0), (0.6, 0.4), (0.0, 1.0), (1.0, 0.0), (0.5, 0.5))


@dataclass(frozen=True)
class PathResult:
    path_id: str
    label: DefectLabel
    flag: EvaluationFlag
    weight: float

    def __post_init__(self):
        if not (self.weight >= 0.0) or self.weight == float("inf"):
            raise ConfigError(f"path weight must be finite and >= 0, got {self.weight}")


@dataclass(frozen=True)
class EnsembleConfig:
    weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    category_set: tuple[DefectLabel, ...] = CATEGORIES

    def __post_init__(self):
        unknown = set(self.weights) - set(PATH_IDS)
        if unknown:
            raise ConfigError(f"unknown path ids {sorted(unknown)}")
        if any(not (w >= 0.0) or w == float("inf") for w in self.weights.values()):
            raise ConfigError("weights must be finite and >= 0")
        if not any(w > 0 for w in self.weights.values()):
            raise ConfigError("at least one path weight must be positive")
        if DefectLabel.UNCERTAIN in self.category_set or DefectLabel.NON_DEFECTIVE in self.category_set:
            raise ConfigError("category_set holds defect categories only")

    @classmethod
    def from_pair(cls, alphas) -> EnsembleConfig:
        a1, a2 = alphas
        return cls(weights={"zsr": float(a1), "fpb": float(a2)})


def scores(paths, cfg: EnsembleConfig) -> dict[DefectLabel, float]:
    out = {c: 0.0 for c in cfg.category_set}
    for p in paths:
        if p.path_id not in cfg.weights:
            raise ConfigError(f"path {p.path_id!r} has no configured weight")
        if p.flag is EvaluationFlag.CORRECT and p.label in out:
            out[p.label] += cfg.weights[p.path_id]
    return out


def vote(paths, cfg: EnsembleConfig | None = None) -> DefectLabel:
    """Argmax of per-category weighted votes from self-confirmed paths.

    All-zero scores and ties between positive maxima both return
    ``uncertain``.
    """
    cfg = cfg or EnsembleConfig()
    paths = list(paths)
    got = sorted(p.path_id for p in paths)
    if got != sorted(cfg.weights):
        raise ConfigError(f"expected paths {sorted(cfg.weights)}, got {got}")
    s = scores(paths, cfg)
    best = max(s.values())
    if best <= 0.0:
        return DefectLabel.UNCERTAIN
    winners = [c for c, v in s.items() if v == best]
    return winners[0] if len(winners) == 1 else DefectLabel.UNCERTAIN


def _literal_vote(labels, flags, alphas, categories) -> DefectLabel:
    # the voting formula written out term by term, no shared code with vote()
    totals = []
    for c in categories:
        total = 0.0
        for k in range(2):
            indicator = 1 if (flags[k] == EvaluationFlag.CORRECT and labels[k] == c) else 0
            total = total + alphas[k] * indicator
        totals.append(total)
    top = max(totals)
    if top == 0:
        return DefectLabel.UNCERTAIN
    if totals.count(top) > 1:
        return DefectLabel.UNCERTAIN
    return categories[totals.index(top)]


@dataclass
class OracleReport:
    cases: int
    mismatches: list
    seconds: float

    @property
    def ok(self) -> bool:
        return not self.mismatches


def vote_oracle_check(cfg: EnsembleConfig | None = None, weight_grid=WEIGHT_GRID) -> OracleReport:
    """Compare vote() with the literal formula over every flag/label combination."""
    categories = list((cfg or EnsembleConfig()).category_set)
    flags = list(EvaluationFlag)
    start = time.perf_counter()
    mismatches = []
    cases = 0
    for alphas in weight_grid:
        vote_cfg = EnsembleConfig(weights={"zsr": alphas[0], "fpb": alphas[1]}, category_set=tuple(categories))
        for f1, f2 in itertools.product(flags, repeat=2):
            for l1, l2 in itertools.product(categories, repeat=2):
                cases += 1
                got = vote([PathResult("zsr", l1, f1, alphas[0]), PathResult("fpb", l2, f2, alphas[1])], vote_cfg)
                want = _literal_vote((l1, l2), (f1, f2), alphas, categories)
                if got != want:
                    mismatches.append((alphas, (l1, f1), (l2, f2), got, want))
    return OracleReport(cases, mismatches, time.perf_counter() - start)
