"""Audit-trail records written to ``annotations.jsonl``."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

from .exceptions import LogParseError
from .labels import DefectLabel, EvaluationFlag

FOLDERS = ("crack", "efflorescence", "scaling", "corrosion", "non_defective", "uncertain", "review")


def _label(v):
    return None if v is None else DefectLabel.parse(v)


def _flag(v):
    return None if v is None else EvaluationFlag(v)


@dataclass
class PathPrediction:
    """One inference route's output (zsr or fpb) for one image."""

    path_id: str
    description: str | None = None
    lexical_label: DefectLabel | None = None
    cosine_label: DefectLabel | None = None
    label: DefectLabel | None = None
    sqr_flag: EvaluationFlag | None = None
    sqr_rationale: str | None = None
    suggested_label: DefectLabel | None = None
    error: str | None = None

    @property
    def committed_label(self):
        return self.label

    def to_dict(self) -> dict:
        return {
            "path_id": self.path_id,
            "description": self.description,
            "lexical_label": _val(self.lexical_label),
            "cosine_label": _val(self.cosine_label),
            "label": _val(self.label),
            "sqr_flag": _val(self.sqr_flag),
            "sqr_rationale": self.sqr_rationale,
            "suggested_label": _val(self.suggested_label),
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> PathPrediction:
        return cls(
            path_id=d["path_id"],
            description=d.get("description"),
            lexical_label=_label(d.get("lexical_label")),
            cosine_label=_label(d.get("cosine_label")),
            label=_label(d.get("label")),
            sqr_flag=_flag(d.get("sqr_flag")),
            sqr_rationale=d.get("sqr_rationale"),
            suggested_label=_label(d.get("suggested_label")),
            error=d.get("error"),
        )


def _val(v):
    return None if v is None else v.value


@dataclass
class AnnotationRecord:
    sequence_id: int
    source_path: str
    strategy: str
    vocabulary: str
    true_code: str | None = None
    gate: str | None = None
    description: str | None = None
    lexical_label: DefectLabel | None = None
    cosine_label: DefectLabel | None = None
    # single path: lexical/cosine fusion; ensemble: the weighted vote
    fused_label: DefectLabel | None = None
    sqr_flag: EvaluationFlag | None = None
    sqr_rationale: str | None = None
    suggested_label: DefectLabel | None = None
    final_label: DefectLabel | None = None
    final_folder: str | None = None
    routing_reason: str | None = None
    error: str | None = None
    paths: list[PathPrediction] | None = None
    timestamps: dict = field(default_factory=lambda: {"start": None, "end": None, "stages": []})

    @property
    def committed_label(self):
        return self.fused_label

    def mark(self, stage: str, t) -> None:
        self.timestamps["stages"].append([stage, t])

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "paths":
                v = None if v is None else [p.to_dict() for p in v]
            elif isinstance(v, (DefectLabel, EvaluationFlag)):
                v = v.value
            out[f.name] = v
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=False)

    @classmethod
    def from_dict(cls, d: dict) -> AnnotationRecord:
        missing = [f.name for f in fields(cls) if f.name not in d]
        if missing:
            raise ValueError(f"missing fields {missing}")
        extra = set(d) - {f.name for f in fields(cls)}
        if extra:
            raise ValueError(f"unexpected fields {sorted(extra)}")
        if not isinstance(d["sequence_id"], int) or not isinstance(d["source_path"], str):
            raise ValueError("sequence_id must be int and source_path str")
        if d["final_folder"] is not None and d["final_folder"] not in FOLDERS:
            raise ValueError(f"unknown folder {d['final_folder']!r}")
        return cls(
            sequence_id=d["sequence_id"],
            source_path=d["source_path"],
            strategy=d["strategy"],
            vocabulary=d["vocabulary"],
            true_code=d["true_code"],
            gate=d["gate"],
            description=d["description"],
            lexical_label=_label(d["lexical_label"]),
            cosine_label=_label(d["cosine_label"]),
            fused_label=_label(d["fused_label"]),
            sqr_flag=_flag(d["sqr_flag"]),
            sqr_rationale=d["sqr_rationale"],
            suggested_label=_label(d["suggested_label"]),
            final_label=_label(d["final_label"]),
            final_folder=d["final_folder"],
            routing_reason=d["routing_reason"],
            error=d["error"],
            paths=None if d["paths"] is None else [PathPrediction.from_dict(p) for p in d["paths"]],
            timestamps=d["timestamps"],
        )


def folder_consistent(label: DefectLabel | None, folder: str | None) -> bool:
    if label is None or folder is None:
        return False
    if label is DefectLabel.UNCERTAIN:
        return folder in ("uncertain", "review")
    return folder == label.value


def read_log(path) -> list[AnnotationRecord]:
    """Parse a JSONL annotation log; malformed lines raise LogParseError."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(AnnotationRecord.from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise LogParseError(lineno, str(exc)) from exc
    return records
