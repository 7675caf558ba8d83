"""Ground truth from filenames, accuracy and confusion matrices.

Filenames carry the true class as a one-character code after the last
underscore, e.g. ``bridge_007_A.jpg``. Nothing outside this module (and
the orchestrator that calls it) ever sees that code.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path, PurePath

import numpy as np

from .exceptions import (
    ConfigError,
    EmptyEvaluation,
    LengthMismatch,
    MissingCode,
    UnknownCode,
    UnknownLabel,
)
from .labels import DefectLabel

DEFAULT_CODE_MAPPING = {
    "A": DefectLabel.CRACK,
    "B": DefectLabel.EFFLORESCENCE,
    "C": DefectLabel.SCALING,
    "D": DefectLabel.CORROSION,
    "N": DefectLabel.NON_DEFECTIVE,
}

MULTICLASS_LABELS = (
    DefectLabel.CRACK.value,
    DefectLabel.EFFLORESCENCE.value,
    DefectLabel.SCALING.value,
    DefectLabel.CORROSION.value,
    DefectLabel.NON_DEFECTIVE.value,
    DefectLabel.UNCERTAIN.value,
)
BINARY_LABELS = ("defective", "non_defective")


def parse_mapping(raw: dict | None) -> dict[str, DefectLabel]:
    if raw is None:
        return dict(DEFAULT_CODE_MAPPING)
    mapping = {}
    for code, label in raw.items():
        if not isinstance(code, str) or len(code) != 1:
            raise ConfigError(f"code {code!r} must be a single character")
        mapping[code] = DefectLabel.parse(label)
    if len(set(mapping.values())) != len(mapping):
        raise ConfigError("code mapping must be injective")
    return mapping


def load_mapping(path) -> dict[str, DefectLabel]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if isinstance(data, dict) and "code_mapping" in data:
        data = data["code_mapping"]
    return parse_mapping(data)


def extract_code(filename: str) -> str:
    """The single character after the last underscore of the file stem."""
    if not filename:
        raise MissingCode("empty filename")
    stem = PurePath(filename).stem
    if "_" not in stem:
        raise MissingCode(f"{filename}: no '_<code>' suffix")
    token = stem.rsplit("_", 1)[1]
    if len(token) != 1:
        raise MissingCode(f"{filename}: suffix {token!r} is not a single character")
    return token


def extract_truth(filename: str, mapping: dict | None = None) -> DefectLabel:
    mapping = mapping if mapping is not None else DEFAULT_CODE_MAPPING
    code = extract_code(filename)
    try:
        return DefectLabel.parse(mapping[code])
    except KeyError:
        raise UnknownCode(f"{filename}: code {code!r} is not in the mapping") from None


def _key(label) -> str:
    return label.value if isinstance(label, DefectLabel) else str(label)


@dataclass
class AccuracyReport:
    overall: float
    per_class: dict
    n_total: int
    n_correct: int
    # share of samples kept out of uncertain/review, in percent
    coverage: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> AccuracyReport:
        return cls(**d)


def accuracy(preds, truths) -> AccuracyReport:
    preds = [_key(p) for p in preds]
    truths = [_key(t) for t in truths]
    if len(preds) != len(truths):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(truths)} truths")
    if not preds:
        raise EmptyEvaluation("nothing to evaluate")
    n_total = len(preds)
    n_correct = sum(p == t for p, t in zip(preds, truths))
    support = Counter(truths)
    hits = Counter(t for p, t in zip(preds, truths) if p == t)
    per_class = {label: 100.0 * hits[label] / support[label] for label in sorted(support)}
    retained = sum(p != DefectLabel.UNCERTAIN.value for p in preds)
    return AccuracyReport(
        overall=100.0 * n_correct / n_total,
        per_class=per_class,
        n_total=n_total,
        n_correct=n_correct,
        coverage=100.0 * retained / n_total,
    )


@dataclass
class ConfusionMatrix:
    labels: list
    counts: np.ndarray  # rows = truth, columns = prediction

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def trace(self) -> int:
        return int(np.trace(self.counts))

    @property
    def accuracy(self) -> float:
        return 100.0 * self.trace / self.total

    def to_rows(self) -> list[list[int]]:
        return self.counts.tolist()


def confusion(preds, truths, labels) -> ConfusionMatrix:
    labels = [_key(lab) for lab in labels]
    index = {lab: i for i, lab in enumerate(labels)}
    preds = [_key(p) for p in preds]
    truths = [_key(t) for t in truths]
    if len(preds) != len(truths):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(truths)} truths")
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for p, t in zip(preds, truths):
        if p not in index or t not in index:
            raise UnknownLabel(f"label {p if p not in index else t!r} is not in {labels}")
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(labels, counts)


def emit_report(report: AccuracyReport, matrix: ConfusionMatrix, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.json"
    metrics_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    csv_path = out / "confusion.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["truth\\pred", *matrix.labels])
        for label, row in zip(matrix.labels, matrix.to_rows()):
            writer.writerow([label, *row])
    return metrics_path, csv_path


def binary_of(label) -> str:
    key = _key(label)
    if key == DefectLabel.NON_DEFECTIVE.value:
        return "non_defective"
    if key == DefectLabel.UNCERTAIN.value:
        return "uncertain"
    return "defective"


@dataclass
class Evaluation:
    multiclass: AccuracyReport
    multiclass_matrix: ConfusionMatrix
    binary: AccuracyReport
    binary_matrix: ConfusionMatrix


def evaluate_records(records, mapping=None) -> Evaluation:
    """Score annotation records against the codes in their filenames."""
    mapping = mapping if mapping is not None else DEFAULT_CODE_MAPPING
    truths, missing = [], []
    for rec in records:
        try:
            truths.append(extract_truth(PurePath(rec.source_path).name, mapping))
        except (MissingCode, UnknownCode) as exc:
            missing.append(str(exc))
    if missing:
        err = MissingCode("files without a usable ground-truth code:\n  " + "\n  ".join(missing))
        err.files = missing
        raise err
    if not truths:
        raise EmptyEvaluation("the annotation log is empty")

    preds = [_key(rec.final_label or DefectLabel.UNCERTAIN) for rec in records]
    multi = accuracy(preds, truths)
    multi_matrix = confusion(preds, truths, MULTICLASS_LABELS)

    bin_truths = [binary_of(t) for t in truths]
    bin_preds = [rec.gate if rec.gate in BINARY_LABELS else "uncertain" for rec in records]
    bin_labels = list(BINARY_LABELS) + (["uncertain"] if "uncertain" in bin_preds else [])
    return Evaluation(multi, multi_matrix, accuracy(bin_preds, bin_truths),
                      confusion(bin_preds, bin_truths, bin_labels))
