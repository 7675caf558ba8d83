from __future__ import annotations

from enum import Enum

from .exceptions import UnknownLabel


class DefectLabel(str, Enum):
    CRACK = "crack"
    EFFLORESCENCE = "efflorescence"
    SCALING = "scaling"
    CORROSION = "corrosion"
    UNCERTAIN = "uncertain"
    NON_DEFECTIVE = "non_defective"

    @classmethod
    def parse(cls, value: str | DefectLabel) -> DefectLabel:
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_").replace(" ", "_")
        try:
            return cls(key)
        except ValueError:
            raise UnknownLabel(f"unknown defect label: {value!r}") from None

    def __str__(self) -> str:
        return self.value


# declaration order matters: it is the tie-breaking order everywhere
CATEGORIES: tuple[DefectLabel, ...] = (
    DefectLabel.CRACK,
    DefectLabel.EFFLORESCENCE,
    DefectLabel.SCALING,
    DefectLabel.CORROSION,
)

PROTOTYPE_LABELS: tuple[DefectLabel, ...] = CATEGORIES + (DefectLabel.UNCERTAIN,)


class VocabularyKind(str, Enum):
    GL = "GL"
    ET = "ET"
    TJ = "TJ"

    @classmethod
    def parse(cls, value: str | VocabularyKind) -> VocabularyKind:
        if isinstance(value, cls):
            return value
        return cls(str(value).strip().upper())


class Strategy(str, Enum):
    ZSR = "zsr"
    FPB = "fpb"
    ENSEMBLE = "ensemble"


class EvaluationFlag(str, Enum):
    CORRECT = "Correct"
    INCORRECT = "Incorrect"
    UNCERTAIN = "Uncertain"
