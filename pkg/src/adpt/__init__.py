"""Agent-based batch annotation of structural defect images.

Raw images are encoded, described by a vision-language model, mapped to a
defect category, optionally self-checked by the same model, and filed
into a category-per-folder dataset with a JSONL audit log.
"""

from .classify import (
    HashedEmbedder,
    LexicalClassifier,
    PrototypeClassifier,
    PrototypeSet,
    classify_by_prototype,
    cosine,
    default_prototypes,
    embed,
    match_lexical,
)
from .config import RunConfig
from .ensemble import EnsembleConfig, PathResult, vote, vote_oracle_check
from .evaluation import accuracy, confusion, emit_report, extract_truth
from .imaging import ImagePayload, ImagePreprocessor, PreprocessConfig, RawImage, encode_payload, preprocess
from .labels import DefectLabel, EvaluationFlag, Strategy, VocabularyKind
from .pipeline import run_annotate, run_evaluate, run_simulate
from .prompting import build_category_prompt, build_sqr_prompt, default_lexicons
from .provider import HttpProvider, MockProvider, MockProviderConfig, ProviderConfig, mock_generate
from .sqr import KeywordRules, SqrVerdict, apply_verdict, parse_verdict, run_sqr

__version__ = "0.1.0"
