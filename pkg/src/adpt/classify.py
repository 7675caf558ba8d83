"""Description -> DefectLabel.

Two independent routes:

* ``match_lexical`` counts vocabulary-term hits in the description.
* ``classify_by_prototype`` embeds the description and takes the
  prototype with the largest cosine similarity.

``LexicalClassifier`` and ``PrototypeClassifier`` wrap the two routes as
scikit-learn classifiers over raw description strings.
"""

from __future__ import annotations

import hashlib
import math
import os
import re
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_pair, check_texts, check_vector
from .exceptions import ConfigError, DimMismatch, EmptyText
from .labels import PROTOTYPE_LABELS, DefectLabel
from .prompting import CategoryLexicon, default_lexicons

UNCERTAIN_PROTOTYPE_TEXT = "ambiguous or unclear surface condition"

_PUNCT = re.compile(r"[^\w\s]")


def cosine(a, b) -> float:
    a, b = check_pair(a, b)
    value = float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
    return min(1.0, max(-1.0, value))


@dataclass(frozen=True)
class PrototypeSet:
    labels: tuple[DefectLabel, ...]
    vectors: np.ndarray  # one row per label, in declaration order

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(self.labels):
            raise ConfigError("need exactly one prototype row per label")
        if vectors.shape[1] < 2:
            raise ConfigError("prototype dimensionality must be >= 2")
        if len(set(self.labels)) != len(self.labels):
            raise ConfigError("duplicate prototype label")
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)

    @property
    def dimensionality(self) -> int:
        return int(self.vectors.shape[1])

    def entries(self):
        return list(zip(self.labels, self.vectors))


def prototype_scores(s, protos: PrototypeSet) -> np.ndarray:
    return np.array([cosine(s, v) for v in protos.vectors])


def classify_by_prototype(s, protos: PrototypeSet) -> DefectLabel:
    s = check_vector(s, name="s")
    if s.shape[0] != protos.dimensionality:
        raise DimMismatch(f"vector has d={s.shape[0]}, prototypes have d={protos.dimensionality}")
    scores = prototype_scores(s, protos)
    # np.argmax returns the first maximum, i.e. declaration order breaks ties
    return protos.labels[int(np.argmax(scores))]


def tokenize(text: str) -> list[str]:
    return _PUNCT.sub("", text.lower()).split()


class HashedEmbedder:
    """Bag of words hashed into ``dim`` buckets, L2-normalised. Deterministic."""

    kind = "hashed_bag_of_words"

    def __init__(self, dim: int = 256):
        if dim < 2:
            raise ConfigError("embedding dimensionality must be >= 2")
        self.dim = dim

    def bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "big") % self.dim

    def embed(self, text: str) -> np.ndarray:
        tokens = tokenize(text)
        if not tokens:
            raise EmptyText("text has no tokens after normalisation")
        vec = np.zeros(self.dim, dtype=np.float64)
        for tok in tokens:
            vec[self.bucket(tok)] += 1.0
        return vec / np.linalg.norm(vec)

    def __repr__(self):
        return f"HashedEmbedder(dim={self.dim})"


class RemoteEmbedder:
    """OpenAI-compatible ``/embeddings`` endpoint."""

    kind = "remote_embedding_api"

    def __init__(self, endpoint: str, model_id: str, api_key_env: str, *, timeout: float = 30.0,
                 max_retries: int = 3, transport=None, sleep=None):
        from .provider import HttpCaller

        self.endpoint = endpoint.rstrip("/")
        self.model_id = model_id
        self.api_key_env = api_key_env
        self._caller = HttpCaller(timeout=timeout, max_retries=max_retries, transport=transport, sleep=sleep)
        self.dim = None

    def embed(self, text: str) -> np.ndarray:
        from .exceptions import AuthMissing, MalformedResponse

        if not tokenize(text):
            raise EmptyText("text has no tokens after normalisation")
        key = os.environ.get(self.api_key_env)
        if not key:
            raise AuthMissing(f"environment variable {self.api_key_env} is not set")
        body, _ = self._caller.post_json(
            f"{self.endpoint}/embeddings",
            {"model": self.model_id, "input": text},
            {"Authorization": f"Bearer {key}"},
        )
        try:
            vec = np.asarray(body["data"][0]["embedding"], dtype=np.float64)
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise MalformedResponse(f"unexpected embeddings response: {exc}") from exc
        if vec.ndim != 1 or vec.shape[0] < 2:
            raise MalformedResponse("embedding must be a vector of length >= 2")
        self.dim = vec.shape[0]
        return vec


def embed(text: str, e) -> np.ndarray:
    if not text or not text.strip():
        raise EmptyText("text is empty")
    return e.embed(text)


def make_embedder(spec: dict | None):
    """Build an embedder from its config dict, or return None."""
    if not spec:
        return None
    kind = spec.get("kind", "hashed")
    if kind in ("hashed", "hashed_bag_of_words"):
        return HashedEmbedder(int(spec.get("dim", 256)))
    if kind in ("remote", "remote_embedding_api"):
        try:
            return RemoteEmbedder(spec["endpoint"], spec["model_id"], spec["api_key_env"],
                                  timeout=float(spec.get("timeout", 30.0)),
                                  max_retries=int(spec.get("max_retries", 3)))
        except KeyError as exc:
            raise ConfigError(f"remote embedder needs {exc.args[0]!r}") from None
    raise ConfigError(f"unknown embedder kind {kind!r}")


def prototype_text(lex: CategoryLexicon) -> str:
    return " ".join((lex.feature_description,) + lex.terms)


def default_prototypes(e, lexicons=None) -> PrototypeSet:
    lexicons = list(lexicons or default_lexicons())
    by_label = {lex.category: lex for lex in lexicons}
    rows = []
    for label in PROTOTYPE_LABELS:
        if label is DefectLabel.UNCERTAIN:
            rows.append(embed(UNCERTAIN_PROTOTYPE_TEXT, e))
        elif label in by_label:
            rows.append(embed(prototype_text(by_label[label]), e))
        else:
            raise ConfigError(f"no lexicon for {label}")
    return PrototypeSet(PROTOTYPE_LABELS, np.vstack(rows))


def _term_hits(text_lower: str, term: str) -> tuple[int, int]:
    positions = [m.start() for m in re.finditer(re.escape(term.lower()), text_lower)]
    return len(positions), (positions[0] if positions else math.inf)


def lexical_scores(text: str, lexicons) -> list[tuple[DefectLabel, int, float]]:
    """(category, hit count, first hit position) per lexicon, in declaration order."""
    lowered = text.lower()
    out = []
    for lex in lexicons:
        count, first = 0, math.inf
        for term in lex.terms:
            n, pos = _term_hits(lowered, term)
            count += n
            first = min(first, pos)
        out.append((lex.category, count, first))
    return out


def match_lexical(text: str, lexicons=None) -> DefectLabel:
    """Most-mentioned category; ties go to the earliest mention, then lexicon order."""
    if not text or not text.strip():
        raise EmptyText("text is empty")
    scores = lexical_scores(text, list(lexicons or default_lexicons()))
    ranked = [(-count, first, i, label) for i, (label, count, first) in enumerate(scores) if count > 0]
    if not ranked:
        return DefectLabel.UNCERTAIN
    return min(ranked)[3]


def fuse_labels(lexical: DefectLabel, cosine_label: DefectLabel | None) -> DefectLabel:
    """Lexical label wins; a disagreeing cosine label demotes it to uncertain."""
    if cosine_label is None or cosine_label == lexical:
        return lexical
    return DefectLabel.UNCERTAIN


class LexicalClassifier(ClassifierMixin, BaseEstimator):
    """Vocabulary-hit classifier over description strings. ``fit`` is a no-op."""

    def __init__(self, lexicons=None):
        self.lexicons = lexicons

    def fit(self, X=None, y=None):
        self.lexicons_ = list(self.lexicons or default_lexicons())
        self.classes_ = np.array([label.value for label in PROTOTYPE_LABELS])
        return self

    def predict(self, X):
        check_is_fitted(self, "lexicons_")
        return np.array([match_lexical(t, self.lexicons_).value for t in check_texts(X)])


class PrototypeClassifier(ClassifierMixin, BaseEstimator):
    """Nearest-prototype (max cosine) classifier over description strings.

    Without training data the prototypes are built from the category
    lexicons. Given labelled descriptions, each class prototype is the mean
    embedding of its examples; classes absent from ``y`` keep the lexicon
    prototype.
    """

    def __init__(self, embedder=None, dim=256, lexicons=None):
        self.embedder = embedder
        self.dim = dim
        self.lexicons = lexicons

    def _embedder(self):
        return self.embedder if self.embedder is not None else HashedEmbedder(self.dim)

    def fit(self, X=None, y=None):
        e = self._embedder()
        protos = default_prototypes(e, self.lexicons)
        if X is not None:
            texts = check_texts(X)
            if y is None or len(y) != len(texts):
                raise ValueError("y must be given with one label per text")
            labels = [DefectLabel.parse(v) for v in y]
            rows = protos.vectors.copy()
            for i, label in enumerate(protos.labels):
                members = [embed(t, e) for t, lab in zip(texts, labels) if lab == label]
                if members:
                    rows[i] = np.mean(members, axis=0)
            protos = PrototypeSet(protos.labels, rows)
        self.embedder_ = e
        self.prototypes_ = protos
        self.classes_ = np.array([label.value for label in protos.labels])
        return self

    def transform(self, X):
        check_is_fitted(self, "prototypes_")
        return np.vstack([embed(t, self.embedder_) for t in check_texts(X)])

    def decision_function(self, X):
        """Cosine similarity to each prototype, columns ordered as ``classes_``."""
        return np.vstack([prototype_scores(v, self.prototypes_) for v in self.transform(X)])

    def predict(self, X):
        return np.array([classify_by_prototype(v, self.prototypes_).value for v in self.transform(X)])
