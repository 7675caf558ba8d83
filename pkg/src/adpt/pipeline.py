"""The annotation run: binary gate, category description, classification,
optional self-questioning, optional two-path vote, routing, evaluation.

Per-sample work runs on a thread pool; a single routing loop in the
calling thread writes folders and the log in ``sequence_id`` order, so the
log is identical across runs whatever order the workers finish in.
"""

from __future__ import annotations

import itertools
import logging
import re
import time
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field, replace
from pathlib import Path, PurePath

import numpy as np
from PIL import Image

from .classify import (
    classify_by_prototype,
    default_prototypes,
    embed,
    fuse_labels,
    make_embedder,
    match_lexical,
)
from .config import RunConfig
from .ensemble import EnsembleConfig, PathResult, vote
from .evaluation import Evaluation, emit_report, evaluate_records, extract_code, extract_truth
from .exceptions import (
    AdptError,
    ConfigError,
    EmptyInput,
    MissingCode,
    PlacementError,
    ProviderError,
    UnknownCode,
)
from .imaging import encode_payload, load_image, preprocess
from .labels import CATEGORIES, DefectLabel, EvaluationFlag, Strategy
from .prompting import TemplateSet, build_binary_prompt, build_category_prompt, default_lexicons
from .provider import GenerationRequest, HttpProvider, MockProvider, MockProviderConfig
from .records import AnnotationRecord, PathPrediction, read_log
from .router import DatasetLayout, Router
from .sqr import apply_verdict, run_sqr

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp"}

STAGES = ("start", "encode", "binary_gate", "generate", "classify", "sqr", "ensemble", "route", "end")

_NON_DEFECTIVE_RE = re.compile(r"\bnon[\s_-]?defective\b", re.IGNORECASE)
_DEFECTIVE_RE = re.compile(r"\bdefective\b", re.IGNORECASE)


def parse_gate(text: str) -> str:
    """'defective', 'non_defective' or 'uncertain' from a binary-gate reply."""
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    for chunk in ([lines[0]] if lines else []) + [text]:
        if _NON_DEFECTIVE_RE.search(chunk):
            return "non_defective"
        if _DEFECTIVE_RE.search(chunk):
            return "defective"
    return "uncertain"


def stage_order_ok(timestamps: dict) -> bool:
    """Stage names appear in pipeline order and their times never go backwards."""
    marks = timestamps.get("stages") or []
    names = [m[0].split(":")[0] for m in marks]
    idx = [STAGES.index(n) for n in names]
    times = [timestamps.get("start")] + [m[1] for m in marks] + [timestamps.get("end")]
    return idx == sorted(idx) and all(a <= b for a, b in zip(times, times[1:]))


class WallClock:
    def for_sample(self, sequence_id):
        return lambda: round(time.time(), 6)


class LogicalClock:
    """Per-sample step counter; keeps mock runs byte-reproducible."""

    def for_sample(self, sequence_id):
        counter = itertools.count()
        return lambda: next(counter)


@dataclass
class Sample:
    sequence_id: int
    path: Path
    rel: str


@dataclass
class RunSummary:
    n_total: int = 0
    n_processed: int = 0
    n_resumed: int = 0
    folder_counts: dict = field(default_factory=dict)
    n_errors: int = 0
    errors: list = field(default_factory=list)
    wall_time: float = 0.0
    evaluation: Evaluation | None = None
    evaluation_error: str | None = None

    @property
    def exit_code(self) -> int:
        return 2 if (self.n_errors or self.evaluation_error) else 0

    def to_dict(self) -> dict:
        out = {
            "n_total": self.n_total,
            "n_processed": self.n_processed,
            "n_resumed": self.n_resumed,
            "folder_counts": self.folder_counts,
            "n_errors": self.n_errors,
            "errors": self.errors,
            "wall_time": round(self.wall_time, 3),
        }
        if self.evaluation is not None:
            out["accuracy"] = self.evaluation.multiclass.overall
            out["binary_accuracy"] = self.evaluation.binary.overall
            out["coverage"] = self.evaluation.multiclass.coverage
        if self.evaluation_error:
            out["evaluation_error"] = self.evaluation_error
        return out


def list_images(input_dir: Path, exclude: Path | None = None) -> list[Path]:
    """Image files under ``input_dir``, skipping ``exclude`` when it is nested inside."""
    exclude = exclude.resolve() if exclude else None
    if exclude is not None and input_dir.resolve() not in exclude.parents:
        exclude = None
    found = []
    for p in sorted(input_dir.rglob("*")):
        if not p.is_file() or p.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        if exclude is not None and exclude in p.resolve().parents:
            continue
        found.append(p)
    return found


class Annotator:
    """Runs every stage for one sample. Shared read-only state only."""

    def __init__(self, cfg: RunConfig, provider, clock):
        self.cfg = cfg
        self.provider = provider
        self.clock = clock
        self.lexicons = default_lexicons()
        self.templates = TemplateSet.load(cfg.template_dir)
        self.embedder = make_embedder(cfg.embedder)
        self.prototypes = default_prototypes(self.embedder, self.lexicons) if self.embedder else None
        self.binary_prompt = build_binary_prompt(self.templates)
        self.category_prompts = {
            s: build_category_prompt(s, cfg.vocabulary, self.lexicons, self.templates)
            for s in (Strategy.ZSR, Strategy.FPB)
        }
        self.ensemble_cfg = (EnsembleConfig.from_pair(cfg.ensemble_weights)
                             if cfg.strategy is Strategy.ENSEMBLE else None)

    def _ask(self, payload, prompt, sample: Sample, task: str, path: str = ""):
        req = GenerationRequest(
            payload=payload, prompt=prompt,
            request_id=f"{sample.rel}#{task}{'-' + path if path else ''}",
            task=task, context={"sample_id": sample.rel, "path": path},
        )
        return self.provider.generate(req).text

    def _describe(self, payload, sample, path_id: str) -> PathPrediction:
        pp = PathPrediction(path_id)
        pp.description = self._ask(payload, self.category_prompts[Strategy(path_id)], sample, "describe", path_id)
        return pp

    def _classify(self, pp: PathPrediction) -> None:
        pp.lexical_label = match_lexical(pp.description, self.lexicons)
        if self.embedder is not None:
            try:
                pp.cosine_label = classify_by_prototype(embed(pp.description, self.embedder), self.prototypes)
            except AdptError as exc:
                pp.cosine_label = DefectLabel.UNCERTAIN
                pp.error = f"embedding failed: {exc}"
        pp.label = fuse_labels(pp.lexical_label, pp.cosine_label)

    def _self_question(self, pp, payload, sample, path: str):
        verdict = None
        for r in range(self.cfg.max_sqr_rounds):
            verdict = run_sqr(pp, self.provider, self.cfg.keyword_rules, payload=payload, sample_id=sample.rel,
                              path=path, round_index=r, lexicons=self.lexicons, templates=self.templates)
            if verdict.flag is not EvaluationFlag.UNCERTAIN:
                break
        return verdict

    @staticmethod
    def _unresolved_reason(pp: PathPrediction) -> str:
        if pp.lexical_label is DefectLabel.UNCERTAIN:
            return "no category term found in the description"
        return f"lexical ({pp.lexical_label.value}) and cosine ({pp.cosine_label.value}) labels disagree"

    def process(self, sample: Sample):
        """Run every stage for ``sample``; returns the record and its clock."""
        cfg = self.cfg
        tick = self.clock.for_sample(sample.sequence_id)
        rec = AnnotationRecord(sample.sequence_id, sample.rel, cfg.strategy.value, cfg.vocabulary.value)
        rec.timestamps["start"] = tick()
        if cfg.evaluation_enabled:
            try:
                rec.true_code = extract_code(PurePath(sample.rel).name)
            except MissingCode:
                rec.true_code = None
        try:
            img = preprocess(load_image(sample.path), cfg.preprocess)
            payload = encode_payload(img, cfg.media_type)
            rec.mark("encode", tick())
            rec.gate = parse_gate(self._ask(payload, self.binary_prompt, sample, "binary"))
            rec.mark("binary_gate", tick())
            if rec.gate == "non_defective":
                self._finish(rec, DefectLabel.NON_DEFECTIVE, "non_defective", "binary gate: no defect")
            elif rec.gate == "uncertain":
                self._finish(rec, DefectLabel.UNCERTAIN, "uncertain", "binary gate reply was not understood")
            elif cfg.strategy is Strategy.ENSEMBLE:
                self._run_ensemble(rec, payload, sample, tick)
            else:
                self._run_single(rec, payload, sample, tick)
        except (ProviderError, AdptError, OSError) as exc:
            stage = _failed_stage(rec, cfg)
            logger.warning("sample %s failed at %s: %s", sample.rel, stage, exc)
            rec.error = f"{stage}: {type(exc).__name__}: {exc}"
            self._finish(rec, DefectLabel.UNCERTAIN, "uncertain", f"failed at stage {stage}")
        return rec, tick

    def _run_single(self, rec, payload, sample, tick):
        path_id = self.cfg.strategy.value
        pp = self._describe(payload, sample, path_id)
        rec.description = pp.description
        rec.mark("generate", tick())
        self._classify(pp)
        rec.lexical_label, rec.cosine_label, rec.fused_label = pp.lexical_label, pp.cosine_label, pp.label
        if pp.error:
            rec.error = pp.error
        rec.mark("classify", tick())
        if rec.fused_label is DefectLabel.UNCERTAIN:
            self._finish(rec, DefectLabel.UNCERTAIN, "uncertain", self._unresolved_reason(pp))
            return
        if not self.cfg.sqr_enabled:
            self._finish(rec, rec.fused_label, rec.fused_label.value, "classified")
            return
        verdict = self._self_question(rec, payload, sample, path_id)
        apply_verdict(rec, verdict)
        rec.mark("sqr", tick())

    def _run_ensemble(self, rec, payload, sample, tick):
        # stage-major order so the per-sample timeline stays monotone
        paths = [self._describe(payload, sample, pid) for pid in ("zsr", "fpb")]
        rec.mark("generate", tick())
        for pp in paths:
            self._classify(pp)
        rec.mark("classify", tick())
        for pp in paths:
            if pp.label in CATEGORIES:
                apply_verdict(pp, self._self_question(pp, payload, sample, pp.path_id))
        rec.mark("sqr", tick())
        results = [
            PathResult(pp.path_id, pp.label, pp.sqr_flag or EvaluationFlag.UNCERTAIN,
                       self.ensemble_cfg.weights[pp.path_id])
            for pp in paths
        ]
        rec.paths = paths
        rec.fused_label = vote(results, self.ensemble_cfg)
        rec.mark("ensemble", tick())
        suggestions = {pp.suggested_label for pp in paths if pp.suggested_label is not None}
        if rec.fused_label is not DefectLabel.UNCERTAIN:
            self._finish(rec, rec.fused_label, rec.fused_label.value, "weighted vote of self-confirmed paths")
        elif len(suggestions) == 1:
            rec.suggested_label = suggestions.pop()
            self._finish(rec, DefectLabel.UNCERTAIN, "review",
                         f"no self-confirmed path; self-check suggests {rec.suggested_label.value}")
        else:
            confirmed = [pp for pp in paths if pp.sqr_flag is EvaluationFlag.CORRECT]
            reason = "confirmed paths tie" if len(confirmed) > 1 else "no self-confirmed path"
            self._finish(rec, DefectLabel.UNCERTAIN, "uncertain", reason)

    @staticmethod
    def _finish(rec, label, folder, reason):
        rec.final_label = label
        rec.final_folder = folder
        rec.routing_reason = reason


def build_provider(cfg: RunConfig, **http_kwargs):
    if isinstance(cfg.provider, MockProviderConfig):
        mapping = cfg.code_mapping
        mock_cfg = replace(cfg.provider, seed=cfg.seed, max_concurrent=max(cfg.concurrency, 1))

        def truth_of(sample_id: str) -> DefectLabel:
            try:
                return extract_truth(PurePath(sample_id).name, mapping)
            except (MissingCode, UnknownCode) as exc:
                raise ConfigError(f"the mock provider needs a ground-truth code: {exc}") from exc

        return MockProvider(mock_cfg, truth_of)
    return HttpProvider(cfg.provider, **http_kwargs)


def run_annotate(cfg: RunConfig, provider=None, clock=None) -> RunSummary:
    """Annotate every image under ``cfg.input_dir`` into ``cfg.output_dir``."""
    started = time.monotonic()
    cfg.validate()
    if not cfg.input_dir or not cfg.output_dir:
        raise ConfigError("input_dir and output_dir are required")
    input_dir, output_dir = Path(cfg.input_dir), Path(cfg.output_dir)
    if not input_dir.is_dir():
        raise EmptyInput(f"input directory {input_dir} does not exist")
    images = list_images(input_dir, exclude=output_dir)
    if not images:
        raise EmptyInput(f"no images under {input_dir}")

    provider = provider or build_provider(cfg)
    clock = clock or (LogicalClock() if cfg.is_mock else WallClock())
    layout = DatasetLayout(output_dir)
    router = Router(layout, cfg.mode)
    annotator = Annotator(cfg, provider, clock)

    rels = [p.relative_to(input_dir).as_posix() for p in images]
    pending = [(p, r) for p, r in zip(images, rels) if not router.is_done(r)]
    summary = RunSummary(n_total=len(images), n_resumed=len(images) - len(pending))
    if summary.n_resumed:
        logger.info("resuming: %d of %d samples already annotated", summary.n_resumed, len(images))
        first_id = max(r.sequence_id for r in read_log(layout.log_path)) + 1
    else:
        first_id = 0
    samples = [Sample(first_id + i, p, r) for i, (p, r) in enumerate(pending)]

    with ThreadPoolExecutor(max_workers=cfg.concurrency) as pool:
        futures = [pool.submit(annotator.process, s) for s in samples]
        done: dict[int, tuple] = {}
        next_id = first_id
        by_id = {s.sequence_id: s for s in samples}
        remaining = set(futures)
        while remaining:
            finished, remaining = wait(remaining, return_when=FIRST_COMPLETED)
            for fut in finished:
                rec, tick = fut.result()
                done[rec.sequence_id] = (rec, tick)
            while next_id in done:
                rec, tick = done.pop(next_id)
                _route_one(router, rec, tick, by_id[next_id].path, summary)
                next_id += 1

    summary.folder_counts = layout.counts()
    if cfg.evaluation_enabled:
        try:
            summary.evaluation = evaluate_output(output_dir, cfg.code_mapping)
        except AdptError as exc:
            summary.evaluation_error = str(exc)
            logger.error("evaluation failed: %s", exc)
    summary.wall_time = time.monotonic() - started
    return summary


def _failed_stage(rec: AnnotationRecord, cfg: RunConfig) -> str:
    marks = rec.timestamps["stages"]
    if not marks:
        return "encode"
    last = marks[-1][0]
    return {"encode": "binary_gate", "binary_gate": "generate", "generate": "classify",
            "classify": "sqr", "sqr": "ensemble"}.get(last, last)


def _route_one(router, rec, tick, src, summary):
    rec.mark("route", tick())
    rec.timestamps["end"] = tick()
    if rec.error:
        summary.n_errors += 1
        summary.errors.append(f"{rec.source_path}: {rec.error}")
    try:
        router.route(rec, src)
        summary.n_processed += 1
    except PlacementError as exc:
        summary.n_errors += 1
        summary.errors.append(f"{rec.source_path}: {exc}")


def evaluate_output(output_dir, mapping=None) -> Evaluation:
    """Score ``<output>/annotations.jsonl`` and write reports under ``<output>/eval/``."""
    output_dir = Path(output_dir)
    records = read_log(output_dir / "annotations.jsonl")
    result = evaluate_records(records, mapping)
    emit_report(result.multiclass, result.multiclass_matrix, output_dir / "eval")
    emit_report(result.binary, result.binary_matrix, output_dir / "eval" / "binary")
    return result


def run_evaluate(cfg: RunConfig) -> Evaluation:
    """Recompute metrics from the log and filenames only; no provider calls."""
    if not cfg.output_dir:
        raise ConfigError("output_dir is required")
    log = Path(cfg.output_dir) / "annotations.jsonl"
    if not log.exists():
        raise ConfigError(f"no annotation log at {log}")
    return evaluate_output(cfg.output_dir, cfg.code_mapping)


def parse_distribution(text: str) -> dict[DefectLabel, int]:
    """'crack=3000,efflorescence=967' -> {crack: 3000, efflorescence: 967}."""
    out: dict[DefectLabel, int] = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        name, sep, count = part.partition("=")
        if not sep:
            raise ConfigError(f"bad distribution entry {part!r}; expected label=count")
        try:
            n = int(count)
        except ValueError:
            raise ConfigError(f"bad count in {part!r}") from None
        if n < 0:
            raise ConfigError(f"negative count in {part!r}")
        label = DefectLabel.parse(name)
        out[label] = out.get(label, 0) + n
    return out


def synthetic_image(rng: np.random.Generator, label: DefectLabel, size: int = 32) -> np.ndarray:
    """Textured grey square with a class-dependent tint; content only needs to be valid."""
    tint = {
        DefectLabel.CRACK: (0, 0, 0),
        DefectLabel.EFFLORESCENCE: (60, 60, 60),
        DefectLabel.SCALING: (20, 10, 0),
        DefectLabel.CORROSION: (70, 25, -20),
        DefectLabel.NON_DEFECTIVE: (10, 10, 10),
    }.get(label, (0, 0, 0))
    base = rng.integers(90, 160, size=(size, size, 1))
    noise = rng.integers(-12, 13, size=(size, size, 3))
    return np.clip(base + noise + np.array(tint), 0, 255).astype(np.uint8)


def write_synthetic_inputs(directory: Path, distribution: dict, mapping: dict, seed: int) -> list[Path]:
    codes = {label: code for code, label in mapping.items()}
    labels = []
    for label, n in distribution.items():
        if label not in codes:
            raise ConfigError(f"no ground-truth code for {label.value} in the code mapping")
        labels.extend([label] * n)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(labels))
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    width = max(5, len(str(len(labels))))
    for i, j in enumerate(order):
        label = labels[int(j)]
        path = directory / f"sim_{i:0{width}d}_{codes[label]}.png"
        if not path.exists():
            Image.fromarray(synthetic_image(np.random.default_rng([seed, i]), label)).save(path)
        paths.append(path)
    return paths


def run_simulate(cfg: RunConfig, distribution, provider=None) -> RunSummary:
    """Generate coded synthetic images, annotate them with the mock, evaluate."""
    if not cfg.is_mock:
        raise ConfigError("simulate needs the mock provider")
    if cfg.seed is None:
        raise ConfigError("simulate needs a seed")
    if isinstance(distribution, str):
        distribution = parse_distribution(distribution)
    distribution = {DefectLabel.parse(k): int(v) for k, v in distribution.items()}
    if sum(distribution.values()) <= 0:
        raise ConfigError("the class distribution sums to zero")
    if not cfg.output_dir:
        raise ConfigError("output_dir is required")
    input_dir = Path(cfg.input_dir) if cfg.input_dir else Path(cfg.output_dir) / ".simulate_inputs"
    write_synthetic_inputs(input_dir, distribution, cfg.code_mapping, cfg.seed)
    sim_cfg = replace(cfg, input_dir=str(input_dir), evaluation_enabled=True)
    return run_annotate(sim_cfg, provider=provider)
