import json
import threading
from pathlib import Path

import pytest
from helpers import CODES, write_coded_images

from adpt.cli import main
from adpt.config import RunConfig
from adpt.evaluation import extract_truth
from adpt.exceptions import ConfigError, EmptyInput, LogParseError, MissingCode, ProviderTimeout
from adpt.imaging import PreprocessConfig
from adpt.labels import CATEGORIES, DefectLabel, EvaluationFlag, Strategy
from adpt.pipeline import (
    build_provider,
    parse_distribution,
    parse_gate,
    run_annotate,
    run_evaluate,
    run_simulate,
    stage_order_ok,
)
from adpt.provider import MockProviderConfig
from adpt.records import AnnotationRecord, folder_consistent, read_log

MIXED = ["crack", "efflorescence", "scaling", "corrosion", "non_defective"] * 2


class Recording:
    """Wraps a provider and keeps every request it sees."""

    def __init__(self, inner):
        self.inner = inner
        self.requests = []
        self._lock = threading.Lock()

    def generate(self, req):
        with self._lock:
            self.requests.append(req)
        return self.inner.generate(req)


def log_lines(out):
    return (Path(out) / "annotations.jsonl").read_text(encoding="utf-8").splitlines()


def test_noiseless_run_is_perfect(tmp_path, run_config):
    write_coded_images(tmp_path / "in", MIXED)
    summary = run_annotate(run_config(evaluation_enabled=True))
    assert summary.exit_code == 0 and summary.n_processed == 10
    for rec in read_log(tmp_path / "out" / "annotations.jsonl"):
        truth = extract_truth(Path(rec.source_path).name)
        assert rec.final_label is truth
        assert (tmp_path / "out" / truth.value / Path(rec.source_path).name).exists()
    assert summary.evaluation.multiclass.overall == 100.0
    assert summary.evaluation.binary.overall == 100.0
    assert (tmp_path / "out" / "eval" / "metrics.json").exists()


def test_non_defective_skips_category_stages(tmp_path, run_config):
    write_coded_images(tmp_path / "in", ["non_defective"])
    run_annotate(run_config())
    (rec,) = read_log(tmp_path / "out" / "annotations.jsonl")
    names = [s for s, _ in rec.timestamps["stages"]]
    assert names == ["encode", "binary_gate", "route"]
    assert rec.description is None and rec.final_folder == "non_defective"


def test_stage_order_in_every_record(tmp_path, run_config):
    write_coded_images(tmp_path / "in", MIXED)
    run_annotate(run_config(strategy=Strategy.ENSEMBLE, sqr_enabled=True))
    for rec in read_log(tmp_path / "out" / "annotations.jsonl"):
        assert stage_order_ok(rec.timestamps)
        assert folder_consistent(rec.final_label, rec.final_folder)


def test_ensemble_records_both_paths(tmp_path, run_config):
    write_coded_images(tmp_path / "in", ["crack", "scaling", "corrosion"])
    run_annotate(run_config(strategy=Strategy.ENSEMBLE))
    for line in log_lines(tmp_path / "out"):
        row = json.loads(line)
        assert [p["path_id"] for p in row["paths"]] == ["zsr", "fpb"]
        assert all(p["label"] and p["sqr_flag"] for p in row["paths"])
        assert row["fused_label"] == row["final_label"]


def test_ensemble_single_suggestion_goes_to_review(tmp_path, run_config):
    # every path perceives scaling; the self-check always objects and names crack
    mock = MockProviderConfig(confusion={"crack": {"scaling": 1.0}}, seed=1,
                              sqr_detect_prob=1.0, sqr_correct_suggestion_prob=1.0)
    write_coded_images(tmp_path / "in", ["crack"])
    run_annotate(run_config(strategy=Strategy.ENSEMBLE, provider=mock))
    (rec,) = read_log(tmp_path / "out" / "annotations.jsonl")
    assert rec.final_folder == "review" and rec.suggested_label is DefectLabel.CRACK
    assert {p.sqr_flag for p in rec.paths} == {EvaluationFlag.INCORRECT}


def test_sqr_incorrect_goes_to_review_with_audit(tmp_path, run_config):
    mock = MockProviderConfig(confusion={"corrosion": {"crack": 1.0}}, seed=1, sqr_detect_prob=1.0)
    write_coded_images(tmp_path / "in", ["corrosion"])
    run_annotate(run_config(sqr_enabled=True, provider=mock))
    (row,) = map(json.loads, log_lines(tmp_path / "out"))
    assert row["final_folder"] == "review"
    assert row["suggested_label"] == "corrosion"
    assert row["sqr_flag"] == "Incorrect" and row["sqr_rationale"]


def test_prompts_never_see_filenames(tmp_path, run_config):
    write_coded_images(tmp_path / "in", MIXED)
    cfg = run_config(strategy=Strategy.ENSEMBLE, sqr_enabled=True)
    provider = Recording(build_provider(cfg))
    run_annotate(cfg, provider=provider)
    assert provider.requests
    for req in provider.requests:
        assert "img_" not in req.prompt and ".png" not in req.prompt


class FlakyProvider:
    def __init__(self, inner, fail_on):
        self.inner, self.fail_on = inner, fail_on

    def generate(self, req):
        if req.task == self.fail_on and req.context["sample_id"].endswith("_C.png"):
            raise ProviderTimeout("no answer")
        return self.inner.generate(req)


@pytest.mark.parametrize("task, stage", [("binary", "binary_gate"), ("describe", "generate")])
def test_failed_sample_is_routed_uncertain(tmp_path, run_config, task, stage):
    write_coded_images(tmp_path / "in", ["crack", "scaling"])
    cfg = run_config()
    summary = run_annotate(cfg, provider=FlakyProvider(build_provider(cfg), task))
    assert summary.exit_code == 2 and summary.n_errors == 1
    recs = read_log(tmp_path / "out" / "annotations.jsonl")
    assert len(recs) == 2
    failed = next(r for r in recs if r.error)
    assert failed.final_folder == "uncertain"
    assert failed.error.startswith(stage)


def test_concurrency_cap_holds(tmp_path, run_config):
    write_coded_images(tmp_path / "in", MIXED * 3, size=8)
    cfg = run_config(concurrency=3, strategy=Strategy.ENSEMBLE, sqr_enabled=True)
    provider = build_provider(cfg)
    run_annotate(cfg, provider=provider)
    assert 1 <= provider.admission.peak_in_flight <= 3


def test_resume_skips_completed_samples(tmp_path, run_config):
    write_coded_images(tmp_path / "in", MIXED)
    cfg = run_config()
    run_annotate(cfg)
    full = log_lines(tmp_path / "out")

    # simulate a crash after four samples were routed
    out = tmp_path / "out"
    (out / "annotations.jsonl").write_text("\n".join(full[:4]) + "\n", encoding="utf-8")
    for row in map(json.loads, full[4:]):
        (out / row["final_folder"] / Path(row["source_path"]).name).unlink()

    provider = Recording(build_provider(cfg))
    summary = run_annotate(cfg, provider=provider)
    assert summary.n_resumed == 4 and summary.n_processed == 6
    done = {json.loads(x)["source_path"] for x in full[:4]}
    assert not any(r.context["sample_id"] in done for r in provider.requests)
    assert log_lines(out) == full
    assert sum(summary.folder_counts.values()) == 10


def test_empty_input(tmp_path, run_config):
    (tmp_path / "in").mkdir()
    with pytest.raises(EmptyInput):
        run_annotate(run_config())


def test_mock_needs_seed(tmp_path, run_config):
    write_coded_images(tmp_path / "in", ["crack"])
    with pytest.raises(ConfigError):
        run_annotate(run_config(seed=None))


def write_log(out, names_and_labels):
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, (name, label) in enumerate(names_and_labels):
        rec = AnnotationRecord(i, name, "fpb", "ET", gate="defective", final_label=DefectLabel(label),
                               final_folder="review" if label == "uncertain" else label)
        lines.append(rec.to_json())
    (out / "annotations.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")


def test_evaluate_hand_made_log(tmp_path):
    write_log(tmp_path, [
        ("a_A.png", "crack"), ("b_B.png", "efflorescence"), ("c_C.png", "scaling"),
        ("d_D.png", "corrosion"), ("e_A.png", "scaling"), ("f_D.png", "uncertain"),
    ])
    result = run_evaluate(RunConfig(output_dir=str(tmp_path)))
    assert result.multiclass.overall == pytest.approx(66.67, abs=0.01)
    assert result.multiclass.coverage == pytest.approx(500 / 6)


def test_evaluate_lists_file_without_code(tmp_path):
    write_log(tmp_path, [("a_A.png", "crack"), ("IMG0001.png", "crack")])
    with pytest.raises(MissingCode) as info:
        run_evaluate(RunConfig(output_dir=str(tmp_path)))
    assert "IMG0001.png" in str(info.value)


def test_evaluate_malformed_line(tmp_path):
    write_log(tmp_path, [("a_A.png", "crack")])
    with open(tmp_path / "annotations.jsonl", "a") as fh:
        fh.write('{"sequence_id": 1}\n')
    with pytest.raises(LogParseError) as info:
        run_evaluate(RunConfig(output_dir=str(tmp_path)))
    assert info.value.line_number == 2


def test_evaluate_recomputes_run_metrics(tmp_path, run_config):
    write_coded_images(tmp_path / "in", MIXED)
    summary = run_annotate(run_config(evaluation_enabled=True))
    again = run_evaluate(RunConfig(output_dir=str(tmp_path / "out")))
    assert again.multiclass == summary.evaluation.multiclass


def sim_config(tmp_path, name, **kw):
    mock = MockProviderConfig.from_rates({c: 0.9 for c in CODES}, seed=0)
    return RunConfig(output_dir=str(tmp_path / name), provider=mock, seed=kw.pop("seed", 5),
                     sqr_enabled=True, **kw)


def test_simulate_balanced_distribution(tmp_path):
    cfg = sim_config(tmp_path, "sim", preprocess=PreprocessConfig(16))
    summary = run_simulate(cfg, "crack=100,efflorescence=100,scaling=100,corrosion=100")
    assert summary.n_total == 400
    names = [p.name for p in (tmp_path / "sim" / ".simulate_inputs").iterdir()]
    codes = [n.rsplit("_", 1)[1][0] for n in names]
    assert {c: codes.count(c) for c in "ABCD"} == {"A": 100, "B": 100, "C": 100, "D": 100}
    assert sum(summary.folder_counts.values()) == 400


def test_simulate_is_byte_identical(tmp_path):
    dist = "crack=15,scaling=10,corrosion=5,efflorescence=5,non_defective=15"
    a = run_simulate(sim_config(tmp_path, "a", preprocess=PreprocessConfig(16), concurrency=8), dist)
    b = run_simulate(sim_config(tmp_path, "b", preprocess=PreprocessConfig(16), concurrency=2), dist)
    assert a.folder_counts == b.folder_counts
    assert (tmp_path / "a" / "annotations.jsonl").read_bytes() == (tmp_path / "b" / "annotations.jsonl").read_bytes()


def test_simulate_zero_distribution(tmp_path):
    with pytest.raises(ConfigError):
        run_simulate(sim_config(tmp_path, "z"), "crack=0,scaling=0")


def test_parse_distribution():
    assert parse_distribution("crack=3000, efflorescence=967") == {
        DefectLabel.CRACK: 3000, DefectLabel.EFFLORESCENCE: 967}
    with pytest.raises(ConfigError):
        parse_distribution("crack")


@pytest.mark.parametrize("text, gate", [
    ("defective\nSome damage.", "defective"),
    ("Non-defective. Surface is fine.", "non_defective"),
    ("I cannot tell.", "uncertain"),
])
def test_parse_gate(text, gate):
    assert parse_gate(text) == gate


# --- configuration and CLI ------------------------------------------------

def write_config(path, **extra):
    cfg = {"provider": {"kind": "mock", "confusion": {c: {c: 1.0} for c in CODES}, "sqr_false_flag_prob": 0.0},
           "seed": 3, "preprocess": {"target_size": 16}, **extra}
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"colour": "blue"})


def test_cli_overrides_config(tmp_path):
    cfg = RunConfig.load(write_config(tmp_path / "c.json", strategy="zsr")).with_overrides(
        strategy="ensemble", vocabulary="tj", sqr=True, seed=9)
    assert cfg.strategy is Strategy.ENSEMBLE and cfg.sqr_enabled
    assert cfg.vocabulary.value == "TJ" and cfg.provider.seed == 9


def test_cli_annotate_and_evaluate(tmp_path, capsys):
    write_coded_images(tmp_path / "in", MIXED)
    conf = write_config(tmp_path / "c.json")
    code = main(["annotate", "--input", str(tmp_path / "in"), "--output", str(tmp_path / "out"),
                 "--config", str(conf), "--strategy", "zsr", "--vocab", "gl", "--sqr"])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["n_processed"] == 10
    assert main(["evaluate", "--output", str(tmp_path / "out")]) == 0
    assert json.loads(capsys.readouterr().out)["multiclass"]["overall"] == 100.0


def test_cli_simulate(tmp_path, capsys):
    conf = write_config(tmp_path / "c.json")
    code = main(["simulate", "--config", str(conf), "--distribution", "crack=4,non_defective=4",
                 "--output", str(tmp_path / "sim")])
    assert code == 0
    assert json.loads(capsys.readouterr().out)["binary_accuracy"] == 100.0


def test_cli_bad_config_exits_1(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["annotate", "--input", str(tmp_path), "--output", str(tmp_path / "o"),
                 "--config", str(bad)]) == 1


def test_cli_partial_failure_exits_2(tmp_path):
    write_coded_images(tmp_path / "in", ["crack"])
    (tmp_path / "in" / "broken_A.png").write_bytes(b"not a png")
    conf = write_config(tmp_path / "c.json")
    assert main(["annotate", "--input", str(tmp_path / "in"), "--output", str(tmp_path / "out"),
                 "--config", str(conf)]) == 2
    rows = [json.loads(x) for x in log_lines(tmp_path / "out")]
    broken = next(r for r in rows if r["source_path"] == "broken_A.png")
    assert broken["final_folder"] == "uncertain" and broken["error"].startswith("encode")


def test_categories_constant():
    assert [c.value for c in CATEGORIES] == ["crack", "efflorescence", "scaling", "corrosion"]
