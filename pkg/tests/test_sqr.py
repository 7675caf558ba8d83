import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adpt.exceptions import ConfigError, InvalidLabelForSqr, ProviderTimeout
from adpt.imaging import RawImage, encode_payload
from adpt.labels import CATEGORIES, DefectLabel, EvaluationFlag
from adpt.provider import MockProvider, MockProviderConfig, mock_perceived
from adpt.records import AnnotationRecord
from adpt.sqr import KeywordRules, SqrVerdict, apply_verdict, parse_verdict, run_sqr

PAYLOAD = encode_payload(RawImage(np.zeros((2, 2, 3), dtype=np.uint8), "p.png"))
C, I, U = EvaluationFlag.CORRECT, EvaluationFlag.INCORRECT, EvaluationFlag.UNCERTAIN


def record(label, description="a surface"):
    return AnnotationRecord(0, "x.png", "fpb", "ET", description=description, fused_label=label)


@pytest.mark.parametrize("text, flag, correction", [
    ("The classification is reasonable.", C, None),
    ("Incorrect \u2014 suggested change to 'crack'.", I, DefectLabel.CRACK),
    ("Hard to tell from this angle.", U, None),
    ("That is wrong; I suggest changing it to \"rust\".", I, DefectLabel.CORROSION),
    ("Inconsistent. Suggested change to: Scaling", I, DefectLabel.SCALING),
    ("The label is incorrect.", I, None),
    ("Reasonable at first glance, but wrong.", U, None),
    ("Incorrect, suggested change to 'mould'.", U, None),
    ("Incorrectly lit photo", U, None),
])
def test_parse_verdict(text, flag, correction):
    v = parse_verdict(text)
    assert (v.flag, v.correction) == (flag, correction)
    assert v.rationale


def test_parse_rejects_empty():
    with pytest.raises(ValueError):
        parse_verdict("  ")


def test_rules_must_be_disjoint():
    with pytest.raises(ConfigError):
        KeywordRules(correct_markers=("ok",), incorrect_markers=("ok", "bad"))
    with pytest.raises(ConfigError):
        KeywordRules(correct_markers=())


def test_custom_markers():
    rules = KeywordRules.from_dict({"correct_markers": ["agreed"], "incorrect_markers": ["nope"]})
    assert parse_verdict("Agreed.", rules).flag is C
    assert parse_verdict("The classification is reasonable.", rules).flag is U


def test_verdict_correction_only_when_incorrect():
    with pytest.raises(ValueError):
        SqrVerdict(C, "fine", DefectLabel.CRACK)


@given(st.text(min_size=1).filter(str.strip))
def test_parse_is_deterministic(text):
    assert parse_verdict(text) == parse_verdict(text)


def mock(row, **kw):
    return MockProvider(MockProviderConfig(confusion={"crack": row}, seed=9, **kw),
                        truth_of=lambda sid: DefectLabel.CRACK)


def test_run_sqr_detects_mislabel():
    rec = record(DefectLabel.SCALING)
    v = run_sqr(rec, mock({"crack": 1.0}, sqr_detect_prob=1.0), payload=PAYLOAD, sample_id="s")
    assert v.flag is I and v.correction is DefectLabel.CRACK
    assert rec.sqr_flag is I


def test_run_sqr_confirms_correct_label():
    v = run_sqr(record(DefectLabel.CRACK), mock({"crack": 1.0}, sqr_false_flag_prob=0.0),
                payload=PAYLOAD, sample_id="s")
    assert v.flag is C


class TimeoutProvider:
    def generate(self, req):
        raise ProviderTimeout("timed out")


def test_run_sqr_timeout_is_failsafe():
    rec = record(DefectLabel.CORROSION)
    v = run_sqr(rec, TimeoutProvider(), payload=PAYLOAD, sample_id="s")
    assert v.flag is U and v.rationale.startswith("provider failure")
    assert apply_verdict(rec, v).folder == "uncertain"


def test_run_sqr_rejects_uncertain():
    with pytest.raises(InvalidLabelForSqr):
        run_sqr(record(DefectLabel.UNCERTAIN), TimeoutProvider(), payload=PAYLOAD, sample_id="s")


def test_apply_verdict_examples():
    d = apply_verdict(record(DefectLabel.CRACK), SqrVerdict(C, "reasonable"))
    assert (d.folder, d.final_label) == ("crack", DefectLabel.CRACK)

    rec = record(DefectLabel.SCALING)
    d = apply_verdict(rec, SqrVerdict(I, "suggested change to 'crack'", DefectLabel.CRACK))
    assert d.folder == "review" and d.suggested_label is DefectLabel.CRACK
    assert rec.final_label is DefectLabel.UNCERTAIN  # never relabelled silently

    d = apply_verdict(record(DefectLabel.CORROSION), SqrVerdict(U, "unsure"))
    assert d.folder == "uncertain"

    d = apply_verdict(record(DefectLabel.CRACK), SqrVerdict(I, "wrong"))
    assert d.folder == "uncertain"


@given(st.sampled_from(CATEGORIES), st.sampled_from(list(EvaluationFlag)),
       st.one_of(st.none(), st.sampled_from(CATEGORIES)))
def test_sqr_never_adds_to_another_category(label, flag, correction):
    if flag is not I:
        correction = None
    d = apply_verdict(record(label), SqrVerdict(flag, "r", correction))
    assert d.folder in (label.value, "review", "uncertain")


def test_precision_does_not_drop_on_seeded_run():
    # 400 samples, 70 % self-consistent perception
    rows = {c: {c: 0.7, **{o: 0.1 for o in CATEGORIES if o is not c}} for c in CATEGORIES}
    cfg = MockProviderConfig(confusion=rows, seed=4, sqr_detect_prob=0.8, sqr_false_flag_prob=0.05)
    truths = {f"s{i}": CATEGORIES[i % 4] for i in range(400)}
    provider = MockProvider(cfg, truth_of=truths.__getitem__)

    pre, post = [], []
    for sid, truth in truths.items():
        label, _ = mock_perceived(truth, cfg, sid, "")
        rec = record(label)
        pre.append(label == truth)
        d = apply_verdict(rec, run_sqr(rec, provider, payload=PAYLOAD, sample_id=sid))
        if d.folder == label.value:
            post.append(label == truth)
    assert len(post) < len(pre)
    assert sum(post) / len(post) >= sum(pre) / len(pre)
