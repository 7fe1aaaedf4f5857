import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridward.detector import (
    DetectionResult,
    DetectorBundle,
    DetectorError,
    HashedFeaturizer,
    ModelParseError,
    NGramDb,
    OneClassLinearModel,
    calibrate,
    classify,
    evaluate_metrics,
    featurize,
    fnv1a64,
    objective,
    ocsvm_score,
    parse_model,
    render_model,
    stide_score,
    subgradient,
    train_bundle,
    train_ocsvm,
    train_stide,
)
from gridward.sim import generate_trace
from gridward.trace import SYSCALL_ID

from conftest import make_trace
from gen import gradient_fd_error, random_stide_trace

S = SYSCALL_ID


def naive_mismatch(train, test, n):
    """Nested loops: every test window scanned against every training window."""
    seen = []
    for tr in train:
        names = [e.name for e in tr.events]
        for i in range(len(names) - n + 1):
            seen.append(names[i:i + n])
    names = [e.name for e in test.events]
    total = len(names) - n + 1
    misses = 0
    for i in range(total):
        w = names[i:i + n]
        if not any(w == s for s in seen):
            misses += 1
    return misses / total


# -- stide --------------------------------------------------------------------

def test_train_stide_example():
    db = train_stide([make_trace(["open", "read", "write", "close"])], 2)
    assert db.grams == {(S["open"], S["read"]), (S["read"], S["write"]), (S["write"], S["close"])}
    assert db.trained_on == 3


def test_duplicate_traces_double_count():
    tr = make_trace(["open", "read", "write", "close"])
    a, b = train_stide([tr], 3), train_stide([tr, tr], 3)
    assert a.grams == b.grams and b.trained_on == 2 * a.trained_on


def test_too_short_to_train():
    with pytest.raises(DetectorError):
        train_stide([make_trace(["open", "read"]), make_trace(["read"])], 3)


def test_stide_example():
    db = train_stide([make_trace(["open", "read", "write", "close"])], 2)
    res = stide_score(db, make_trace(["open", "read", "close", "write"]))
    assert res.mismatch_rate == pytest.approx(2 / 3, abs=0)
    assert res.lfc_score == pytest.approx(2 / 3)
    assert sorted(res.evidence) == sorted([(S["read"], S["close"]), (S["close"], S["write"])])


def test_self_score_and_total_novelty(normal_traces):
    db = train_stide(normal_traces, 5)
    res = stide_score(db, normal_traces[0])
    assert res.mismatch_rate == 0 and res.lfc_score == 0 and res.evidence == []
    novel = make_trace(["ptrace", "mount", "unshare", "ptrace", "mount", "unshare", "ptrace"])
    assert stide_score(db, novel).mismatch_rate == 1.0


def test_short_scoring_trace_errors():
    db = train_stide([make_trace(["open", "read", "write", "close"])], 3)
    with pytest.raises(DetectorError):
        stide_score(db, make_trace(["open", "read"]))


def test_lfc_uses_frames_of_twenty():
    db = train_stide([make_trace(["read"] * 10)], 2)
    # 40 known windows, then 10 unseen, then known again
    names = ["read"] * 41 + ["write"] * 10 + ["read"] * 40
    res = stide_score(db, make_trace(names))
    windows = len(names) - 1
    assert res.mismatch_rate == pytest.approx(11 / windows)
    assert res.lfc_score == pytest.approx(11 / 20)
    short = stide_score(db, make_trace(["read", "read", "write", "read"]))
    assert short.lfc_score == pytest.approx(2 / 3)


def test_evidence_is_most_frequent_unseen():
    db = train_stide([make_trace(["read", "read"])], 2)
    names = ["open", "close"] * 5 + ["write"] * 4
    res = stide_score(db, make_trace(names))
    assert res.evidence[0] in {(S["open"], S["close"]), (S["close"], S["open"])}
    assert len(res.evidence) <= 10


@pytest.mark.parametrize("n", [2, 3, 5])
def test_stide_matches_nested_loop_oracle(n):
    rng = random.Random(n)
    for _ in range(40):
        alphabet = rng.sample(range(32), rng.randint(2, 5))
        train = [random_stide_trace(rng, rng.randint(n, 80), alphabet) for _ in range(rng.randint(1, 3))]
        test = random_stide_trace(rng, rng.randint(n, 120), alphabet + [rng.randrange(32)])
        assert stide_score(train_stide(train, n), test).mismatch_rate == naive_mismatch(train, test, n)


def test_more_training_never_increases_mismatch():
    rng = random.Random(17)
    for _ in range(50):
        alphabet = rng.sample(range(32), 3)
        base = [random_stide_trace(rng, 40, alphabet)]
        extra = base + [random_stide_trace(rng, 40, alphabet)]
        test = random_stide_trace(rng, 60, alphabet)
        assert (stide_score(train_stide(extra, 3), test).mismatch_rate
                <= stide_score(train_stide(base, 3), test).mismatch_rate)


def test_ngramdb_validates_arity():
    with pytest.raises(ValueError):
        NGramDb(2, frozenset({(1, 2, 3)}), 1)


# -- features -----------------------------------------------------------------

def test_fnv_reference_vectors():
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


def test_bucket_indices_frozen():
    f = HashedFeaturizer(2, 1024)
    # independent byte-level FNV-1a over (2,0), (0,1), (1,3)
    assert f.buckets(make_trace(["open", "read", "write", "close"])).tolist() == [575, 570, 477]


def test_vectorized_hash_matches_scalar(normal_traces):
    f = HashedFeaturizer(5, 4096)
    tr = normal_traces[3]
    ids = tr.ids.tolist()
    expected = [fnv1a64(bytes(ids[i:i + 5])) % 4096 for i in range(len(ids) - 4)]
    assert f.buckets(tr).tolist() == expected


def test_featurize_norm_and_one_hot(normal_traces):
    f = HashedFeaturizer(5, 1024)
    for tr in normal_traces[:10]:
        assert np.linalg.norm(featurize(tr, f)) == pytest.approx(1.0, abs=1e-9)
    x = featurize(make_trace(["open", "read", "write", "close", "exit"]), f)
    assert np.count_nonzero(x) == 1 and x.max() == 1.0
    with pytest.raises(DetectorError):
        featurize(make_trace(["open"]), f)
    assert np.array_equal(featurize(normal_traces[0], f), featurize(normal_traces[0], f))


@pytest.mark.parametrize("dims", [512, 1000, 1 << 17])
def test_featurizer_dims(dims):
    with pytest.raises(ValueError):
        HashedFeaturizer(5, dims)


# -- one-class model ----------------------------------------------------------

def test_single_vector_lands_inside():
    x = np.zeros(1024)
    x[7] = 1.0
    history = []
    model = train_ocsvm([x], nu=0.1, epochs=300, lr=0.1, seed=1, history=history)
    assert ocsvm_score(model, x) <= 0
    assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))
    assert objective(model.w, model.rho, x[None, :], 0.1) <= objective(np.zeros(1024), 0.0, x[None, :], 0.1)


def test_objective_never_worse_than_start(normal_traces):
    f = HashedFeaturizer(5, 1024)
    xs = np.array([featurize(t, f) for t in normal_traces])
    j0 = objective(np.zeros(1024), 0.0, xs, 0.1)
    for epochs, lr in [(1, 0.001), (5, 0.01), (30, 0.01), (10, 1.0)]:
        model = train_ocsvm(xs, 0.1, epochs, lr, seed=3)
        assert objective(model.w, model.rho, xs, 0.1) <= j0


def test_training_is_deterministic(normal_traces):
    f = HashedFeaturizer(5, 1024)
    xs = np.array([featurize(t, f) for t in normal_traces[:20]])
    assert train_ocsvm(xs, seed=9) == train_ocsvm(xs, seed=9)


@pytest.mark.parametrize("kwargs", [{"nu": 0.0}, {"nu": 1.0}, {"epochs": 0}, {"lr": 0}])
def test_training_rejects_bad_parameters(kwargs):
    with pytest.raises(ValueError):
        train_ocsvm(np.ones((2, 4)), **kwargs)
    with pytest.raises(ValueError):
        train_ocsvm(np.zeros((0, 4)))


def test_score_boundary_and_linearity():
    rng = np.random.default_rng(0)
    w = rng.normal(size=1024)
    x1, x2 = rng.normal(size=1024), rng.normal(size=1024)
    model = OneClassLinearModel(w, float(w @ x1), 0.1)
    assert ocsvm_score(model, x1) == pytest.approx(0.0, abs=1e-9)
    a, b = 2.5, -0.75
    lhs = ocsvm_score(model, a * x1 + b * x2)
    rhs = a * (-(w @ x1)) + b * (-(w @ x2)) + model.rho
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)
    with pytest.raises(ValueError):
        ocsvm_score(model, np.ones(10))


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(12)
    assert max(gradient_fd_error(rng) for _ in range(100)) <= 1e-4


def test_novel_trace_scores_above_training_mean(catalog, normal_traces):
    f = HashedFeaturizer(5, 4096)
    xs = np.array([featurize(t, f) for t in normal_traces])
    model = train_ocsvm(xs, seed=0)
    train_mean = float(np.mean([ocsvm_score(model, x) for x in xs]))
    novel = featurize(generate_trace(catalog["escape-privesc"], 5, 500), f)
    assert ocsvm_score(model, novel) > train_mean


# -- calibration --------------------------------------------------------------

def test_calibrate_examples():
    assert calibrate(range(1, 101), 0.05) == 95
    assert calibrate([0.3] * 40, 0.01) == 0.3
    assert calibrate([7.5], 0.1) == 7.5
    with pytest.raises(ValueError):
        calibrate([], 0.05)
    with pytest.raises(ValueError):
        calibrate([1.0], 0.0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=300),
       st.sampled_from([0.01, 0.05, 0.1, 0.25]))
def test_calibration_guarantee(scores, fpr):
    thr = calibrate(scores, fpr)
    assert sum(s > thr for s in scores) / len(scores) <= fpr
    assert thr in scores


# -- bundle, classification, metrics ------------------------------------------

@pytest.fixture(scope="module")
def bundle(normal_traces):
    return train_bundle(normal_traces, dims=1024, seed=1)


def test_training_traces_classify_normal(bundle, normal_traces):
    assert sum(classify(t, bundle).verdict == "malicious" for t in normal_traces) <= 2
    assert all(thr >= 1e-9 for thr in bundle.thresholds.values())


def test_attack_classifies_malicious(bundle, catalog):
    res = classify(generate_trace(catalog["escape-privesc"], 4242, 500), bundle)
    assert res.verdict == "malicious" and res.truth == "escape-privesc" and res.evidence


def test_all_novel_trace_is_malicious(bundle):
    res = classify(make_trace(["ptrace", "mount"] * 10), bundle)
    assert res.mismatch_rate == 1.0 and res.verdict == "malicious"


def test_verdict_iff_any_score_exceeds(bundle, catalog):
    for i, name in enumerate(catalog):
        res = classify(generate_trace(catalog[name], 70 + i, 300), bundle)
        over = any(res.scores[d] > t for d, t in bundle.thresholds.items())
        assert (res.verdict == "malicious") == over


def test_verdicts_scale_invariant(bundle, catalog):
    traces = [generate_trace(catalog[n], 31, 300) for n in catalog]
    thr = bundle.thresholds["ocsvm"]
    m = bundle.ocsvm
    for c in (0.001, 0.5, 3.0, 1e4):
        scaled = DetectorBundle(bundle.db, bundle.featurizer,
                                OneClassLinearModel(m.w * c, m.rho * c, m.nu), {"ocsvm": thr * c})
        plain = DetectorBundle(bundle.db, bundle.featurizer, m, {"ocsvm": thr})
        assert [classify(t, scaled).verdict for t in traces] == [classify(t, plain).verdict for t in traces]


def test_train_bundle_rejects_short_traces(normal_traces):
    with pytest.raises(DetectorError):
        train_bundle(normal_traces[:3] + [make_trace(["open", "read", "close"])])


def test_stide_only_bundle(normal_traces):
    b = train_bundle(normal_traces[:20], detectors=("stide",))
    assert b.enabled == ("stide",) and b.ocsvm is None
    assert classify(normal_traces[0], b).ocsvm_score is None


def _result(truth, verdict, i=0):
    return DetectionResult(f"j{i}", 0.0, 0.0, None, verdict, [], truth)


def test_metrics_known_confusion():
    kinds = {"reco": "normal", "cryptominer": "attack"}
    rs = ([_result("cryptominer", "malicious")] * 9 + [_result("cryptominer", "normal")]
          + [_result("reco", "malicious")] * 2 + [_result("reco", "normal")] * 98)
    m = evaluate_metrics(rs, kinds)
    assert (m.tp, m.fn, m.fp, m.tn) == (9, 1, 2, 98)
    assert m.tpr == pytest.approx(0.9) and m.fpr == pytest.approx(0.02)
    assert m.precision == pytest.approx(9 / 11)
    assert m.per_profile == {"cryptominer": 0.9} and m.per_profile_fpr == {"reco": 0.02}


def test_metrics_all_correct_and_errors():
    kinds = {"reco": "normal", "cryptominer": "attack"}
    m = evaluate_metrics([_result("reco", "normal"), _result("cryptominer", "malicious")], kinds)
    assert m.fpr == 0 and m.tpr == 1
    assert evaluate_metrics([_result("reco", "normal")], kinds).tpr is None
    with pytest.raises(ValueError):
        evaluate_metrics([], kinds)
    with pytest.raises(ValueError):
        evaluate_metrics([_result(None, "normal")], kinds)


def test_result_json_round_trip(bundle, normal_traces):
    res = classify(normal_traces[1], bundle)
    assert DetectionResult.from_json(res.to_json()) == res


# -- model file ---------------------------------------------------------------

def test_model_round_trip(bundle, normal_traces):
    text = render_model(bundle)
    assert text.startswith("gridward-model v1 n=5 D=1024\n[stide]\n")
    again = parse_model(text)
    assert render_model(again) == text
    assert again.db == bundle.db and again.ocsvm == bundle.ocsvm
    assert dict(again.thresholds) == dict(bundle.thresholds)
    for t in normal_traces[:5]:
        assert classify(t, again) == classify(t, bundle)


@pytest.mark.parametrize("text, line", [
    ("", 1),
    ("not a model\n", 1),
    ("gridward-model v1 n=2 D=1024\n[stide]\n1 2 3\n", 3),
    ("gridward-model v1 n=2 D=1024\n[bogus]\n", 2),
    ("gridward-model v1 n=2 D=1024\n1 2\n", 2),
    ("gridward-model v1 n=2 D=1024\n[ocsvm]\nnu 0.1\nrho 0\n5000 1.0\n", 5),
    ("gridward-model v1 n=2 D=1024\n[thresholds]\nfoo 1\n", 3),
])
def test_model_parse_errors(text, line):
    with pytest.raises(ModelParseError) as exc:
        parse_model(text)
    assert exc.value.line == line


def test_threshold_floor_applies_when_all_scores_zero():
    traces = [make_trace(["read", "write", "read", "write", "read", "write", "read"], job=f"j{i}")
              for i in range(10)]
    b = train_bundle(traces, n=3, dims=1024)
    assert b.thresholds["stide"] == 1e-9 and b.thresholds["lfc"] == 1e-9
    assert classify(traces[0], b).verdict == "normal"
    assert math.isfinite(b.thresholds["ocsvm"])
