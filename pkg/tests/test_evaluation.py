import numpy as np
import pytest

from bmfa.autograd import Node
from bmfa.errors import NumericError, ValidationError
from bmfa.evaluation import (DetMetrics, compute_eer, compute_min_dcf,
                             cosine_score, evaluate_rows, extract_embeddings,
                             score_trials)
from bmfa.model import Model


# ---------------------------------------------------------------------------
# cosine scoring


def test_cosine_identical_orthogonal_opposite():
    a = np.array([1.0, 2.0, 2.0])
    assert cosine_score(a, 3 * a) == pytest.approx(1.0)
    assert cosine_score([1, 0], [0, 1]) == pytest.approx(0.0)
    assert cosine_score(a, -a) == pytest.approx(-1.0)


def test_cosine_symmetric_100_pairs():
    rng = np.random.default_rng(0)
    for _ in range(100):
        a, b = rng.standard_normal((2, 16))
        s = cosine_score(a, b)
        assert s == cosine_score(b, a)
        assert -1.0 <= s <= 1.0


def test_cosine_zero_norm_rejected():
    with pytest.raises(NumericError):
        cosine_score(np.zeros(4), np.ones(4))


def test_cosine_length_mismatch_rejected():
    with pytest.raises(ValidationError):
        cosine_score(np.ones(4), np.ones(5))


# ---------------------------------------------------------------------------
# EER


def fixed_example():
    targets = [0.9, 0.8, 0.7, 0.3]
    nontargets = [0.6, 0.4, 0.2, 0.1]
    return [(s, True) for s in targets] + [(s, False) for s in nontargets]


def test_eer_fixed_example():
    eer, threshold = compute_eer(fixed_example())
    assert eer == pytest.approx(0.25)
    assert threshold == pytest.approx(0.6)


def test_eer_perfect_separation():
    scores = [(1.0, True), (0.9, True), (0.2, False), (0.1, False)]
    eer, threshold = compute_eer(scores)
    assert eer == 0.0
    assert 0.2 < threshold <= 0.9


def test_eer_inverted_perfect():
    scores = [(0.1, True), (0.2, True), (0.8, False), (0.9, False)]
    eer, _ = compute_eer(scores)
    assert eer == pytest.approx(1.0)


def test_eer_self_trials_zero():
    # same-embedding target trials score 1.0, everything else below
    rng = np.random.default_rng(1)
    scores = [(1.0, True) for _ in range(10)]
    scores += [(float(s), False) for s in rng.uniform(-1, 0.9, 50)]
    eer, _ = compute_eer(scores)
    assert eer == 0.0


def test_eer_trial_permutation_invariant():
    rng = np.random.default_rng(2)
    scores = [(float(s), bool(t)) for s, t in
              zip(rng.standard_normal(200), rng.integers(0, 2, 200))]
    eer, thr = compute_eer(scores)
    perm = rng.permutation(200)
    eer2, thr2 = compute_eer([scores[i] for i in perm])
    assert (eer, thr) == (eer2, thr2)


def test_eer_monotone_transform_invariant():
    rng = np.random.default_rng(3)
    scores = [(float(s), bool(t)) for s, t in
              zip(rng.standard_normal(300), rng.integers(0, 2, 300))]
    eer, _ = compute_eer(scores)
    warped = [(float(np.tanh(2 * s) + 0.1 * s), t) for s, t in scores]
    eer2, _ = compute_eer(warped)
    assert eer == pytest.approx(eer2, abs=1e-12)


def test_eer_degenerate_lists_rejected():
    with pytest.raises(ValidationError):
        compute_eer([(0.5, True)])
    with pytest.raises(ValidationError):
        compute_eer([(0.5, True), (np.inf, False)])


# ---------------------------------------------------------------------------
# minDCF


def brute_force_min_dcf(scores, p_target=0.01, c_miss=1.0, c_fa=1.0):
    vals = np.array([s for s, _ in scores])
    tgt = np.array([t for _, t in scores], dtype=bool)
    best = np.inf
    for thr in list(np.unique(vals)) + [np.inf]:
        miss = np.mean(vals[tgt] < thr) if tgt.any() else 0.0
        fa = np.mean(vals[~tgt] >= thr) if (~tgt).any() else 0.0
        best = min(best, c_miss * p_target * miss + c_fa * (1 - p_target) * fa)
    return best / min(c_miss * p_target, c_fa * (1 - p_target))


def test_min_dcf_matches_brute_force_1000_sets():
    rng = np.random.default_rng(42)
    for k in range(1000):
        n = int(rng.integers(4, 40))
        vals = np.round(rng.standard_normal(n), 2)  # ties on purpose
        tgt = rng.integers(0, 2, n).astype(bool)
        if not tgt.any() or tgt.all():
            tgt[0] = True
            tgt[-1] = False
        scores = list(zip(vals.tolist(), tgt.tolist()))
        p_target = float(rng.choice([0.01, 0.1, 0.5]))
        got = compute_min_dcf(scores, p_target)
        want = brute_force_min_dcf(scores, p_target)
        assert got == pytest.approx(want, abs=1e-12), (k, scores)


def test_eer_matches_brute_force_crossing_1000_sets():
    # the swept (miss, fa) arrays themselves are checked against recounting
    from bmfa.evaluation import _operating_points
    rng = np.random.default_rng(43)
    for k in range(1000):
        n = int(rng.integers(4, 30))
        vals = np.round(rng.standard_normal(n), 1)
        tgt = rng.integers(0, 2, n).astype(bool)
        if not tgt.any() or tgt.all():
            tgt[0] = True
            tgt[-1] = False
        scores = list(zip(vals.tolist(), tgt.tolist()))
        thresholds, miss, fa = _operating_points(scores)
        for thr, m, f in zip(thresholds, miss, fa):
            assert m == pytest.approx(np.mean(vals[tgt] < thr), abs=1e-12)
            assert f == pytest.approx(np.mean(vals[~tgt] >= thr), abs=1e-12)


def test_min_dcf_all_identical_scores():
    scores = [(0.5, True)] * 3 + [(0.5, False)] * 3
    assert compute_min_dcf(scores) == pytest.approx(1.0)


def test_min_dcf_at_most_cost_at_eer_threshold():
    rng = np.random.default_rng(4)
    scores = [(float(s + 0.5 * t), bool(t)) for s, t in
              zip(rng.standard_normal(100), rng.integers(0, 2, 100))]
    eer, thr = compute_eer(scores)
    vals = np.array([s for s, _ in scores])
    tgt = np.array([t for _, t in scores], dtype=bool)
    miss = np.mean(vals[tgt] < thr)
    fa = np.mean(vals[~tgt] >= thr)
    cost_at_eer = (0.01 * miss + 0.99 * fa) / 0.01
    assert compute_min_dcf(scores) <= cost_at_eer + 1e-12


def test_min_dcf_parameter_validation():
    with pytest.raises(ValidationError):
        compute_min_dcf(fixed_example(), p_target=0.0)
    with pytest.raises(ValidationError):
        compute_min_dcf(fixed_example(), c_miss=0.0)


def test_det_metrics_range_checked():
    with pytest.raises(ValidationError):
        DetMetrics(eer=1.5, min_dcf=0.5, threshold=0.0)
    with pytest.raises(ValidationError):
        DetMetrics(eer=0.5, min_dcf=-0.1, threshold=0.0)


# ---------------------------------------------------------------------------
# embedding extraction and trial scoring


def test_extract_embeddings_shapes_and_odd_truncation():
    m = Model(strategy="bmfa", fusion="afm", seed=0)
    rng = np.random.default_rng(5)
    feats = {
        "a": rng.standard_normal((10, 64)).astype(np.float32),
        "b": rng.standard_normal((13, 64)).astype(np.float32),  # odd T
    }
    embs = extract_embeddings(m, feats)
    assert set(embs) == {"a", "b"}
    assert all(e.shape == (512,) for e in embs.values())
    # odd length truncates to even: 13 behaves as 12
    embs12 = extract_embeddings(m, {"b": feats["b"][:12]})
    np.testing.assert_array_equal(embs["b"], embs12["b"])


def test_extract_embeddings_runs_in_infer_mode():
    m = Model(strategy="bmfa", fusion="afm", seed=0)
    feats = {"a": np.random.default_rng(6).standard_normal((8, 64)).astype(np.float32)}
    a1 = extract_embeddings(m, feats)["a"]
    a2 = extract_embeddings(m, feats)["a"]
    np.testing.assert_array_equal(a1, a2)  # no train-mode BN state drift


def test_extract_embeddings_validates_shape():
    m = Model(strategy="baseline", fusion=None, seed=0)
    with pytest.raises(Exception):
        extract_embeddings(m, {"a": np.zeros((1, 63), dtype=np.float32)})


def test_score_trials_and_unknown_utt():
    embs = {"u1": np.array([1.0, 0.0]), "u2": np.array([0.0, 1.0]),
            "u3": np.array([1.0, 1.0])}
    rows = score_trials(embs, [("u1", "u2", True), ("u1", "u3", False)])
    assert rows[0][:3] == ("u1", "u2", True)
    assert rows[0][3] == pytest.approx(0.0)
    assert rows[1][3] == pytest.approx(np.sqrt(0.5))
    with pytest.raises(ValidationError, match="u9"):
        score_trials(embs, [("u1", "u9", True)])


def test_evaluate_rows_end_to_end():
    rows = [("a", "b", True, 0.9), ("a", "c", True, 0.8),
            ("a", "d", True, 0.7), ("a", "e", True, 0.3),
            ("b", "c", False, 0.6), ("b", "d", False, 0.4),
            ("b", "e", False, 0.2), ("c", "d", False, 0.1)]
    m = evaluate_rows(rows)
    assert m.eer == pytest.approx(0.25)
    assert m.threshold == pytest.approx(0.6)
    assert 0.0 <= m.min_dcf <= 1.0
