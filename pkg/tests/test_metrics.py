import numpy as np
import pytest

from _svoracle import eer_oracle, min_dcf_oracle
from spkrefine.metrics import DcfParams, Trial, eer, error_rates, min_dcf, score_trials


def _unit(v):
    return v / np.linalg.norm(v)


def test_scores_identical_and_antipodal():
    v = _unit(np.arange(1.0, 6.0))
    s = score_trials([Trial(v, v, True), Trial(v, -v, False)])
    np.testing.assert_allclose(s, [1.0, -1.0])


def test_score_matches_dot_product():
    rng = np.random.default_rng(0)
    a, b = _unit(rng.standard_normal(192)), _unit(rng.standard_normal(192))
    assert score_trials([Trial(a, b, False)])[0] == pytest.approx(sum(x * y for x, y in zip(a, b)), abs=1e-12)


def test_perfect_separation():
    scores = [0.9, 0.8, 0.7, 0.1, 0.2]
    labels = [1, 1, 1, 0, 0]
    assert eer(scores, labels)[0] == 0.0
    assert min_dcf(scores, labels)[0] == 0.0


def test_all_equal_scores_min_dcf_is_one():
    assert min_dcf([0.5] * 6, [1, 0, 1, 0, 0, 1])[0] == 1.0


def test_random_labels_eer_near_half():
    rng = np.random.default_rng(1)
    scores = rng.standard_normal(10_000)
    labels = rng.integers(0, 2, 10_000)
    assert abs(eer(scores, labels)[0] - 0.5) < 0.03


def test_handcrafted_eight_trials():
    scores = [0.91, 0.62, 0.55, 0.30, 0.70, 0.41, 0.20, 0.05]
    labels = [1, 1, 1, 1, 0, 0, 0, 0]
    assert eer(scores, labels)[0] == eer_oracle(scores, labels)
    assert min_dcf(scores, labels)[0] == min_dcf_oracle(scores, labels)
    # hand check: threshold 0.62 -> miss 2/4, fa 1/4; 0.55 -> miss 1/4, fa 1/4
    assert eer(scores, labels) == (0.25, 0.55)


def test_interpolated_crossing():
    # miss/fa never meet on a sweep point
    scores = [0.9, 0.3, 0.8, 0.5, 0.1]
    labels = [1, 1, 0, 0, 0]
    value, _ = eer(scores, labels)
    assert value == eer_oracle(scores, labels)
    assert 0 < value <= 0.5


@pytest.mark.parametrize("seed", range(10))
def test_random_sets_match_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 33))
    labels = rng.integers(0, 2, n)
    labels[0], labels[1] = 1, 0
    scores = np.round(rng.standard_normal(n), 1)   # ties on purpose
    assert eer(scores, labels)[0] == eer_oracle(list(scores), list(labels))
    assert min_dcf(scores, labels)[0] == min_dcf_oracle(list(scores), list(labels))


def test_custom_dcf_params():
    rng = np.random.default_rng(11)
    scores, labels = rng.standard_normal(20), np.r_[np.ones(10), np.zeros(10)]
    p = DcfParams(p_target=0.2, c_miss=3.0, c_fa=0.5)
    assert min_dcf(scores, labels, p)[0] == min_dcf_oracle(list(scores), list(labels), 0.2, 3.0, 0.5)


def test_defaults():
    assert DcfParams() == DcfParams(p_target=0.01, c_miss=1.0, c_fa=1.0)


def test_single_class_rejected():
    with pytest.raises(ValueError):
        eer([0.1, 0.2], [1, 1])
    with pytest.raises(ValueError):
        min_dcf([0.1, 0.2], [0, 0])


@pytest.mark.parametrize("kw", [dict(p_target=0), dict(p_target=1), dict(c_fa=0)])
def test_bad_dcf_params(kw):
    with pytest.raises(ValueError):
        DcfParams(**kw)


def test_sweep_includes_trivial_operating_points():
    thr, miss, fa = error_rates([0.3, 0.6], [1, 0])
    assert thr[0] == -np.inf and thr[-1] == np.inf
    assert (miss[0], fa[0]) == (0.0, 1.0) and (miss[-1], fa[-1]) == (1.0, 0.0)


def test_eer_and_dcf_ranges():
    rng = np.random.default_rng(12)
    for _ in range(20):
        labels = rng.integers(0, 2, 30)
        labels[:2] = [0, 1]
        scores = rng.standard_normal(30) + labels
        assert 0 <= eer(scores, labels)[0] <= 0.5
        assert 0 <= min_dcf(scores, labels)[0] <= 1


def test_duplicate_trial_moves_eer_by_at_most_granularity():
    rng = np.random.default_rng(13)
    for _ in range(20):
        n = 24
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        scores = rng.standard_normal(n) + labels
        i = int(rng.integers(n))
        base = eer(scores, labels)[0]
        dup = eer(np.r_[scores, scores[i]], np.r_[labels, labels[i]])[0]
        n_pos, n_neg = labels.sum(), n - labels.sum()
        assert abs(dup - base) <= 1.0 / min(n_pos, n_neg) + 1e-12
