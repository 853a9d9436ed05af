import numpy as np
import pytest
from hypothesis import given, strategies as st

from phototag.metrics import (
    NoRelevantItemsError,
    RankedPredictions,
    average_precision,
    load_predictions,
    mean_ap,
    precision_at_k,
)


def brute_force_ap(scores, relevance):
    """Second implementation straight from the definition, for cross-checks."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    precisions = []
    hits = 0
    for rank, idx in enumerate(order, start=1):
        if relevance[idx]:
            hits += 1
            precisions.append(hits / rank)
    return sum(precisions) / len(precisions)


class TestAveragePrecision:
    def test_all_relevant_first(self):
        assert average_precision([9, 8, 7, 1, 0], [1, 1, 1, 0, 0]) == 1.0

    def test_hand_computed_pattern(self):
        # Relevance [1,0,1] by descending score: (1/1 + 2/3)/2 = 5/6.
        assert average_precision([3.0, 2.0, 1.0], [True, False, True]) == pytest.approx(5 / 6)

    def test_single_relevant_item(self):
        assert average_precision([0.3], [True]) == 1.0

    def test_zero_relevant_signalled(self):
        with pytest.raises(NoRelevantItemsError):
            average_precision([1.0, 2.0], [False, False])

    def test_stable_tie_rule(self):
        # Equal scores keep original order, so swapping tied items is a no-op
        # on the *sorted* sequence only if relevance travels with them.
        a = average_precision([1.0, 1.0, 1.0], [True, False, True])
        assert a == pytest.approx((1 / 1 + 2 / 3) / 2)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(0)
        scores = rng.standard_normal(30)
        rel = rng.random(30) < 0.3
        if not rel.any():
            rel[0] = True
        base = average_precision(scores, rel)
        for f in [lambda s: 3 * s + 1, np.tanh, lambda s: np.exp(s / 4)]:
            assert average_precision(f(scores), rel) == pytest.approx(base)


class TestPrecisionAtK:
    def test_top_one(self):
        assert precision_at_k([5, 1, 2], [True, False, False], 1) == 1.0

    def test_k_all_is_base_rate(self):
        assert precision_at_k([5, 1, 2, 4], [True, False, False, True], 4) == 0.5

    def test_k_zero_rejected(self):
        with pytest.raises(ValueError):
            precision_at_k([1.0], [True], 0)

    def test_random_vs_brute_force(self):
        rng = np.random.default_rng(1)
        scores = rng.standard_normal(20)
        rel = rng.random(20) < 0.4
        k = 7
        order = sorted(range(20), key=lambda i: (-scores[i], i))
        expected = sum(rel[i] for i in order[:k]) / k
        assert precision_at_k(scores, rel, k) == pytest.approx(expected)


class TestMeanAp:
    def test_single_tag(self):
        p = RankedPredictions()
        p.add_score("cat", "a", 2.0)
        p.add_score("cat", "b", 1.0)
        p.add_truth("cat", "a")
        assert mean_ap(p) == 1.0

    def test_two_tags_arithmetic_mean(self):
        p = RankedPredictions()
        for item, score in [("a", 3.0), ("b", 2.0)]:
            p.add_score("cat", item, score)
        p.add_truth("cat", "a")  # AP 1.0
        for item, score in [("a", 3.0), ("b", 2.0)]:
            p.add_score("dog", item, score)
        p.add_truth("dog", "b")  # AP 0.5
        assert mean_ap(p) == pytest.approx(0.75)

    def test_subset_restriction(self):
        p = RankedPredictions()
        for tag, ap_target in [("cat", "a"), ("dog", "b")]:
            p.add_score(tag, "a", 3.0)
            p.add_score(tag, "b", 2.0)
            p.add_truth(tag, ap_target)
        assert mean_ap(p, tag_subset={"cat"}) == 1.0

    def test_zero_positive_tags_excluded(self):
        p = RankedPredictions()
        p.add_score("cat", "a", 1.0)
        p.add_truth("cat", "a")
        p.add_score("empty", "a", 1.0)  # no truth
        assert mean_ap(p) == 1.0

    def test_all_empty_rejected(self):
        p = RankedPredictions()
        p.add_score("empty", "a", 1.0)
        with pytest.raises(NoRelevantItemsError):
            mean_ap(p)

    def test_unknown_subset_tag(self):
        p = RankedPredictions()
        p.add_score("cat", "a", 1.0)
        p.add_truth("cat", "a")
        with pytest.raises(KeyError):
            mean_ap(p, tag_subset={"ghost"})

    def test_random_instance_matches_brute_force(self):
        rng = np.random.default_rng(42)
        p = RankedPredictions()
        expected = []
        for t in range(10):
            tag = f"tag{t}"
            items = [f"i{j}" for j in range(50)]
            scores = rng.standard_normal(50)
            rel = rng.random(50) < 0.2
            if not rel.any():
                rel[0] = True
            for item, s in zip(items, scores):
                p.add_score(tag, item, s)
            for item, r in zip(items, rel):
                if r:
                    p.add_truth(tag, item)
            expected.append(brute_force_ap(list(scores), list(rel)))
        assert mean_ap(p) == sum(expected) / len(expected)


@given(
    st.lists(
        st.tuples(st.floats(-100, 100, allow_nan=False), st.booleans()),
        min_size=1,
        max_size=40,
    ).filter(lambda rows: any(r for _, r in rows))
)
def test_ap_in_valid_range(rows):
    scores = [s for s, _ in rows]
    rel = [r for _, r in rows]
    ap = average_precision(scores, rel)
    # Worst case puts every relevant item last; that is the exact lower bound.
    n, r = len(rel), sum(rel)
    lower = sum(i / (n - r + i) for i in range(1, r + 1)) / r
    assert lower - 1e-12 <= ap <= 1.0


def test_prediction_file_round_trip():
    pred = ["a\tcat\t0.9", "b\tcat\t0.1", "a\tdog\t0.4"]
    truth = ["a\tcat"]
    p = load_predictions(pred, truth)
    assert p.tag_ap("cat") == 1.0
    assert "dog" in p.scores
