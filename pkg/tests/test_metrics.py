import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ktnas.metrics import EvalBuffer, MetricError, acc, auc, rmse


def pairwise_auc(pred, label):
    pos = [p for p, y in zip(pred, label) if y == 1]
    neg = [p for p, y in zip(pred, label) if y == 0]
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


def buffers():
    n = st.integers(2, 30)
    return n.flatmap(
        lambda k: st.tuples(
            st.lists(st.sampled_from([0.1, 0.2, 0.35, 0.5, 0.8, 0.9]), min_size=k, max_size=k),
            st.lists(st.integers(0, 1), min_size=k, max_size=k).filter(lambda y: 0 < sum(y) < len(y)),
        )
    )


class TestAUC:
    def test_separated(self):
        assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
        assert auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0

    def test_all_equal(self):
        assert auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5

    def test_six_elements(self):
        rng = np.random.default_rng(0)
        p = rng.random(6)
        y = np.array([1, 0, 1, 0, 0, 1])
        assert auc(p, y) == pytest.approx(pairwise_auc(p, y), abs=1e-15)

    @given(buffers())
    @settings(max_examples=200, deadline=None)
    def test_pairwise_with_ties(self, buf):
        p, y = buf
        assert auc(p, y) == pytest.approx(pairwise_auc(p, y), abs=1e-12)

    def test_properties(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            p = rng.random(40)
            y = rng.integers(0, 2, 40)
            y[:2] = [0, 1]
            a = auc(p, y)
            assert auc(np.exp(3 * p) - 7, y) == pytest.approx(a, abs=1e-12)
            assert auc(1 - p, y) == pytest.approx(1 - a, abs=1e-12)
            perm = rng.permutation(40)
            assert auc(p[perm], y[perm]) == pytest.approx(a, abs=1e-12)

    def test_single_class(self):
        with pytest.raises(MetricError, match="both"):
            auc([0.2, 0.4], [1, 1])


class TestAccRmse:
    def test_exact(self):
        y = [0, 1, 1, 0]
        assert acc(y, y) == 1.0 and rmse(y, y) == 0.0

    def test_half(self):
        assert rmse([0.5] * 4, [0, 1, 0, 1]) == 0.5
        assert acc([0.5] * 4, [0, 1, 0, 1]) == 0.5  # ties count as a positive call

    def test_looped_reference(self):
        rng = np.random.default_rng(2)
        p = rng.random(10)
        y = rng.integers(0, 2, 10)
        hits = 0
        sq = 0.0
        for pi, yi in zip(p, y):
            hits += int((1 if pi >= 0.5 else 0) == yi)
            sq += (pi - yi) ** 2
        assert acc(p, y) == hits / 10
        assert rmse(p, y) == pytest.approx((sq / 10) ** 0.5, abs=1e-15)

    def test_errors(self):
        with pytest.raises(MetricError, match="empty"):
            rmse([], [])
        with pytest.raises(MetricError, match="0 or 1"):
            acc([0.5], [2])
        with pytest.raises(MetricError, match="mismatch"):
            acc([0.5, 0.2], [1])


class TestEvalBuffer:
    def test_mask_and_merge(self):
        a = EvalBuffer()
        a.add([[0.9, 0.1, 0.7]], [[1, 0, 0]], [[True, True, False]])
        b = EvalBuffer()
        b.add([0.4, 0.6], [0, 1])
        a.extend(b)
        assert len(a) == 4
        assert a.summary() == {"auc": 1.0, "acc": 1.0, "rmse": pytest.approx(np.sqrt((0.01 * 2 + 0.16 * 2) / 4))}
