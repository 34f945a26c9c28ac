import hashlib
import json

import numpy as np
import pytest
from scipy.stats import chi2_contingency

from ktnas.dataset import (
    BUCKET_CARDINALITY,
    FEATURES,
    SHIFTED,
    DataFormatError,
    FeatureVocabulary,
    InteractionRecord,
    SyntheticProcess,
    WindowSet,
    build_windows,
    derive_features,
    generate_synthetic,
    ingest,
    make_windows,
    split,
    write_jsonl,
)


def rec(sid="a", ex=1, ts=0, ela=1000, r=1, sk=1, tag=1, tagset=1, bund=1):
    return InteractionRecord(sid, ex, sk, tag, tagset, bund, ts, ela, r)


def write_rows(path, rows):
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")


def row(**kw):
    base = dict(student="a", exercise=1, skill=1, tag=1, tagset=1, bundle=1, timestamp_ms=0, elapsed_ms=1000, response=1)
    base.update(kw)
    return base


class TestIngest:
    def test_two_rows_one_student(self, tmp_path):
        p = tmp_path / "log.jsonl"
        write_rows(p, [row(timestamp_ms=5, exercise=9), row(timestamp_ms=0, exercise=4)])
        students, vocab = ingest(p)
        assert list(students) == ["a"]
        recs = students["a"]
        assert len(recs) == 2
        assert [r.timestamp_ms for r in recs] == [0, 5]
        # two distinct exercises + reserved 0
        assert vocab.cardinality("exer") == 3
        assert vocab.cardinality("sk") == 2
        assert [r.exercise_id for r in recs] == [1, 2]

    def test_bad_response_names_field(self, tmp_path):
        p = tmp_path / "log.jsonl"
        write_rows(p, [row(), row(response=2)])
        with pytest.raises(DataFormatError, match="response") as e:
            ingest(p)
        assert "line 2" in str(e.value)

    def test_malformed_json_has_line_number(self, tmp_path):
        p = tmp_path / "log.jsonl"
        p.write_text(json.dumps(row()) + "\n{not json\n")
        with pytest.raises(DataFormatError, match="line 2"):
            ingest(p)

    def test_missing_field(self, tmp_path):
        p = tmp_path / "log.jsonl"
        bad = row()
        del bad["tag"]
        write_rows(p, [bad])
        with pytest.raises(DataFormatError, match="tag"):
            ingest(p)

    def test_unknown_value_under_schema_names_feature(self, tmp_path):
        p = tmp_path / "log.jsonl"
        write_rows(p, [row(skill=8)])
        schema = FeatureVocabulary.from_counts(exercise=5, skill=7, tag=3, tagset=3, bundle=3)
        with pytest.raises(DataFormatError, match="skill"):
            ingest(p, schema)

    def test_csv(self, tmp_path):
        p = tmp_path / "log.csv"
        keys = list(row())
        lines = [",".join(keys)] + [",".join(str(v) for v in row(timestamp_ms=t).values()) for t in (3, 1)]
        p.write_text("\n".join(lines) + "\n")
        students, _ = ingest(p)
        assert [r.timestamp_ms for r in students["a"]] == [1, 3]

    def test_declared_schema_mirrors_counts(self):
        vocab = FeatureVocabulary.from_counts(exercise=13169, skill=7, tag=302, tagset=1792, bundle=9534)
        assert vocab.cardinality("exer") == 13170
        assert vocab.cardinality("sk") == 8
        assert vocab.cardinality("tag") == 303
        assert vocab.cardinality("tagset") == 1793
        assert vocab.cardinality("bund") == 9535

    def test_vocabulary_json_round_trip(self, tmp_path):
        p = tmp_path / "log.jsonl"
        write_rows(p, [row(exercise=40), row(exercise=7, timestamp_ms=1)])
        _, vocab = ingest(p)
        vocab.save(tmp_path / "v.json")
        back = FeatureVocabulary.load(tmp_path / "v.json")
        assert back == vocab
        assert back.index("exercise", 40) == 2


class TestDerive:
    def test_lag_stream(self):
        f = derive_features([rec(ts=0), rec(ts=5000)])
        assert f["cate_lag_s"].tolist() == [0, 5 + 1]
        assert f["cate_lag_m"].tolist() == [0, 0 + 1]
        assert f["cate_lag_d"].tolist() == [0, 0 + 1]
        assert f["cont_lag"][0] == 0.0
        assert f["cont_lag"][1] == pytest.approx(np.log1p(5.0))

    def test_elapsed_cap(self):
        f = derive_features([rec(ela=400_000), rec(ts=1)])
        # stored as bucket + 1; position 1 carries interaction 0's elapsed time
        assert f["cate_ela_s"][1] - 1 == 300

    def test_answer_shift(self):
        f = derive_features([rec(r=1, ts=0), rec(r=0, ts=1), rec(r=1, ts=2)])
        # responses stored as r + 1 so 0 stays the start token
        assert f["ans"].tolist() == [0, 2, 1]
        assert f["target"].tolist() == [1, 0, 1]

    def test_single_interaction(self):
        f = derive_features([rec()])
        for name in SHIFTED:
            assert f[name].tolist() == [0]

    def test_bucket_ranges(self):
        recs = [rec(ts=t, ela=e) for t, e in [(0, 10**9), (10**12, 0), (10**12 + 61_000, 5)]]
        f = derive_features(recs)
        for name, card in BUCKET_CARDINALITY.items():
            assert f[name].min() >= 0 and f[name].max() < card


class TestWindows:
    @pytest.mark.parametrize("n,L,lengths", [(250, 100, [100, 100, 50]), (1, 100, [1]), (100, 100, [100])])
    def test_lengths(self, n, L, lengths):
        f = derive_features([rec(ts=i, r=i % 2) for i in range(n)])
        ws = make_windows(f, L)
        assert [w.length for w in ws] == lengths
        assert sum(w.length for w in ws) == n

    def test_L_too_small(self):
        with pytest.raises(ValueError):
            make_windows(derive_features([rec()]), 1)

    def test_shift_property_and_padding(self):
        rng = np.random.default_rng(0)
        recs = [rec(ts=i * 1000, r=int(rng.integers(2))) for i in range(23)]
        for w in make_windows(derive_features(recs), 10):
            k = w.length
            for name in SHIFTED:
                assert w.features[name][0] == 0
            # R[t] = r_{t-1} for t >= 1 inside the window
            assert np.array_equal(w.features["ans"][1:k] - 1, w.target[: k - 1])
            for name in FEATURES:
                assert np.all(w.features[name][k:] == 0)
            assert not w.valid_mask[k:].any()

    def test_window_set_round_trip(self, tmp_path, synthetic_windows):
        synthetic_windows.save(tmp_path / "w.npz")
        back = WindowSet.load(tmp_path / "w.npz")
        for name in FEATURES:
            assert np.array_equal(back.features[name], synthetic_windows.features[name])
        assert np.array_equal(back.valid_mask, synthetic_windows.valid_mask)
        assert list(back.student_ids) == list(synthetic_windows.student_ids)

    def test_conservation(self, synthetic_students, synthetic_windows):
        total = sum(len(v) for v in synthetic_students.values())
        assert synthetic_windows.valid_mask.sum() == total


class TestSplit:
    def test_sizes(self):
        s = split([f"s{i}" for i in range(10)], (0.7, 0.1, 0.2))
        assert (len(s.train), len(s.validation), len(s.test)) == (7, 1, 2)

    def test_deterministic(self):
        ids = [f"s{i}" for i in range(37)]
        assert split(ids, fold=2, seed=5) == split(ids, fold=2, seed=5)
        assert split(ids, fold=2, seed=5) != split(ids, fold=2, seed=6)

    def test_partition(self):
        ids = [f"s{i}" for i in range(53)]
        s = split(ids, fold=3, seed=1)
        parts = [set(s.train), set(s.validation), set(s.test)]
        assert sum(len(p) for p in parts) == len(ids)
        assert set().union(*parts) == set(ids)

    def test_folds_disjoint(self):
        ids = [f"s{i}" for i in range(100)]
        folds = [split(ids, fold=f, seed=0) for f in range(5)]
        for a in range(5):
            for b in range(a + 1, 5):
                assert not set(folds[a].validation) & set(folds[b].validation)
                assert not set(folds[a].test) & set(folds[b].test)

    def test_errors(self):
        with pytest.raises(ValueError):
            split(["a", "b", "c"], (0.7, 0.1, 0.2))
        with pytest.raises(ValueError):
            split([f"s{i}" for i in range(10)], (0.5, 0.1, 0.1))
        with pytest.raises(ValueError):
            split([f"s{i}" for i in range(10)], fold=5)


class TestSynthetic:
    def test_byte_identical(self, tmp_path):
        digests = []
        for k in range(2):
            p = tmp_path / f"{k}.jsonl"
            write_jsonl(generate_synthetic(30, 12, seed=9), p)
            digests.append(hashlib.sha256(p.read_bytes()).hexdigest())
        assert digests[0] == digests[1]

    def test_timestamps_sorted_and_valid(self):
        recs = generate_synthetic(20, 12, seed=1)
        by = {}
        for r in recs:
            by.setdefault(r.student_id, []).append(r.timestamp_ms)
        for ts in by.values():
            assert ts == sorted(ts)
        assert {r.response for r in recs} <= {0, 1}

    def test_infinite_ability(self):
        recs = generate_synthetic(5, 10, seed=2, process=SyntheticProcess(ability_mean=1e6))
        assert all(r.response == 1 for r in recs)

    def test_no_forgetting_means_lag_uninformative(self):
        # chi-square test of correctness vs lag bucket with the forgetting term off
        p = SyntheticProcess(forgetting=0.0)
        recs = generate_synthetic(1500, 30, seed=4, process=p)
        by = {}
        for r in recs:
            by.setdefault(r.student_id, []).append(r)
        table = np.zeros((4, 2))
        edges = [60_000, 3_600_000, 86_400_000]
        for rs in by.values():
            for a, b in zip(rs, rs[1:]):
                lag = b.timestamp_ms - a.timestamp_ms
                table[np.searchsorted(edges, lag), b.response] += 1
        assert table.min() > 50
        _, pval, _, _ = chi2_contingency(table)
        assert pval > 0.001

    def test_forgetting_makes_lag_informative(self):
        p = SyntheticProcess(forgetting=2.0, practice_gain=1.5, recency=0.0)
        recs = generate_synthetic(1500, 30, seed=4, process=p)
        by = {}
        for r in recs:
            by.setdefault(r.student_id, []).append(r)
        table = np.zeros((2, 2))
        for rs in by.values():
            for a, b in zip(rs, rs[1:]):
                table[int(b.timestamp_ms - a.timestamp_ms > 86_400_000), b.response] += 1
        _, pval, _, _ = chi2_contingency(table)
        assert pval < 1e-6

    def test_build_windows_orders(self, synthetic_students):
        order = sorted(synthetic_students)[:5]
        ws = build_windows(synthetic_students, 10, order)
        assert list(dict.fromkeys(ws.student_ids)) == order
