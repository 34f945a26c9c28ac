"""Interaction logs, derived feature streams, sequence windows and splits.

Every categorical stream reserves index 0 for the start/padding token, so raw
categorical values are stored shifted by one where they come from a bucket
(time features) and remapped to ``1..k`` where they come from ids.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

# Candidate feature streams, in slot order.  Slot order matters: it fixes the
# canonical pair ordering of the hierarchical fusion.
FEATURES: tuple[str, ...] = (
    "exer",
    "sk",
    "tag",
    "tagset",
    "bund",
    "ans",
    "cont_ela",
    "cate_ela_s",
    "cont_lag",
    "cate_lag_s",
    "cate_lag_m",
    "cate_lag_d",
)
CONTINUOUS = frozenset({"cont_ela", "cont_lag"})
# Streams carrying information from the previous interaction (or the gap to
# it); position 0 of every window holds the start token.
SHIFTED = frozenset(
    {"ans", "cont_ela", "cate_ela_s", "cont_lag", "cate_lag_s", "cate_lag_m", "cate_lag_d"}
)

# record field -> feature stream for the id-like categorical features
ID_FIELDS = {
    "exercise": "exer",
    "skill": "sk",
    "tag": "tag",
    "tagset": "tagset",
    "bundle": "bund",
}

ELAPSED_SECONDS_CAP = 300
LAG_SECONDS_CAP = 300
LAG_MINUTES_CAP = 1440
LAG_DAYS_CAP = 365

# bucket value v is stored at index v + 1; index 0 is the start token
BUCKET_CARDINALITY = {
    "ans": 3,
    "cate_ela_s": ELAPSED_SECONDS_CAP + 2,
    "cate_lag_s": LAG_SECONDS_CAP + 2,
    "cate_lag_m": LAG_MINUTES_CAP + 2,
    "cate_lag_d": LAG_DAYS_CAP + 2,
}

RECORD_FIELDS = (
    "student",
    "exercise",
    "skill",
    "tag",
    "tagset",
    "bundle",
    "timestamp_ms",
    "elapsed_ms",
    "response",
)


class DataFormatError(ValueError):
    """Raised for malformed or out-of-vocabulary input rows."""


@dataclass(frozen=True, slots=True)
class InteractionRecord:
    student_id: str
    exercise_id: int
    skill_id: int
    tag_id: int
    tagset_id: int
    bundle_id: int
    timestamp_ms: int
    elapsed_ms: int
    response: int

    def to_json(self) -> dict:
        return {
            "student": self.student_id,
            "exercise": self.exercise_id,
            "skill": self.skill_id,
            "tag": self.tag_id,
            "tagset": self.tagset_id,
            "bundle": self.bundle_id,
            "timestamp_ms": self.timestamp_ms,
            "elapsed_ms": self.elapsed_ms,
            "response": self.response,
        }


@dataclass
class FeatureVocabulary:
    """Per-feature cardinalities (index 0 reserved).

    ``counts`` holds the number of distinct real values per id field; the
    embedding table for a field has ``counts[field] + 1`` rows.  ``mappings``
    (optional) remaps raw ids to ``1..count`` when the vocabulary was built
    from data rather than declared.
    """

    counts: dict[str, int]
    mappings: dict[str, dict[int, int]] | None = None

    def cardinality(self, feature: str) -> int:
        if feature in CONTINUOUS:
            return 1
        if feature in BUCKET_CARDINALITY:
            return BUCKET_CARDINALITY[feature]
        for fld, name in ID_FIELDS.items():
            if name == feature:
                return self.counts[fld] + 1
        raise KeyError(feature)

    def index(self, fld: str, raw: int) -> int:
        if self.mappings is not None:
            try:
                return self.mappings[fld][raw]
            except KeyError:
                raise DataFormatError(f"unknown {fld} value {raw!r}") from None
        if not 1 <= raw <= self.counts[fld]:
            raise DataFormatError(
                f"{fld} value {raw} outside declared range 1..{self.counts[fld]}"
            )
        return raw

    @classmethod
    def from_counts(cls, **counts: int) -> "FeatureVocabulary":
        missing = set(ID_FIELDS) - set(counts)
        if missing:
            raise ValueError(f"missing counts for {sorted(missing)}")
        return cls(counts={k: int(counts[k]) for k in ID_FIELDS})

    def to_json(self) -> dict:
        out: dict = {"counts": dict(self.counts)}
        out["cardinalities"] = {f: self.cardinality(f) for f in FEATURES}
        if self.mappings is not None:
            out["mappings"] = {
                fld: [[raw, idx] for raw, idx in sorted(m.items())]
                for fld, m in self.mappings.items()
            }
        return out

    @classmethod
    def from_json(cls, payload: dict) -> "FeatureVocabulary":
        mappings = None
        if "mappings" in payload:
            mappings = {
                fld: {int(raw): int(idx) for raw, idx in pairs}
                for fld, pairs in payload["mappings"].items()
            }
        return cls(counts={k: int(v) for k, v in payload["counts"].items()}, mappings=mappings)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "FeatureVocabulary":
        return cls.from_json(json.loads(Path(path).read_text()))


def _parse_row(row: dict, lineno: int) -> InteractionRecord:
    missing = [k for k in RECORD_FIELDS if k not in row]
    if missing:
        raise DataFormatError(f"line {lineno}: missing field(s) {', '.join(missing)}")
    try:
        rec = InteractionRecord(
            student_id=str(row["student"]),
            exercise_id=int(row["exercise"]),
            skill_id=int(row["skill"]),
            tag_id=int(row["tag"]),
            tagset_id=int(row["tagset"]),
            bundle_id=int(row["bundle"]),
            timestamp_ms=int(row["timestamp_ms"]),
            elapsed_ms=int(row["elapsed_ms"]),
            response=int(row["response"]),
        )
    except (TypeError, ValueError) as exc:
        raise DataFormatError(f"line {lineno}: {exc}") from None
    if rec.response not in (0, 1):
        raise DataFormatError(f"line {lineno}: response must be 0 or 1, got {rec.response}")
    if rec.elapsed_ms < 0:
        raise DataFormatError(f"line {lineno}: elapsed_ms must be >= 0, got {rec.elapsed_ms}")
    return rec


def _read_rows(path: Path) -> Iterable[tuple[int, dict]]:
    if path.suffix.lower() == ".csv":
        with path.open(newline="") as fh:
            for lineno, row in enumerate(csv.DictReader(fh), start=2):
                yield lineno, row
        return
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(row, dict):
                raise DataFormatError(f"line {lineno}: expected a JSON object")
            yield lineno, row


def ingest(
    path: str | Path, schema: FeatureVocabulary | None = None
) -> tuple[dict[str, list[InteractionRecord]], FeatureVocabulary]:
    """Read a JSONL (or CSV) interaction log.

    Returns records grouped by student and sorted by timestamp, with id fields
    already mapped to vocabulary indices.  Without ``schema`` a vocabulary is
    built from the distinct values in the file.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    raw = [_parse_row(row, lineno) for lineno, row in _read_rows(path)]

    if schema is None:
        mappings = {}
        for fld in ID_FIELDS:
            values = sorted({getattr(r, f"{fld}_id") for r in raw})
            mappings[fld] = {v: i + 1 for i, v in enumerate(values)}
        schema = FeatureVocabulary(
            counts={fld: len(m) for fld, m in mappings.items()}, mappings=mappings
        )

    grouped: dict[str, list[InteractionRecord]] = defaultdict(list)
    for rec in raw:
        kw = {f"{fld}_id": schema.index(fld, getattr(rec, f"{fld}_id")) for fld in ID_FIELDS}
        grouped[rec.student_id].append(
            InteractionRecord(
                student_id=rec.student_id,
                timestamp_ms=rec.timestamp_ms,
                elapsed_ms=rec.elapsed_ms,
                response=rec.response,
                **kw,
            )
        )
    for recs in grouped.values():
        recs.sort(key=lambda r: r.timestamp_ms)
    return dict(grouped), schema


def write_jsonl(records: Iterable[InteractionRecord], path: str | Path) -> None:
    with Path(path).open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), separators=(",", ":")) + "\n")


def seconds_bucket(ms: int | np.ndarray, cap: int) -> np.ndarray:
    return np.minimum(np.asarray(ms) // 1000, cap)


def minutes_bucket(ms: int | np.ndarray, cap: int = LAG_MINUTES_CAP) -> np.ndarray:
    return np.minimum(np.asarray(ms) // 60_000, cap)


def days_bucket(ms: int | np.ndarray, cap: int = LAG_DAYS_CAP) -> np.ndarray:
    return np.minimum(np.asarray(ms) // 86_400_000, cap)


def derive_features(records: Sequence[InteractionRecord]) -> dict[str, np.ndarray]:
    """Build the 12 candidate streams plus ``target`` for one student.

    Shifted streams hold the start token (0) at position 0.  Continuous streams
    hold ``log1p(seconds)``; standardization happens later (`FeatureScaler`).
    """
    n = len(records)
    out: dict[str, np.ndarray] = {}
    for fld, name in ID_FIELDS.items():
        out[name] = np.fromiter((getattr(r, f"{fld}_id") for r in records), np.int64, n)
    resp = np.fromiter((r.response for r in records), np.int64, n)
    ela = np.fromiter((r.elapsed_ms for r in records), np.int64, n)
    ts = np.fromiter((r.timestamp_ms for r in records), np.int64, n)
    lag = np.zeros(n, np.int64)
    lag[1:] = np.maximum(np.diff(ts), 0)

    def shifted(values: np.ndarray, dtype) -> np.ndarray:
        s = np.zeros(n, dtype)
        s[1:] = values[:-1]
        return s

    out["ans"] = shifted(resp + 1, np.int64)
    out["cont_ela"] = shifted(np.log1p(ela / 1000.0), np.float64)
    out["cate_ela_s"] = shifted(seconds_bucket(ela, ELAPSED_SECONDS_CAP) + 1, np.int64)
    # lag of interaction t is ts_t - ts_{t-1}; it is known when e_t is shown
    cont_lag = np.log1p(lag / 1000.0)
    cont_lag[0] = 0.0
    out["cont_lag"] = cont_lag
    for name, bucket in (
        ("cate_lag_s", seconds_bucket(lag, LAG_SECONDS_CAP)),
        ("cate_lag_m", minutes_bucket(lag)),
        ("cate_lag_d", days_bucket(lag)),
    ):
        arr = bucket.astype(np.int64) + 1
        arr[0] = 0
        out[name] = arr
    out["target"] = resp.astype(np.float64)
    return out


@dataclass
class SequenceWindow:
    features: dict[str, np.ndarray]
    valid_mask: np.ndarray
    target: np.ndarray
    student_id: str = ""

    @property
    def length(self) -> int:
        return int(self.valid_mask.sum())


def make_windows(
    features: dict[str, np.ndarray], L: int, student_id: str = ""
) -> list[SequenceWindow]:
    """Cut one student's streams into non-overlapping windows of length ``L``.

    The final remainder is right-padded with index 0.  Shifted streams are
    re-anchored so position 0 of every window carries the start token.
    """
    if L < 2:
        raise ValueError(f"window length must be >= 2, got {L}")
    n = len(features["target"])
    windows = []
    for start in range(0, max(n, 1), L):
        stop = min(start + L, n)
        k = stop - start
        mask = np.zeros(L, bool)
        mask[:k] = True
        feats = {}
        for name in FEATURES:
            src = features[name]
            buf = np.zeros(L, np.float64 if name in CONTINUOUS else np.int64)
            buf[:k] = src[start:stop]
            if name in SHIFTED:
                buf[0] = 0
            feats[name] = buf
        target = np.zeros(L, np.float64)
        target[:k] = features["target"][start:stop]
        windows.append(SequenceWindow(feats, mask, target, student_id))
    return windows


@dataclass
class WindowSet:
    """A stack of windows: ``features[name]`` has shape ``(n_windows, L)``."""

    features: dict[str, np.ndarray]
    valid_mask: np.ndarray
    target: np.ndarray
    student_ids: np.ndarray = field(default_factory=lambda: np.array([], dtype=object))

    def __len__(self) -> int:
        return self.valid_mask.shape[0]

    @property
    def window_length(self) -> int:
        return self.valid_mask.shape[1]

    @classmethod
    def from_windows(cls, windows: Sequence[SequenceWindow]) -> "WindowSet":
        if not windows:
            raise ValueError("no windows")
        feats = {name: np.stack([w.features[name] for w in windows]) for name in FEATURES}
        return cls(
            features=feats,
            valid_mask=np.stack([w.valid_mask for w in windows]),
            target=np.stack([w.target for w in windows]),
            student_ids=np.array([w.student_id for w in windows], dtype=object),
        )

    def subset(self, idx) -> "WindowSet":
        idx = np.asarray(idx)
        return WindowSet(
            features={k: v[idx] for k, v in self.features.items()},
            valid_mask=self.valid_mask[idx],
            target=self.target[idx],
            student_ids=self.student_ids[idx] if len(self.student_ids) else self.student_ids,
        )

    def save(self, path: str | Path) -> None:
        arrays = {f"f_{k}": v for k, v in self.features.items()}
        np.savez_compressed(
            path,
            valid_mask=self.valid_mask,
            target=self.target,
            student_ids=self.student_ids.astype(str),
            **arrays,
        )

    @classmethod
    def load(cls, path: str | Path) -> "WindowSet":
        with np.load(path, allow_pickle=False) as z:
            feats = {k[2:]: z[k] for k in z.files if k.startswith("f_")}
            return cls(
                features=feats,
                valid_mask=z["valid_mask"],
                target=z["target"],
                student_ids=z["student_ids"].astype(object),
            )


def build_windows(
    students: dict[str, list[InteractionRecord]], L: int, order: Sequence[str] | None = None
) -> WindowSet:
    windows: list[SequenceWindow] = []
    for sid in order if order is not None else sorted(students):
        windows.extend(make_windows(derive_features(students[sid]), L, sid))
    return WindowSet.from_windows(windows)


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...]
    validation: tuple[str, ...]
    test: tuple[str, ...]
    fold: int = 0


def split(
    students: Sequence[str],
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
    fold: int = 0,
    seed: int = 0,
    n_folds: int = 5,
) -> DatasetSplit:
    """Partition students into train/validation/test for one CV fold.

    Students are permuted once by ``seed``; fold ``f`` takes its test block at
    offset ``f * n // n_folds`` of the permutation and the validation block
    directly after it (cyclically), so test blocks tile the students across
    folds and validation blocks are pairwise disjoint whenever
    ``ratios[1] <= 1 / n_folds``.
    """
    if not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    if not 0 <= fold < n_folds:
        raise ValueError(f"fold must be in [0, {n_folds}), got {fold}")
    ids = sorted(set(students))
    n = len(ids)
    n_test = int(round(n * ratios[2]))
    n_val = int(round(n * ratios[1]))
    n_train = n - n_test - n_val
    if min(n_train, n_val, n_test) <= 0:
        raise ValueError(
            f"empty partition: {n} students give train/val/test = {n_train}/{n_val}/{n_test}"
        )
    perm = np.random.default_rng(seed).permutation(n)
    rolled = np.roll(perm, -(fold * n // n_folds))
    test = tuple(ids[i] for i in rolled[:n_test])
    val = tuple(ids[i] for i in rolled[n_test : n_test + n_val])
    train = tuple(ids[i] for i in rolled[n_test + n_val :])
    return DatasetSplit(train=train, validation=val, test=test, fold=fold)


@dataclass
class SyntheticProcess:
    """Knobs of the synthetic response process.

    P(correct) = sigmoid(ability - difficulty + mastery[skill] + recency * (recent - 0.5))

    ``mastery`` grows by ``practice_gain * (1 + r) / 2`` after each attempt on
    the skill and decays as ``exp(-forgetting * hours_since_last_attempt)``.
    ``recent`` is the mean of the student's last three responses.  Lags are
    drawn iid from a session mixture independent of everything else, so with
    ``forgetting = 0`` correctness carries no information about lag.
    """

    n_skills: int = 7
    n_tags: int = 30
    min_len: int = 10
    max_len: int = 90
    ability_mean: float = 0.0
    ability_sd: float = 1.0
    difficulty_sd: float = 1.0
    practice_gain: float = 0.25
    forgetting: float = 0.15
    recency: float = 1.5
    skill_switch: float = 0.25
    session_break: float = 0.15


def generate_synthetic(
    n_students: int,
    n_exercises: int,
    seed: int = 0,
    process: SyntheticProcess | None = None,
) -> list[InteractionRecord]:
    if n_students <= 0 or n_exercises <= 0:
        raise ValueError("n_students and n_exercises must be positive")
    p = process or SyntheticProcess()
    rng = np.random.default_rng(seed)
    n_skills = min(p.n_skills, n_exercises)
    ex_skill = np.concatenate([np.arange(n_skills), rng.integers(0, n_skills, n_exercises - n_skills)])
    rng.shuffle(ex_skill)
    ex_tag = rng.integers(0, p.n_tags, n_exercises)
    ex_tagset = ex_skill * 4 + rng.integers(0, 4, n_exercises)
    ex_bundle = np.arange(n_exercises) // 3
    difficulty = rng.normal(0.0, p.difficulty_sd, n_exercises)
    by_skill = [np.flatnonzero(ex_skill == s) for s in range(n_skills)]

    records: list[InteractionRecord] = []
    width = len(str(n_students - 1))
    for s in range(n_students):
        sid = f"s{s:0{width}d}"
        ability = p.ability_mean + p.ability_sd * rng.standard_normal()
        n = int(rng.integers(p.min_len, p.max_len + 1))
        mastery = np.zeros(n_skills)
        last_seen = np.full(n_skills, np.nan)
        recent: list[int] = []
        skill = int(rng.integers(n_skills))
        t_ms = int(rng.integers(0, 86_400_000))
        for i in range(n):
            if i > 0:
                if rng.random() < p.session_break:
                    gap = rng.exponential(2 * 86_400.0)
                else:
                    gap = rng.exponential(60.0)
                t_ms += int(gap * 1000) + 1
            if i > 0 and rng.random() < p.skill_switch:
                skill = int(rng.integers(n_skills))
            ex = int(rng.choice(by_skill[skill]))
            if not np.isnan(last_seen[skill]):
                hours = (t_ms - last_seen[skill]) / 3_600_000.0
                mastery[skill] *= math.exp(-p.forgetting * hours)
            rec_term = (np.mean(recent[-3:]) if recent else 0.5) - 0.5
            logit = ability - difficulty[ex] + mastery[skill] + p.recency * rec_term
            prob = 1.0 / (1.0 + math.exp(-logit)) if logit > -700 else 0.0
            r = int(rng.random() < prob)
            elapsed = int(1000 * rng.lognormal(math.log(15.0) + 0.3 * difficulty[ex], 0.6))
            records.append(
                InteractionRecord(
                    student_id=sid,
                    exercise_id=ex + 1,
                    skill_id=int(ex_skill[ex]) + 1,
                    tag_id=int(ex_tag[ex]) + 1,
                    tagset_id=int(ex_tagset[ex]) + 1,
                    bundle_id=int(ex_bundle[ex]) + 1,
                    timestamp_ms=t_ms,
                    elapsed_ms=elapsed,
                    response=r,
                )
            )
            mastery[skill] += p.practice_gain * (1 + r) / 2
            last_seen[skill] = t_ms
            recent.append(r)
            t_ms += elapsed
    return records


def synthetic_vocabulary(n_exercises: int, process: SyntheticProcess | None = None) -> FeatureVocabulary:
    """The declared vocabulary matching `generate_synthetic` output."""
    p = process or SyntheticProcess()
    n_skills = min(p.n_skills, n_exercises)
    return FeatureVocabulary.from_counts(
        exercise=n_exercises,
        skill=n_skills,
        tag=p.n_tags,
        tagset=n_skills * 4,
        bundle=(n_exercises - 1) // 3 + 1,
    )
