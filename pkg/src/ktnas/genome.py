"""Architecture encoding, the shrinking search space, and constrained sampling.

Flat gene order: ``b_En`` (Num bits), ``b_De`` (Num bits), then N encoder
triplets and N decoder triplets, each ``(lo, go1, go2)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

LO_NAMES = ("zero", "conv3", "conv5", "conv7", "conv11")
GO_NAMES = ("zero", "FFN", "MHSA")
LO_KERNELS = {1: 3, 2: 5, 3: 7, 4: 11}
MAX_SAMPLE_TRIES = 100


class GenomeError(ValueError):
    pass


class BudgetError(RuntimeError):
    pass


@dataclass(frozen=True)
class Genome:
    b_en: tuple[int, ...]
    b_de: tuple[int, ...]
    triplets: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "b_en", tuple(int(b) for b in self.b_en))
        object.__setattr__(self, "b_de", tuple(int(b) for b in self.b_de))
        object.__setattr__(self, "triplets", tuple(tuple(int(v) for v in t) for t in self.triplets))
        if len(self.b_en) != len(self.b_de):
            raise GenomeError("b_en and b_de must have the same length")
        if len(self.triplets) % 2:
            raise GenomeError("triplet count must be even (N encoder + N decoder blocks)")
        for name, bits in (("b_en", self.b_en), ("b_de", self.b_de)):
            if any(b not in (0, 1) for b in bits):
                raise GenomeError(f"{name} must be binary")
            if sum(bits) < 1:
                raise GenomeError(f"{name} must select at least one feature")
        for i, t in enumerate(self.triplets):
            if len(t) != 3:
                raise GenomeError(f"triplet {i} must have 3 genes")
            lo, go1, go2 = t
            if not 0 <= lo < len(LO_NAMES):
                raise GenomeError(f"triplet {i}: lo={lo} out of range 0..4")
            if not (0 <= go1 < len(GO_NAMES) and 0 <= go2 < len(GO_NAMES)):
                raise GenomeError(f"triplet {i}: go genes ({go1}, {go2}) out of range 0..2")

    @property
    def num_features(self) -> int:
        return len(self.b_en)

    @property
    def n_blocks(self) -> int:
        return len(self.triplets) // 2

    @property
    def encoder(self) -> tuple[tuple[int, int, int], ...]:
        return self.triplets[: self.n_blocks]

    @property
    def decoder(self) -> tuple[tuple[int, int, int], ...]:
        return self.triplets[self.n_blocks :]

    def __len__(self) -> int:
        return 2 * self.num_features + 3 * len(self.triplets)

    @classmethod
    def uniform(
        cls, b_en: Sequence[int], b_de: Sequence[int], triplet: tuple[int, int, int], n_blocks: int
    ) -> "Genome":
        return cls(tuple(b_en), tuple(b_de), (tuple(triplet),) * (2 * n_blocks))

    def describe(self, feature_names: Sequence[str] | None = None) -> dict:
        names = feature_names or [str(i + 1) for i in range(self.num_features)]

        def block(t):
            return {"lo": LO_NAMES[t[0]], "go1": GO_NAMES[t[1]], "go2": GO_NAMES[t[2]]}

        return {
            "encoder_inputs": [n for n, b in zip(names, self.b_en) if b],
            "decoder_inputs": [n for n, b in zip(names, self.b_de) if b],
            "encoder_blocks": [block(t) for t in self.encoder],
            "decoder_blocks": [block(t) for t in self.decoder],
        }

    def __str__(self) -> str:
        return json.dumps(encode(self), separators=(",", ":"))


def genome_length(num_features: int, n_blocks: int) -> int:
    return 2 * num_features + 6 * n_blocks


def encode(genome: Genome) -> list[int]:
    out = list(genome.b_en) + list(genome.b_de)
    for t in genome.triplets:
        out.extend(t)
    return out


def decode(vector: Sequence[int], num_features: int, n_blocks: int) -> Genome:
    vector = [int(v) for v in vector]
    expected = genome_length(num_features, n_blocks)
    if len(vector) != expected:
        raise GenomeError(
            f"vector length {len(vector)} != 2*Num + 6N = {expected} "
            f"(Num={num_features}, N={n_blocks})"
        )
    n = num_features
    rest = vector[2 * n :]
    triplets = tuple(tuple(rest[i : i + 3]) for i in range(0, len(rest), 3))
    return Genome(tuple(vector[:n]), tuple(vector[n : 2 * n]), triplets)


def save_genome(genome: Genome, path: str | Path) -> None:
    Path(path).write_text(json.dumps(encode(genome)) + "\n")


def load_genome(path: str | Path, num_features: int, n_blocks: int) -> Genome:
    return decode(json.loads(Path(path).read_text()), num_features, n_blocks)


@dataclass(frozen=True)
class SearchSpace:
    """Per-gene admissible value sets, in flat gene order."""

    num_features: int
    n_blocks: int
    sets: tuple[frozenset[int], ...]

    def __post_init__(self):
        if len(self.sets) != genome_length(self.num_features, self.n_blocks):
            raise GenomeError("search space length does not match genome length")
        for i, s in enumerate(self.sets):
            if not s:
                raise GenomeError(f"gene {i} has an empty admissible set")

    @classmethod
    def initial(cls, num_features: int, n_blocks: int) -> "SearchSpace":
        sets = [frozenset({0, 1})] * (2 * num_features)
        sets += [frozenset(range(5)), frozenset(range(3)), frozenset(range(3))] * (2 * n_blocks)
        return cls(num_features, n_blocks, tuple(sets))

    def __len__(self) -> int:
        return len(self.sets)

    def gene_kind(self, pos: int) -> str:
        n = self.num_features
        if pos < n:
            return "b_en"
        if pos < 2 * n:
            return "b_de"
        return ("lo", "go1", "go2")[(pos - 2 * n) % 3]

    def selection_group(self, pos: int) -> range | None:
        n = self.num_features
        if pos < n:
            return range(0, n)
        if pos < 2 * n:
            return range(n, 2 * n)
        return None

    def contains(self, genome: Genome) -> bool:
        vec = encode(genome)
        return len(vec) == len(self.sets) and all(v in s for v, s in zip(vec, self.sets))

    def without(self, removals: Sequence[tuple[int, int]]) -> "SearchSpace":
        sets = list(self.sets)
        for pos, op in removals:
            sets[pos] = sets[pos] - {op}
        return SearchSpace(self.num_features, self.n_blocks, tuple(sets))

    def restrict(self, pos: int, values) -> "SearchSpace":
        sets = list(self.sets)
        sets[pos] = frozenset(values)
        return SearchSpace(self.num_features, self.n_blocks, tuple(sets))

    def to_json(self) -> list[list[int]]:
        return [sorted(s) for s in self.sets]


def _selection_count(sets: Sequence[frozenset[int]]) -> int:
    """Assignments over ``sets`` with at least one bit equal to 1."""
    free = sum(1 for s in sets if s == {0, 1})
    forced_one = any(s == {1} for s in sets)
    total = 2**free
    return total if forced_one else total - 1


def space_size(space: SearchSpace) -> int:
    """Exact number of constraint-satisfying genomes in ``space``."""
    n = space.num_features
    count = _selection_count(space.sets[:n]) * _selection_count(space.sets[n : 2 * n])
    return count * math.prod(len(s) for s in space.sets[2 * n :])


def closed_form_space_size(num_features: int, n_blocks: int) -> int:
    """Closed form ``Num^2 * 2^(2(Num-1)) * 45^(2N)``; it overcounts by ignoring the non-empty selection rule."""
    return num_features**2 * 2 ** (2 * (num_features - 1)) * 45 ** (2 * n_blocks)


def repair_selection(vec: list[int], space: SearchSpace, rng: np.random.Generator) -> list[int]:
    """Force one admissible bit to 1 in any all-zero selection vector."""
    n = space.num_features
    for lo in (0, n):
        if not any(vec[lo : lo + n]):
            candidates = [i for i in range(lo, lo + n) if 1 in space.sets[i]]
            if not candidates:
                raise GenomeError("search space admits no nonempty selection")
            vec[candidates[int(rng.integers(len(candidates)))]] = 1
    return vec


def _sample_once(space: SearchSpace, rng: np.random.Generator) -> Genome:
    vec = [int(rng.choice(sorted(s))) for s in space.sets]
    vec = repair_selection(vec, space, rng)
    return decode(vec, space.num_features, space.n_blocks)


def sample(
    space: SearchSpace,
    rng: np.random.Generator,
    budget: int | None = None,
    param_count: Callable[[Genome], int] | None = None,
) -> Genome:
    """Uniform per-gene sample from ``space`` satisfying the selection constraint.

    Under a parameter ``budget`` the draw is repeated up to 100 times.
    """
    if budget is None:
        return _sample_once(space, rng)
    if param_count is None:
        raise ValueError("a parameter budget needs a param_count function")
    for _ in range(MAX_SAMPLE_TRIES):
        g = _sample_once(space, rng)
        if param_count(g) <= budget:
            return g
    raise BudgetError(
        f"no genome within parameter budget {budget} after {MAX_SAMPLE_TRIES} draws"
    )


@dataclass(frozen=True)
class FitnessRecord:
    genome: Genome
    auc: float
    params: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.auc <= 1.0:
            raise ValueError(f"AUC must lie in [0, 1], got {self.auc}")
