"""Evolutionary search with per-generation search-space reduction."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .genome import (
    MAX_SAMPLE_TRIES,
    BudgetError,
    FitnessRecord,
    Genome,
    SearchSpace,
    decode,
    encode,
    repair_selection,
    sample,
    space_size,
)

log = logging.getLogger(__name__)

Fitness = Callable[[Genome], float]
ParamCount = Callable[[Genome], int]


class CachedFitness:
    """Evaluates each distinct genome once; remembers evaluation order."""

    def __init__(self, fitness: Fitness, param_count: ParamCount | None = None):
        self.fitness = fitness
        self.param_count = param_count
        self.cache: dict[tuple[int, ...], FitnessRecord] = {}
        self.order: list[FitnessRecord] = []

    def __call__(self, genome: Genome) -> FitnessRecord:
        key = tuple(encode(genome))
        rec = self.cache.get(key)
        if rec is None:
            params = self.param_count(genome) if self.param_count else None
            rec = FitnessRecord(genome, float(self.fitness(genome)), params)
            self.cache[key] = rec
            self.order.append(rec)
        return rec

    @property
    def n_evaluations(self) -> int:
        return len(self.order)


def _within_budget(genome: Genome, budget: int | None, param_count: ParamCount | None) -> bool:
    return budget is None or param_count(genome) <= budget


def initialize(
    space: SearchSpace,
    pop: int,
    rng: np.random.Generator,
    fitness: Callable[[Genome], FitnessRecord],
    budget: int | None = None,
    param_count: ParamCount | None = None,
) -> list[FitnessRecord]:
    if pop < 2:
        raise ValueError(f"population size must be >= 2 for binary tournaments, got {pop}")
    return [fitness(sample(space, rng, budget, param_count)) for _ in range(pop)]


def tournament_select(population: Sequence[FitnessRecord], rng: np.random.Generator) -> list[FitnessRecord]:
    """``len(population)`` binary tournaments, contestants drawn with replacement."""
    pool = []
    n = len(population)
    for _ in range(n):
        i, j = rng.integers(n, size=2)
        a, b = population[i], population[j]
        if a.auc == b.auc:
            pool.append(a if rng.random() < 0.5 else b)
        else:
            pool.append(a if a.auc > b.auc else b)
    return pool


def _mutate(vec: list[int], space: SearchSpace, rng: np.random.Generator, p_m: float) -> list[int]:
    for i, v in enumerate(vec):
        if rng.random() < p_m:
            others = sorted(space.sets[i] - {v})
            if others:
                vec[i] = int(others[rng.integers(len(others))])
    return vec


def _conform(vec: list[int], space: SearchSpace, rng: np.random.Generator) -> list[int]:
    """Resample genes holding values removed from the space since the parent was made."""
    for i, v in enumerate(vec):
        if v not in space.sets[i]:
            allowed = sorted(space.sets[i])
            vec[i] = int(allowed[rng.integers(len(allowed))])
    return repair_selection(vec, space, rng)


def crossover_mutate(
    parents: tuple[Genome, Genome],
    space: SearchSpace,
    rng: np.random.Generator,
    p_m: float | None = None,
    cut: int | None = None,
) -> tuple[Genome, Genome]:
    """Single-point crossover then per-gene mutation, kept inside ``space``."""
    v1, v2 = encode(parents[0]), encode(parents[1])
    n = len(v1)
    if p_m is None:
        p_m = 1.0 / n
    if cut is None:
        cut = int(rng.integers(1, n))
    if not 1 <= cut < n:
        raise ValueError(f"cut point must be in [1, {n - 1}], got {cut}")
    c1 = v1[:cut] + v2[cut:]
    c2 = v2[:cut] + v1[cut:]
    kids = []
    for c in (c1, c2):
        c = _conform(_mutate(c, space, rng, p_m), space, rng)
        kids.append(decode(c, space.num_features, space.n_blocks))
    return kids[0], kids[1]


def make_offspring(
    pool: Sequence[FitnessRecord],
    space: SearchSpace,
    rng: np.random.Generator,
    p_m: float | None = None,
    budget: int | None = None,
    param_count: ParamCount | None = None,
) -> list[Genome]:
    n = len(pool)
    out: list[Genome] = []
    for k in range(0, n, 2):
        pair = (pool[k].genome, pool[(k + 1) % n].genome)
        for _ in range(MAX_SAMPLE_TRIES):
            kids = crossover_mutate(pair, space, rng, p_m)
            if all(_within_budget(g, budget, param_count) for g in kids):
                break
        else:
            raise BudgetError(
                f"no offspring within parameter budget {budget} after {MAX_SAMPLE_TRIES} tries"
            )
        out.extend(kids)
    return out[:n]


def survive(population: Sequence[FitnessRecord], offspring: Sequence[FitnessRecord]) -> list[FitnessRecord]:
    """Keep the ``len(population)`` best of both; ties keep insertion order."""
    combined = list(population) + list(offspring)
    order = sorted(range(len(combined)), key=lambda i: (-combined[i].auc, i))
    return [combined[i] for i in order[: len(population)]]


def operation_fitness(space: SearchSpace, records: Sequence[FitnessRecord]) -> list[dict[int, float]]:
    """Mean fitness of the records holding each admissible value, per gene.

    Values that no record holds are absent from the dict.
    """
    vecs = np.array([encode(r.genome) for r in records])
    fits = np.array([r.auc for r in records])
    table = []
    for pos, ops in enumerate(space.sets):
        row = {}
        for op in sorted(ops):
            hit = vecs[:, pos] == op
            if hit.any():
                row[op] = float(fits[hit].mean())
        table.append(row)
    return table


def _keeps_selection(space_sets: list[set[int]], pos: int, op: int, space: SearchSpace) -> bool:
    group = space.selection_group(pos)
    if group is None or op != 1:
        return True
    return any(1 in space_sets[i] for i in group if i != pos)


def reduce_space(
    space: SearchSpace,
    population: Sequence[FitnessRecord],
    offspring: Sequence[FitnessRecord],
) -> tuple[SearchSpace, list[tuple[int, int]]]:
    """Drop the two globally worst (gene, value) pairs, then the worst value of
    the gene whose value-fitness spread is largest.

    Values no individual holds are exempt, a gene never loses its last value,
    and a selection vector always keeps at least one bit that may be 1.
    Ties break by (gene, value) order.
    """
    table = operation_fitness(space, list(population) + list(offspring))
    sets = [set(s) for s in space.sets]
    removed: list[tuple[int, int]] = []

    def removable(pos: int, op: int) -> bool:
        return op in sets[pos] and op in table[pos] and len(sets[pos]) >= 2 and _keeps_selection(sets, pos, op, space)

    ranked = sorted((sf, pos, op) for pos, row in enumerate(table) for op, sf in row.items())
    for _, pos, op in ranked:
        if len(removed) == 2:
            break
        if removable(pos, op):
            sets[pos].discard(op)
            removed.append((pos, op))

    spread = [float(np.std(list(row.values()))) if row else 0.0 for row in table]
    for pos in sorted(range(len(table)), key=lambda p: (-spread[p], p)):
        worst = sorted((sf, op) for op, sf in table[pos].items() if removable(pos, op))
        if worst:
            op = worst[0][1]
            sets[pos].discard(op)
            removed.append((pos, op))
            break

    return SearchSpace(space.num_features, space.n_blocks, tuple(frozenset(s) for s in sets)), removed


@dataclass
class GenerationLog:
    generation: int
    best_auc: float
    mean_auc: float
    space_size: int
    removals: list[tuple[int, int]]
    evaluations: int


@dataclass
class SearchResult:
    best: FitnessRecord
    population: list[FitnessRecord]
    space: SearchSpace
    log: list[GenerationLog] = field(default_factory=list)
    n_evaluations: int = 0
    evaluations_to_target: int | None = None


def search(
    fitness: Fitness,
    space: SearchSpace,
    pop: int = 20,
    gen: int = 30,
    seed: int = 0,
    budget: int | None = None,
    param_count: ParamCount | None = None,
    reduction: bool = True,
    p_m: float | None = None,
    target: float | None = None,
    on_generation: Callable[[GenerationLog], None] | None = None,
) -> SearchResult:
    """Select, vary, evaluate, reduce, survive for ``gen`` generations.

    Random draws come from three independent streams (initialization,
    selection, variation) spawned from ``seed``.  With ``target`` set the run
    stops once a genome scores at least ``target``.
    """
    if budget is not None and param_count is None:
        raise ValueError("a parameter budget needs a param_count function")
    init_rng, select_rng, vary_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)
    )
    evaluate = CachedFitness(fitness, param_count)
    population = initialize(space, pop, init_rng, evaluate, budget, param_count)
    best = max(population, key=lambda r: r.auc)
    hit = None

    def note(generation: int, removals) -> None:
        nonlocal hit
        if target is not None and hit is None and best.auc >= target:
            hit = next(i + 1 for i, r in enumerate(evaluate.order) if r.auc >= target)
        entry = GenerationLog(
            generation,
            best.auc,
            float(np.mean([r.auc for r in population])),
            space_size(space),
            list(removals),
            evaluate.n_evaluations,
        )
        result.log.append(entry)
        log.info("generation %d: best %.4f mean %.4f |S|=%d", generation, entry.best_auc, entry.mean_auc, entry.space_size)
        if on_generation:
            on_generation(entry)

    result = SearchResult(best, population, space)
    note(0, [])
    for g in range(1, gen + 1):
        if hit is not None:
            break
        pool = tournament_select(population, select_rng)
        kids = make_offspring(pool, space, vary_rng, p_m, budget, param_count)
        offspring = [evaluate(k) for k in kids]
        removals: list[tuple[int, int]] = []
        if reduction:
            space, removals = reduce_space(space, population, offspring)
        population = survive(population, offspring)
        for r in offspring:
            if r.auc > best.auc:
                best = r
        note(g, removals)

    result.best = best
    result.population = population
    result.space = space
    result.n_evaluations = evaluate.n_evaluations
    result.evaluations_to_target = hit
    return result


def write_search_log(entries: Sequence[GenerationLog], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["generation", "best_auc", "mean_auc", "space_size", "removals", "evaluations"])
        for e in entries:
            removals = ";".join(f"{p}:{o}" for p, o in e.removals)
            w.writerow([e.generation, f"{e.best_auc:.6f}", f"{e.mean_auc:.6f}", e.space_size, removals, e.evaluations])


class AdditiveOracle:
    """Synthetic fitness: normalized sum of fixed per-(gene, value) scores.

    Each gene has one best value scoring 1; the others score uniformly in
    ``[0, gap]``.  The optimum takes every gene's best value.  Some selection
    bit in each vector always scores best at 1, so the optimum is valid.
    """

    def __init__(self, num_features: int, n_blocks: int, seed: int = 0, gap: float = 0.5):
        if not 0.0 <= gap < 1.0:
            raise ValueError(f"gap must lie in [0, 1), got {gap}")
        rng = np.random.default_rng(seed)
        self.space = SearchSpace.initial(num_features, n_blocks)
        self.scores = []
        for s in self.space.sets:
            r = rng.random(max(s) + 1) * gap
            r[rng.integers(len(r))] = 1.0
            self.scores.append(r)
        for start in (0, num_features):
            group = self.scores[start : start + num_features]
            if all(np.argmax(r) == 0 for r in group):
                group[0][:] = group[0][::-1].copy()
        self._lo = sum(r.min() for r in self.scores)
        self._span = sum(r.max() for r in self.scores) - self._lo
        best = [int(np.argmax(r)) for r in self.scores]
        self.optimum = decode(best, num_features, n_blocks)

    def __call__(self, genome: Genome) -> float:
        total = sum(self.scores[i][v] for i, v in enumerate(encode(genome)))
        return float(min(1.0, max(0.0, (total - self._lo) / self._span)))

    @property
    def optimum_value(self) -> float:
        return self(self.optimum)


def evaluations_to_optimum(
    num_features: int,
    n_blocks: int,
    seeds,
    reduction: bool,
    pop: int = 20,
    gen: int = 60,
    gap: float = 0.5,
) -> list[int | None]:
    """Per-seed evaluation count at which the EA first hits the oracle optimum
    (``None`` when it never does within ``gen`` generations)."""
    out = []
    for seed in seeds:
        oracle = AdditiveOracle(num_features, n_blocks, seed, gap)
        res = search(oracle, oracle.space, pop, gen, seed, reduction=reduction, target=oracle.optimum_value)
        out.append(res.evaluations_to_target)
    return out
