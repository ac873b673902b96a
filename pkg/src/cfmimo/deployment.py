"""O-RU to EDU partition optimization.

A genetic algorithm searches length-L genomes of EDU labels for the
partition whose cross-EDU tuples are geographically tightest, which spreads
each EDU's own O-RUs apart (interleaving). The comparison arm is a balanced
geographic clustering.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

MAX_EXACT_TUPLES = 10_000_000
_REJECTION_TRIES = 20  # per child pair before falling back to repair


@dataclass
class GaConfig:
    crossover_rate: float = 0.8
    mutation_rate: float = 0.05
    population_size: int = 50
    generations: int = 200
    fitness_mode: str = "pairwise-surrogate"  # or "exact"

    def validate(self) -> None:
        if not (0.0 <= self.crossover_rate <= 1.0):
            raise ValueError("crossover_rate must be in [0, 1]")
        if not (0.0 <= self.mutation_rate <= 1.0):
            raise ValueError("mutation_rate must be in [0, 1]")
        if self.population_size < 2 or self.population_size % 2:
            raise ValueError("population_size must be an even number >= 2")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        if self.fitness_mode not in ("exact", "pairwise-surrogate"):
            raise ValueError(f"unknown fitness_mode {self.fitness_mode!r}")


@dataclass
class Partition:
    """EDU label per O-RU plus its fitness score."""

    genome: np.ndarray  # (L,) ints in [0, M)
    num_edu: int
    fitness: float = math.nan

    def __post_init__(self):
        self.genome = np.asarray(self.genome, dtype=int)
        if not is_balanced(self.genome, self.num_edu):
            raise ValueError("partition must use every EDU with sizes within 1")

    def groups(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.genome == m) for m in range(self.num_edu)]

    def as_mapping(self) -> dict[int, int]:
        return {int(i): int(m) for i, m in enumerate(self.genome)}


def is_balanced(genome: np.ndarray, num_edu: int) -> bool:
    """Group sizes cover every EDU and differ by at most one."""
    genome = np.asarray(genome, dtype=int)
    if genome.min(initial=0) < 0 or genome.max(initial=-1) >= num_edu:
        return False
    counts = np.bincount(genome, minlength=num_edu)
    return counts.min() >= 1 and counts.max() - counts.min() <= 1


def _balanced_labels(L: int, M: int) -> np.ndarray:
    return np.arange(L) % M


def random_balanced_genome(L: int, M: int, rng: np.random.Generator) -> np.ndarray:
    labels = _balanced_labels(L, M)
    return rng.permutation(labels)


def _repair(genome: np.ndarray, M: int, rng: np.random.Generator) -> np.ndarray:
    """Move genes from over-full to under-full groups until balanced."""
    g = genome.copy()
    counts = np.bincount(g, minlength=M)
    while counts.max() - counts.min() > 1 or counts.min() < 1:
        donor = int(np.argmax(counts))
        taker = int(np.argmin(counts))
        pick = rng.choice(np.flatnonzero(g == donor))
        g[pick] = taker
        counts[donor] -= 1
        counts[taker] += 1
    return g


def exact_fitness_denominator(genome: np.ndarray, dist: np.ndarray, M: int) -> float:
    """Sum over all cross-EDU tuples of the root-sum-square of their pairwise
    distances (all M-choose-2 pairs per tuple)."""
    groups = [np.flatnonzero(genome == m) for m in range(M)]
    count = math.prod(len(g) for g in groups)
    if count > MAX_EXACT_TUPLES:
        raise ValueError(
            f"{count} tuples exceed the exact-fitness limit; use the "
            "pairwise-surrogate mode"
        )
    d2 = dist**2
    total = 0.0
    for combo in itertools.product(*groups):
        acc = 0.0
        for a, b in itertools.combinations(combo, 2):
            acc += d2[a, b]
        total += math.sqrt(acc)
    return total


def surrogate_fitness_denominator(
    genome: np.ndarray, dist: np.ndarray, M: int
) -> float:
    """Sum of pairwise distances between O-RUs of different EDUs."""
    total = dist.sum() / 2.0
    within = 0.0
    for m in range(M):
        idx = np.flatnonzero(genome == m)
        if idx.size > 1:
            within += dist[np.ix_(idx, idx)].sum() / 2.0
    return total - within


def fitness(
    genome: np.ndarray,
    oru_distances: np.ndarray,
    num_edu: int,
    mode: str = "pairwise-surrogate",
) -> float:
    """Partition score: reciprocal of the cross-EDU spread (higher is better).

    A zero spread (co-located O-RUs) scores +inf.
    """
    genome = np.asarray(genome, dtype=int)
    if not is_balanced(genome, num_edu):
        raise ValueError("fitness requires a balanced partition")
    if mode == "exact":
        denom = exact_fitness_denominator(genome, oru_distances, num_edu)
    elif mode == "pairwise-surrogate":
        denom = surrogate_fitness_denominator(genome, oru_distances, num_edu)
    else:
        raise ValueError(f"unknown fitness mode {mode!r}")
    return math.inf if denom == 0.0 else 1.0 / denom


def _select_parents(
    pop: list[np.ndarray], scores: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    finite = np.isfinite(scores)
    if not finite.all():
        weights = np.where(finite, 0.0, 1.0)
    else:
        weights = scores - scores.min() if scores.min() < 0 else scores.copy()
    tot = weights.sum()
    probs = np.full(len(pop), 1.0 / len(pop)) if tot <= 0 else weights / tot
    i, j = rng.choice(len(pop), size=2, p=probs)
    return pop[i].copy(), pop[j].copy()


def _crossover(a: np.ndarray, b: np.ndarray, rate: float, rng: np.random.Generator):
    if rng.random() < rate and a.size > 1:
        x = int(rng.integers(1, a.size))
        a2 = np.concatenate([a[:x], b[x:]])
        b2 = np.concatenate([b[:x], a[x:]])
        return a2, b2
    return a.copy(), b.copy()


def _mutate(g: np.ndarray, M: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    if rate <= 0:
        return g
    hits = rng.random(g.size) < rate
    if hits.any():
        g = g.copy()
        g[hits] = rng.integers(0, M, size=int(hits.sum()))
    return g


@dataclass
class GaResult:
    partition: Partition
    history: np.ndarray  # (generations,) best fitness per generation


def ga_optimize(
    oru_distances: np.ndarray,
    num_edu: int,
    config: GaConfig | None = None,
    rng: np.random.Generator | None = None,
) -> GaResult:
    """Evolve a balanced O-RU partition maximizing the interleaving fitness.

    Parents are drawn with probability proportional to normalized fitness;
    children come from single-point crossover plus per-gene resampling and
    must satisfy the balance constraint. Invalid children are discarded and
    regenerated; after a bounded number of tries they are repaired by moving
    genes out of over-full groups, which keeps the operator usable at large
    L where exact-balance rejection almost never succeeds. Survivor
    selection merges parents and children and keeps the best, so the
    best-so-far fitness never decreases.
    """
    config = config or GaConfig()
    config.validate()
    rng = rng or np.random.default_rng()
    dist = np.asarray(oru_distances, dtype=float)
    L = dist.shape[0]
    M = num_edu
    if L < M:
        raise ValueError("cannot split fewer O-RUs than EDUs")

    def score(g: np.ndarray) -> float:
        return fitness(g, dist, M, config.fitness_mode)

    if M == 1:
        genome = np.zeros(L, dtype=int)
        part = Partition(genome, 1, fitness=score(genome))
        return GaResult(part, np.array([part.fitness]))

    n_p = config.population_size
    pop = [random_balanced_genome(L, M, rng) for _ in range(n_p)]
    scores = np.array([score(g) for g in pop])
    history = np.empty(config.generations)

    for gen in range(config.generations):
        children: list[np.ndarray] = []
        while len(children) < n_p:
            made = None
            for _ in range(_REJECTION_TRIES):
                pa, pb = _select_parents(pop, scores, rng)
                c1, c2 = _crossover(pa, pb, config.crossover_rate, rng)
                c1 = _mutate(c1, M, config.mutation_rate, rng)
                c2 = _mutate(c2, M, config.mutation_rate, rng)
                if is_balanced(c1, M) and is_balanced(c2, M):
                    made = (c1, c2)
                    break
            if made is None:
                made = (_repair(c1, M, rng), _repair(c2, M, rng))
            children.extend(made)
        children = children[:n_p]

        merged = pop + children
        merged_scores = np.concatenate([scores, [score(g) for g in children]])
        order = np.argsort(-merged_scores, kind="stable")[:n_p]
        pop = [merged[i] for i in order]
        scores = merged_scores[order]
        history[gen] = scores[0]

    best = Partition(pop[0], M, fitness=float(scores[0]))
    return GaResult(best, history)


def clustered_baseline(
    oru_positions: np.ndarray,
    num_edu: int,
    rng: np.random.Generator | None = None,
    restarts: int = 8,
    iterations: int = 30,
) -> Partition:
    """Balanced geographic clustering of O-RUs into EDUs.

    Lloyd iterations with an exactly balanced assignment step (Hungarian
    matching against capacity-replicated centroids); the best of several
    seeded restarts by within-group pairwise spread is returned.
    """
    pos = np.asarray(oru_positions, dtype=float)
    if pos.ndim != 2:
        raise ValueError("oru_positions must be (L, dim)")
    L = pos.shape[0]
    M = num_edu
    if L < M:
        raise ValueError("cannot split fewer O-RUs than EDUs")
    if M == 1:
        return Partition(np.zeros(L, dtype=int), 1)
    if M == L:
        return Partition(np.arange(L), M)
    rng = rng or np.random.default_rng(0)

    # Capacity slots: ceil for the first L%M groups, floor for the rest.
    base, extra = divmod(L, M)
    capacities = np.array([base + (1 if m < extra else 0) for m in range(M)])
    slot_group = np.repeat(np.arange(M), capacities)

    dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)

    def within_spread(genome: np.ndarray) -> float:
        tot = 0.0
        for m in range(M):
            idx = np.flatnonzero(genome == m)
            tot += dist[np.ix_(idx, idx)].sum() / 2.0
        return tot

    best_genome, best_cost = None, math.inf
    for _ in range(restarts):
        centroids = pos[rng.choice(L, size=M, replace=False)]
        genome = np.zeros(L, dtype=int)
        for _ in range(iterations):
            cost = np.linalg.norm(pos[:, None, :] - centroids[None, :, :], axis=-1)
            row, col = linear_sum_assignment(cost[:, slot_group])
            new_genome = np.empty(L, dtype=int)
            new_genome[row] = slot_group[col]
            if np.array_equal(new_genome, genome):
                break
            genome = new_genome
            for m in range(M):
                centroids[m] = pos[genome == m].mean(axis=0)
        c = within_spread(genome)
        if c < best_cost:
            best_genome, best_cost = genome, c
    return Partition(best_genome, M)
