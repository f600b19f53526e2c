"""Generational evolution: tournament selection, type-preserving crossover
and mutation, accuracy fitness, and the three run modes (evolution only,
periodic elite tuning, and elite tuning plus a final polish of the best).
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ImageTooSmallError
from .gp_program import (
    DEPTH_MAX,
    DEPTH_MIN,
    INIT_DEPTH_MAX,
    INIT_DEPTH_MIN,
    AGG_KINDS,
    Individual,
    Node,
    ProgramTree,
    VType,
    classify,
    generate,
    iter_nodes,
    random_subtree,
    validate,
)
from .local_search import LocalSearchConfig, apply_ls_to_elite, final_polish, should_run_ls

_log = logging.getLogger("memegp.evolution")

GENETIC_OP_RETRIES = 10


class Mode(enum.Enum):
    BASE = "base"
    LS = "ls"
    LSE = "lse"


@dataclass
class EvolutionConfig:
    population_size: int = 200
    generations: int = 50
    crossover_rate: float = 0.75
    mutation_rate: float = 0.20
    reproduction_rate: float = 0.05
    tournament_size: int = 7
    depth_min: int = DEPTH_MIN
    depth_max: int = DEPTH_MAX
    init_depth_min: int = INIT_DEPTH_MIN
    init_depth_max: int = INIT_DEPTH_MAX
    mode: Mode = Mode.BASE
    seed: int = 0
    elitism: bool = True
    local_search: LocalSearchConfig = field(default_factory=LocalSearchConfig)

    def validate(self):
        if self.population_size < 1:
            raise ConfigError("population size must be positive")
        if self.generations < 0:
            raise ConfigError("generations must be non-negative")
        rates = self.crossover_rate + self.mutation_rate + self.reproduction_rate
        if abs(rates - 1.0) > 1e-9:
            raise ConfigError(f"operator rates must sum to 1, got {rates}")
        if min(self.crossover_rate, self.mutation_rate, self.reproduction_rate) < 0:
            raise ConfigError("operator rates must be non-negative")
        if not (1 <= self.tournament_size <= self.population_size):
            raise ConfigError("tournament size must lie in [1, population size]")
        if not (2 <= self.depth_min <= self.depth_max):
            raise ConfigError("need 2 <= depth_min <= depth_max")
        if not (self.depth_min <= self.init_depth_min <= self.init_depth_max <= self.depth_max):
            raise ConfigError("init depth range must lie inside the depth bounds")
        self.local_search.validate()
        if self.mode is not Mode.BASE and self.local_search.top_k > self.population_size:
            raise ConfigError("top_k cannot exceed the population size")


@dataclass
class Population:
    individuals: list[Individual]
    generation_index: int = 0


@dataclass
class GenerationRecord:
    generation: int
    best_fitness: float
    mean_fitness: float
    mean_size: float
    ls_applied: bool
    elapsed_ms: float


@dataclass
class RunLog:
    records: list[GenerationRecord]
    train_accuracy: float = 0.0
    test_accuracy: float = 0.0
    train_time_m: float = 0.0
    test_time_ms: float = 0.0
    early_stop: bool = False
    generations_run: int = 0
    final_polish_epochs: int | None = None


def fitness(tree: ProgramTree, data) -> float:
    """Classification accuracy (TP+TN)/(TP+TN+FP+FN) on a labeled set.

    A tree that fails to evaluate any image (stacked convolution/pooling
    shrank it below an operator's minimum) scores 0.
    """
    correct = 0
    try:
        for img, label in data:
            correct += classify(tree, img) == label
    except ImageTooSmallError:
        return 0.0
    return correct / len(data)


def tournament(pop: Population, k: int, rng) -> Individual:
    """Best of k individuals sampled uniformly with replacement.

    Fitness ties break toward smaller trees, then the earliest sample.
    """
    individuals = pop.individuals
    best = None
    for _ in range(k):
        cand = individuals[rng.integers(len(individuals))]
        if (
            best is None
            or cand.fitness > best.fitness
            or (cand.fitness == best.fitness and cand.tree.node_count < best.tree.node_count)
        ):
            best = cand
    return best


def _copy_payload(payload):
    return payload.copy() if isinstance(payload, np.ndarray) else payload


def _subtree_size(node: Node) -> int:
    return 1 + sum(_subtree_size(c) for c in node.children)


def _replace_by_index(node: Node, target: int, replacement: Node) -> Node:
    """Fresh copy of ``node`` with its pre-order ``target``-th node replaced
    by a copy of ``replacement``."""
    if target == 0:
        return replacement.copy()
    children = []
    offset = 1
    for child in node.children:
        size = _subtree_size(child)
        if offset <= target < offset + size:
            children.append(_replace_by_index(child, target - offset, replacement))
        else:
            children.append(child.copy())
        offset += size
    return Node(node.kind, tuple(children), _copy_payload(node.payload))


def crossover(a: ProgramTree, b: ProgramTree, rng, depth_max: int = DEPTH_MAX):
    """Swap subtrees rooted at nodes with matching output types.

    The donor node in ``a`` is chosen uniformly over all nodes, then a node
    of the same output type is chosen uniformly in ``b``. Offspring that
    break typing, the mandatory-aggregation rule, or the depth bounds are
    rejected; after 10 failed attempts the parents come back unchanged
    (same objects, so callers can detect the fallback).
    """
    nodes_a = a.nodes()
    nodes_b = b.nodes()
    for _ in range(GENETIC_OP_RETRIES):
        ia = int(rng.integers(len(nodes_a)))
        want = nodes_a[ia].out_type
        compatible = [j for j, n in enumerate(nodes_b) if n.out_type is want]
        if not compatible:
            continue
        ib = compatible[int(rng.integers(len(compatible)))]
        child_a = ProgramTree(_replace_by_index(a.root, ia, nodes_b[ib]))
        child_b = ProgramTree(_replace_by_index(b.root, ib, nodes_a[ia]))
        if validate(child_a, depth_max=depth_max) and validate(child_b, depth_max=depth_max):
            return child_a, child_b
    return a, b


def _node_depths(root: Node) -> list[int]:
    out = []

    def rec(node, depth):
        out.append(depth)
        for child in node.children:
            rec(child, depth + 1)

    rec(root, 1)
    return out


def _agg_count(node: Node) -> int:
    return sum(1 for n in iter_nodes(node) if n.kind in AGG_KINDS)


def mutate(a: ProgramTree, rng, depth_max: int = DEPTH_MAX) -> ProgramTree:
    """Replace a uniformly chosen node's subtree with a fresh random one of
    the same output type, within the overall depth cap.

    Follows the same retry-or-return-parent rule as crossover. When the
    chosen subtree holds the tree's only aggregation nodes, the replacement
    is forced to contain one, so mutation almost never needs a retry.
    """
    nodes = a.nodes()
    depths = _node_depths(a.root)
    total_aggs = _agg_count(a.root)
    for _ in range(GENETIC_OP_RETRIES):
        i = int(rng.integers(len(nodes)))
        node = nodes[i]
        budget = depth_max - depths[i] + 1
        need_agg = node.out_type is VType.DOUBLE and _agg_count(node) == total_aggs
        lo = 2 if need_agg else 1
        if budget < lo:
            continue
        target = int(rng.integers(lo, budget + 1))
        replacement = random_subtree(rng, node.out_type, target, full=False, need_agg=need_agg)
        child = ProgramTree(_replace_by_index(a.root, i, replacement))
        if validate(child, depth_max=depth_max):
            return child
    return a


def choose_operator(rng, config: EvolutionConfig) -> str:
    """Draw one breeding operator according to the configured rates."""
    r = rng.random()
    if r < config.crossover_rate:
        return "crossover"
    if r < config.crossover_rate + config.mutation_rate:
        return "mutation"
    return "reproduction"


def _best(individuals: list[Individual]) -> Individual:
    best = individuals[0]
    for cand in individuals[1:]:
        if cand.fitness > best.fitness or (
            cand.fitness == best.fitness and cand.tree.node_count < best.tree.node_count
        ):
            best = cand
    return best


def _evaluate_population(pop: Population, train):
    for ind in pop.individuals:
        if ind.fitness is None:
            ind.fitness = fitness(ind.tree, train)


def _breed(pop: Population, config: EvolutionConfig, rng) -> Population:
    n = config.population_size
    next_individuals: list[Individual] = []
    if config.elitism:
        elite = _best(pop.individuals)
        next_individuals.append(Individual(elite.tree, elite.fitness))
    while len(next_individuals) < n:
        op = choose_operator(rng, config)
        if op == "crossover":
            p1 = tournament(pop, config.tournament_size, rng)
            p2 = tournament(pop, config.tournament_size, rng)
            c1, c2 = crossover(p1.tree, p2.tree, rng, config.depth_max)
            next_individuals.append(Individual(c1, p1.fitness if c1 is p1.tree else None))
            if len(next_individuals) < n:
                next_individuals.append(Individual(c2, p2.fitness if c2 is p2.tree else None))
        elif op == "mutation":
            p = tournament(pop, config.tournament_size, rng)
            c = mutate(p.tree, rng, config.depth_max)
            next_individuals.append(Individual(c, p.fitness if c is p.tree else None))
        else:
            p = tournament(pop, config.tournament_size, rng)
            next_individuals.append(Individual(p.tree, p.fitness))
    return Population(next_individuals, pop.generation_index + 1)


def run(config: EvolutionConfig, train, test, rng=None) -> tuple[Individual, RunLog]:
    """Run one full evolution on a labeled train/test pair.

    Per generation: evaluate fitness on the training set; in LS/LSE modes
    apply SGD to the elite on scheduled generations (its re-evaluated
    fitness feeds the same generation's breeding); log stats; stop early at
    perfect training fitness; otherwise breed the next generation. In LSE
    mode the best individual then receives an extended final polish.
    Returns the best-of-run individual and the run log.
    """
    config.validate()
    if len(train) == 0 or len(test) == 0:
        raise ConfigError("train and test sets must be non-empty")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    ls_cfg = config.local_search
    started = time.perf_counter()

    pop = Population(
        [
            Individual(generate(rng, config.init_depth_min, config.init_depth_max))
            for _ in range(config.population_size)
        ]
    )
    _evaluate_population(pop, train)

    records: list[GenerationRecord] = []
    best_so_far: Individual | None = None
    early_stop = False
    mark = started

    for gen in range(config.generations):
        ls_now = config.mode is not Mode.BASE and should_run_ls(gen, ls_cfg)
        if ls_now:
            _log.info("generation %d: local search on the %d fittest", gen, ls_cfg.top_k)
            pop = apply_ls_to_elite(pop, train, ls_cfg, rng)
        gen_best = _best(pop.individuals)
        if best_so_far is None or gen_best.fitness > best_so_far.fitness:
            best_so_far = Individual(gen_best.tree, gen_best.fitness)
        fits = [ind.fitness for ind in pop.individuals]
        sizes = [ind.tree.node_count for ind in pop.individuals]
        now = time.perf_counter()
        records.append(
            GenerationRecord(
                gen,
                gen_best.fitness,
                float(np.mean(fits)),
                float(np.mean(sizes)),
                ls_now,
                (now - mark) * 1000.0,
            )
        )
        mark = now
        _log.debug("generation %d: best %.4f mean %.4f", gen, gen_best.fitness, np.mean(fits))
        if gen_best.fitness == 1.0:
            early_stop = True
            _log.info("generation %d: perfect training fitness, stopping early", gen)
            break
        if gen == config.generations - 1:
            break
        pop = _breed(pop, config, rng)
        _evaluate_population(pop, train)

    best = best_so_far if best_so_far is not None else _best(pop.individuals)
    final_polish_epochs = None
    if config.mode is Mode.LSE:
        _log.info("final polish: %d epochs on the best individual", ls_cfg.final_epochs)
        polished = final_polish(best, train, ls_cfg, rng)
        final_polish_epochs = ls_cfg.final_epochs
        # best-of-run: the polished candidate must earn its place on training
        # fitness (ties go to the fine-tuned coefficients)
        if polished.fitness >= best.fitness:
            best = polished
    train_time_m = (time.perf_counter() - started) / 60.0

    test_started = time.perf_counter()
    test_accuracy = fitness(best.tree, test)
    test_time_ms = (time.perf_counter() - test_started) / len(test) * 1000.0

    log = RunLog(
        records=records,
        train_accuracy=best.fitness,
        test_accuracy=test_accuracy,
        train_time_m=train_time_m,
        test_time_ms=test_time_ms,
        early_stop=early_stop,
        generations_run=len(records),
        final_polish_epochs=final_polish_epochs,
    )
    return best, log
