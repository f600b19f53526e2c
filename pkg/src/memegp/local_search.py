"""Mini-batch SGD on convolution filter coefficients, and the policies for
applying it during evolution (periodic elite tuning, final polish).

Learning is Lamarckian: tuned coefficients are written into the genotype
returned by ``sgd``, so offspring inherit them. Tree structure is never
touched -- only the 3x3 filter arrays change.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ImageTooSmallError
from .gp_program import Individual, ProgramTree, sigmoid_target
from .grad_engine import backward, forward
from .util import round_half_up

_log = logging.getLogger("memegp.local_search")


@dataclass(frozen=True)
class LocalSearchConfig:
    epochs: int = 10
    learning_rate: float = 0.5
    batch_fraction: float = 0.10
    top_k: int = 25
    period: int = 10
    final_epochs: int = 100
    exact_agg_grad: bool = False

    def validate(self):
        if self.epochs < 1 or self.final_epochs < 1:
            raise ConfigError("epochs and final_epochs must be positive")
        if self.learning_rate < 0:
            raise ConfigError("learning rate must be non-negative")
        if not (0.0 < self.batch_fraction <= 1.0):
            raise ConfigError("batch fraction must lie in (0, 1]")
        if self.top_k < 0:
            raise ConfigError("top_k must be non-negative")
        if self.period < 1:
            raise ConfigError("period must be positive")


def batch_indices(n: int, batch_fraction: float, rng) -> list[np.ndarray]:
    """Shuffle 0..n-1 and cut into batches of size max(1, round(frac * n)).

    The last short batch is kept, so every example trains once per epoch.
    """
    size = max(1, round_half_up(batch_fraction * n))
    order = rng.permutation(n)
    return [order[i : i + size] for i in range(0, n, size)]


def sgd(tree: ProgramTree, train, cfg: LocalSearchConfig, rng) -> ProgramTree:
    """Tune the tree's filter coefficients by mini-batch gradient descent.

    Per epoch the training set is reshuffled and partitioned; each batch's
    mean gradient updates every filter as theta <- theta - lr * grad. The
    input tree is untouched; a new tree is returned. Trees without a
    convolve node come back as-is, and a tree that cannot evaluate the
    training images (stacked operators shrank one below the minimum) is
    also returned untuned.
    """
    if not tree.conv_nodes():
        return tree
    tuned = tree.copy()
    convs = tuned.conv_nodes()
    filters = [c.children[1].payload for c in convs]
    n = len(train)
    for _ in range(cfg.epochs):
        for batch in batch_indices(n, cfg.batch_fraction, rng):
            sums = [np.zeros((3, 3)) for _ in convs]
            try:
                for idx in batch:
                    img, label = train[idx]
                    tape = forward(tuned, img)
                    grads = backward(tape, sigmoid_target(label), cfg.exact_agg_grad)
                    for acc, conv in zip(sums, convs):
                        acc += grads[conv]
            except ImageTooSmallError:
                _log.debug("sgd: tree cannot evaluate the training set, left untuned")
                return tree
            scale = cfg.learning_rate / len(batch)
            for filt, acc in zip(filters, sums):
                filt -= scale * acc
    return tuned


def should_run_ls(generation: int, cfg: LocalSearchConfig) -> bool:
    """True on generation 0 and every ``period``-th generation after it."""
    return generation % cfg.period == 0


def apply_ls_to_elite(pop, train, cfg: LocalSearchConfig, rng):
    """Replace the top-k fittest individuals with their SGD-tuned versions.

    Ranking ties break toward smaller trees, then earlier position. Tuned
    individuals get their fitness re-evaluated immediately so selection in
    the same generation sees post-tuning fitness. Everything else, including
    population size and order, is untouched.
    """
    from .evolution import Population, fitness  # late import: evolution builds on this module

    individuals = list(pop.individuals)
    ranked = sorted(
        range(len(individuals)),
        key=lambda i: (-individuals[i].fitness, individuals[i].tree.node_count, i),
    )
    for i in ranked[: min(cfg.top_k, len(individuals))]:
        tuned = sgd(individuals[i].tree, train, cfg, rng)
        if tuned is individuals[i].tree:
            continue
        individuals[i] = Individual(tuned, fitness(tuned, train))
    return Population(individuals, pop.generation_index)


def final_polish(best: Individual, train, cfg: LocalSearchConfig, rng) -> Individual:
    """Extended SGD pass (``final_epochs``) on the run's top performer."""
    from .evolution import fitness

    tuned = sgd(best.tree, train, replace(cfg, epochs=cfg.final_epochs), rng)
    if tuned is best.tree:
        return best
    return Individual(tuned, fitness(tuned, train))
