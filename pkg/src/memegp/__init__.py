"""Memetic binary image classification: strongly-typed convolution program
trees evolved by genetic programming, with filter coefficients fine-tuned by
mini-batch gradient descent."""

__version__ = "0.1.0"

from .dataset import LabeledDataset, SplitSpec, load_dir, split, synth_bright_quadrant
from .evolution import EvolutionConfig, Mode, Population, RunLog, fitness, run
from .gp_program import (
    Individual,
    ProgramTree,
    classify,
    deserialize,
    evaluate,
    generate,
    serialize,
    sigmoid_target,
    to_dot,
)
from .grad_engine import backward, ce_loss, forward, grad_check
from .image_ops import Stat, WindowShape, WindowSpec, aggregate, convolve, pool, realize_window
from .local_search import LocalSearchConfig, apply_ls_to_elite, final_polish, sgd, should_run_ls

__all__ = [
    "EvolutionConfig",
    "Individual",
    "LabeledDataset",
    "LocalSearchConfig",
    "Mode",
    "Population",
    "ProgramTree",
    "RunLog",
    "SplitSpec",
    "Stat",
    "WindowShape",
    "WindowSpec",
    "aggregate",
    "apply_ls_to_elite",
    "backward",
    "ce_loss",
    "classify",
    "convolve",
    "deserialize",
    "evaluate",
    "final_polish",
    "fitness",
    "forward",
    "generate",
    "grad_check",
    "load_dir",
    "pool",
    "realize_window",
    "run",
    "serialize",
    "sgd",
    "should_run_ls",
    "sigmoid_target",
    "split",
    "synth_bright_quadrant",
    "to_dot",
]
