"""Experiment harness.

Subcommands:

* ``train``     -- one evolution run; writes run.csv, summary.csv,
                   best_model.sexp, and best_model.dot to --out.
* ``predict``   -- classify one image with a saved model.
* ``gradcheck`` -- randomized finite-difference verification of the
                   analytic gradients; exit 0 iff the worst relative
                   error stays below 1e-4.
* ``synth``     -- write the synthetic bright-quadrant dataset to disk.
* ``matrix``    -- run a grid of (mode, shuffle seed, evolution seed)
                   cells and aggregate the results.

Exit codes: 0 success, 1 failure/threshold breach, 2 usage error.
Set MEMEGP_LOG=debug|info|warning for logging verbosity and
MEMEGP_BACKEND=numba|numpy to pick the kernel backend.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import SplitSpec, load_dir, load_pgm, save_dir, split, synth_bright_quadrant
from .errors import ConfigError, ImageTooSmallError, MemegpError
from .evolution import EvolutionConfig, Mode, RunLog, run
from .gp_program import Kind, deserialize, evaluate, generate, iter_nodes, serialize, to_dot
from .grad_engine import finite_difference_safe, forward, grad_check
from .local_search import LocalSearchConfig
from .util import parse_int_list, sigmoid

_log = logging.getLogger("memegp.cli")

GRADCHECK_THRESHOLD = 1e-4
# node kinds with their own derivative rule, tracked for campaign coverage
_DERIV_KINDS = (
    Kind.ADD, Kind.SUB, Kind.MUL, Kind.DIV,
    Kind.AGG_MIN, Kind.AGG_MAX, Kind.AGG_MEAN, Kind.AGG_STD,
    Kind.POOL, Kind.CONVOLVE,
)


# ---------------------------------------------------------------------------
# shared run machinery


@dataclass
class RunParams:
    """Everything one training run needs; picklable for matrix workers."""

    mode: str = "base"
    pop: int = 200
    gens: int = 50
    seed: int = 0
    shuffle_seed: int = 0
    train_frac: float = 0.5
    dataset: str | None = None
    synth: bool = False
    synth_n: int = 50
    synth_side: int = 16
    synth_noise: float = 0.05
    epochs: int = 10
    lr: float = 0.5
    batch_frac: float = 0.10
    top_k: int = 25
    ls_period: int = 10
    final_epochs: int = 100
    exact_agg_grad: bool = False
    elitism: bool = True
    out_dir: str = "."


def _load_split(params: RunParams):
    if params.synth:
        ds = synth_bright_quadrant(
            params.synth_n,
            params.synth_side,
            params.synth_noise,
            np.random.default_rng(params.shuffle_seed),
        )
    else:
        ds = load_dir(params.dataset)
    return split(ds, SplitSpec(params.shuffle_seed, params.train_frac))


def _evolution_config(params: RunParams) -> EvolutionConfig:
    return EvolutionConfig(
        population_size=params.pop,
        generations=params.gens,
        mode=Mode(params.mode),
        seed=params.seed,
        elitism=params.elitism,
        local_search=LocalSearchConfig(
            epochs=params.epochs,
            learning_rate=params.lr,
            batch_fraction=params.batch_frac,
            top_k=params.top_k,
            period=params.ls_period,
            final_epochs=params.final_epochs,
            exact_agg_grad=params.exact_agg_grad,
        ),
    )


def _fmt_float(x: float) -> str:
    return repr(float(x))


def _write_run_csv(path: Path, log: RunLog):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["generation", "best_fitness", "mean_fitness", "mean_size", "elapsed_ms"])
        for rec in log.records:
            writer.writerow(
                [
                    rec.generation,
                    _fmt_float(rec.best_fitness),
                    _fmt_float(rec.mean_fitness),
                    _fmt_float(rec.mean_size),
                    _fmt_float(rec.elapsed_ms),
                ]
            )


SUMMARY_FIELDS = [
    "mode", "seed", "shuffle_seed", "train_acc", "test_acc",
    "train_time_m", "test_time_ms", "generations_run", "early_stop",
    "final_polish_epochs",
]


def _summary_row(params: RunParams, log: RunLog) -> dict:
    return {
        "mode": params.mode,
        "seed": params.seed,
        "shuffle_seed": params.shuffle_seed,
        "train_acc": _fmt_float(log.train_accuracy),
        "test_acc": _fmt_float(log.test_accuracy),
        "train_time_m": _fmt_float(log.train_time_m),
        "test_time_ms": _fmt_float(log.test_time_ms),
        "generations_run": log.generations_run,
        "early_stop": int(log.early_stop),
        "final_polish_epochs": "" if log.final_polish_epochs is None else log.final_polish_epochs,
    }


def _write_summary_csv(path: Path, row: dict):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerow(row)


def execute_run(params: RunParams) -> dict:
    """Train once and write all artifacts into ``params.out_dir``."""
    train_ds, test_ds = _load_split(params)
    config = _evolution_config(params)
    best, log = run(config, train_ds.items, test_ds.items)
    out = Path(params.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_run_csv(out / "run.csv", log)
    row = _summary_row(params, log)
    _write_summary_csv(out / "summary.csv", row)
    (out / "best_model.sexp").write_text(serialize(best.tree) + "\n")
    (out / "best_model.dot").write_text(to_dot(best.tree))
    return row


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    params = _params_from_args(args)
    row = execute_run(params)
    print(
        f"mode={row['mode']} train_acc={row['train_acc']} test_acc={row['test_acc']}"
        f" generations={row['generations_run']} early_stop={row['early_stop']}"
    )
    print(f"artifacts written to {params.out_dir}")
    return 0


def cmd_predict(args) -> int:
    tree = deserialize(Path(args.model).read_text())
    img, _ = load_pgm(args.image)
    score = sigmoid(evaluate(tree, img))
    label = 0 if score > 0.5 else 1
    print(f"class {label} score {score:.6f}")
    return 0


def _sample_gradcheck_case(rng, max_resamples: int = 200):
    """Random (tree, image, target) with at least one convolve node and a
    finite-difference-friendly landscape. Returns the case plus how many
    candidates were skipped (no-conv trees or near-kink samples)."""
    skipped = 0
    last = None
    for _ in range(max_resamples):
        tree = generate(rng, 2, 6)
        img = rng.random((16, 16))
        target = int(rng.integers(2))
        if not tree.conv_nodes():
            skipped += 1
            continue
        try:
            tape = forward(tree, img)
        except ImageTooSmallError:  # over-stacked conv/pool chain
            skipped += 1
            continue
        last = (tree, img, target)
        if finite_difference_safe(tape):
            return tree, img, target, skipped
        skipped += 1
    # Give up resampling and let the check speak for itself.
    return (*last, skipped)


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    offset = 1e-2 if args.break_grad else 0.0
    worst = 0.0
    kinds_seen: set[Kind] = set()
    for trial in range(args.trials):
        tree, img, target, skipped = _sample_gradcheck_case(rng)
        kinds_seen |= {n.kind for n in iter_nodes(tree.root)}
        err = grad_check(tree, img, target, h=1e-4, analytic_offset=offset)
        worst = max(worst, err)
        note = f" (resampled {skipped})" if skipped else ""
        print(f"trial {trial:03d} max_rel_err {err:.3e}{note}")
    covered = sorted(k.value for k in kinds_seen if k in _DERIV_KINDS)
    print(f"derivative rules exercised: {', '.join(covered)}")
    print(f"overall max_rel_err {worst:.3e} (threshold {GRADCHECK_THRESHOLD:.0e})")
    if worst < GRADCHECK_THRESHOLD:
        print("gradcheck PASS")
        return 0
    print("gradcheck FAIL")
    return 1


def cmd_synth(args) -> int:
    ds = synth_bright_quadrant(args.n, args.side, args.noise, np.random.default_rng(args.seed))
    save_dir(ds, args.out)
    print(f"wrote {len(ds.items)} images ({args.n} per class) to {args.out}")
    return 0


def _matrix_cell(payload: dict) -> dict:
    params = RunParams(**payload)
    return execute_run(params)


def _aggregate_rows(rows: list[dict], mode: str) -> dict:
    def stats(field: str) -> str:
        values = np.array([float(r[field]) for r in rows])
        spread = values.std(ddof=1) if len(values) > 1 else 0.0
        return f"{values.mean():.6f}±{spread:.6f}"

    return {
        "kind": "aggregate",
        "mode": mode,
        "shuffle_seed": "",
        "evo_seed": "",
        "train_acc": stats("train_acc"),
        "test_acc": stats("test_acc"),
        "train_time_m": stats("train_time_m"),
        "test_time_ms": stats("test_time_ms"),
        "status": f"n={len(rows)}",
    }


MATRIX_FIELDS = [
    "kind", "mode", "shuffle_seed", "evo_seed", "train_acc", "test_acc",
    "train_time_m", "test_time_ms", "status",
]


def cmd_matrix(args) -> int:
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for mode in modes:
        if mode not in ("base", "ls", "lse"):
            raise ConfigError(f"unknown mode {mode!r}")
    shuffle_seeds = parse_int_list(args.shuffle_seeds)
    evo_seeds = parse_int_list(args.evo_seeds)
    if not modes or not shuffle_seeds or not evo_seeds:
        raise ConfigError("modes and seed lists must be non-empty")
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)

    cells = []
    for mode in modes:
        for ss in shuffle_seeds:
            for es in evo_seeds:
                params = _params_from_args(args, mode=mode, seed=es, shuffle_seed=ss)
                params.out_dir = str(out_root / f"{mode}_s{ss}_e{es}")
                cells.append(params)

    pending: list[tuple[int, RunParams]] = []
    results: dict[int, dict | Exception] = {}
    for i, params in enumerate(cells):
        summary_path = Path(params.out_dir) / "summary.csv"
        if args.resume and summary_path.exists():
            with open(summary_path, newline="") as fh:
                results[i] = next(csv.DictReader(fh))
            _log.info("resume: skipping completed cell %s", params.out_dir)
        else:
            pending.append((i, params))

    if args.jobs > 1 and pending:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = {
                pool.submit(_matrix_cell, params.__dict__): i for i, params in pending
            }
            for fut, i in futures.items():
                try:
                    results[i] = fut.result()
                except Exception as exc:  # record the failure, keep the matrix going
                    results[i] = exc
    else:
        for i, params in pending:
            try:
                results[i] = _matrix_cell(params.__dict__)
            except Exception as exc:
                results[i] = exc

    rows: list[dict] = []
    failures = 0
    for i, params in enumerate(cells):
        result = results[i]
        if isinstance(result, Exception):
            failures += 1
            _log.error("cell %s failed: %s", params.out_dir, result)
            rows.append(
                {
                    "kind": "run", "mode": params.mode,
                    "shuffle_seed": params.shuffle_seed, "evo_seed": params.seed,
                    "train_acc": "", "test_acc": "", "train_time_m": "",
                    "test_time_ms": "", "status": f"error: {result}",
                }
            )
        else:
            rows.append(
                {
                    "kind": "run", "mode": params.mode,
                    "shuffle_seed": params.shuffle_seed, "evo_seed": params.seed,
                    "train_acc": result["train_acc"], "test_acc": result["test_acc"],
                    "train_time_m": result["train_time_m"],
                    "test_time_ms": result["test_time_ms"], "status": "ok",
                }
            )
    for mode in modes:
        ok_rows = [
            r for r in rows if r["kind"] == "run" and r["mode"] == mode and r["status"] == "ok"
        ]
        if ok_rows:
            rows.append(_aggregate_rows(ok_rows, mode))

    with open(out_root / "matrix.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MATRIX_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    print(f"matrix complete: {len(cells)} cells, {failures} failures -> {out_root / 'matrix.csv'}")
    return 0 if failures == 0 else 1


# ---------------------------------------------------------------------------
# argument plumbing


def _add_data_flags(p: argparse.ArgumentParser):
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--dataset", help="directory with two class subdirectories of .pgm images")
    group.add_argument("--synth", action="store_true", help="use the generated bright-quadrant dataset")
    p.add_argument("--synth-n", type=int, default=50, help="synthetic images per class")
    p.add_argument("--synth-side", type=int, default=16, help="synthetic image side length")
    p.add_argument("--synth-noise", type=float, default=0.05, help="synthetic pixel noise amplitude")
    p.add_argument("--shuffle-seed", type=int, default=0, help="dataset shuffle/split seed")
    p.add_argument("--train-frac", type=float, default=0.5, help="training fraction of the split")


def _add_evolution_flags(p: argparse.ArgumentParser):
    p.add_argument("--pop", type=int, default=200, help="population size")
    p.add_argument("--gens", type=int, default=50, help="number of generations")
    p.add_argument("--seed", type=int, default=0, help="evolution seed")
    p.add_argument(
        "--paper-params",
        action="store_true",
        help="use the full-scale configuration (population 1024, 50 generations)",
    )
    p.add_argument("--no-elitism", action="store_true", help="disable best-individual copy-forward")
    p.add_argument("--epochs", type=int, default=10, help="SGD epochs per local-search pass")
    p.add_argument("--lr", type=float, default=0.5, help="SGD learning rate")
    p.add_argument("--batch-frac", type=float, default=0.10, help="SGD batch size as a fraction of the training set")
    p.add_argument("--top-k", type=int, default=25, help="individuals tuned per local-search pass")
    p.add_argument("--ls-period", type=int, default=10, help="generations between local-search passes")
    p.add_argument("--final-epochs", type=int, default=100, help="SGD epochs for the LSE final polish")
    p.add_argument("--exact-agg-grad", action="store_true",
                   help="train with the exact aggregation Jacobian instead of the broadcast pass-through")


def _params_from_args(args, mode: str | None = None, seed: int | None = None,
                      shuffle_seed: int | None = None) -> RunParams:
    pop, gens = args.pop, args.gens
    if args.paper_params:
        pop, gens = 1024, 50
    return RunParams(
        mode=mode if mode is not None else args.mode,
        pop=pop,
        gens=gens,
        seed=seed if seed is not None else args.seed,
        shuffle_seed=shuffle_seed if shuffle_seed is not None else args.shuffle_seed,
        train_frac=args.train_frac,
        dataset=args.dataset,
        synth=args.synth,
        synth_n=args.synth_n,
        synth_side=args.synth_side,
        synth_noise=args.synth_noise,
        epochs=args.epochs,
        lr=args.lr,
        batch_frac=args.batch_frac,
        top_k=args.top_k,
        ls_period=args.ls_period,
        final_epochs=args.final_epochs,
        exact_agg_grad=args.exact_agg_grad,
        elitism=not args.no_elitism,
        out_dir=args.out,
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memegp",
        description="Evolve convolution program trees for binary image classification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one evolution and save the best model")
    _add_data_flags(p_train)
    _add_evolution_flags(p_train)
    p_train.add_argument("--mode", choices=["base", "ls", "lse"], default="base")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.set_defaults(func=cmd_train)

    p_predict = sub.add_parser("predict", help="classify one image with a saved model")
    p_predict.add_argument("--model", required=True, help="path to a .sexp model file")
    p_predict.add_argument("--image", required=True, help="path to a .pgm image")
    p_predict.set_defaults(func=cmd_predict)

    p_grad = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    p_grad.add_argument("--trials", type=int, default=50)
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--break-grad", action="store_true",
                        help="inject a gradient fault (harness self-test; must exit 1)")
    p_grad.set_defaults(func=cmd_gradcheck)

    p_synth = sub.add_parser("synth", help="write the synthetic dataset to disk")
    p_synth.add_argument("--n", type=int, default=50, help="images per class")
    p_synth.add_argument("--side", type=int, default=16)
    p_synth.add_argument("--noise", type=float, default=0.05)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=cmd_synth)

    p_matrix = sub.add_parser("matrix", help="run a seed/mode grid and aggregate results")
    _add_data_flags(p_matrix)
    _add_evolution_flags(p_matrix)
    p_matrix.add_argument("--modes", default="base", help="comma-separated subset of base,ls,lse")
    p_matrix.add_argument("--shuffle-seeds", default="0", help="comma-separated shuffle seeds")
    p_matrix.add_argument("--evo-seeds", default="0", help="comma-separated evolution seeds")
    p_matrix.add_argument("--out", required=True, help="output root directory")
    p_matrix.add_argument("--jobs", type=int, default=1, help="concurrent cells")
    p_matrix.add_argument("--resume", action="store_true", help="skip cells with a summary.csv")
    p_matrix.set_defaults(func=cmd_matrix)

    # matrix reuses the shared data flags but drives its own seed lists
    p_matrix.set_defaults(mode="base")
    return parser


def _configure_logging():
    level_name = os.environ.get("MEMEGP_LOG", "warning").upper()
    level = getattr(logging, level_name, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (MemegpError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
