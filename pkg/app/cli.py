"""
Command-line entry point: gen-data, train, eval, bench, simulate, sweep.

    python -m app.cli train --data data/dataset.bin --variant local --epochs 20 --seed 0 --out data/ckpt

`--config FILE` reads `key=value` lines (flag names without the leading
dashes); explicit flags override the file. Exit codes: 0 success, 1 usage
error (including option values the config models reject), 2 runtime failure.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

from pydantic import ValidationError

from app import __version__
from app.config import configure_logging
from app.exceptions import LoccError
from app.models.api import BenchRequest, EvalRequest, GenDataRequest, SimulateRequest, SweepRequest, TrainRequest
from app.services import pipeline


logger = logging.getLogger(__name__)

GEN_FIELDS = ("pairs", "seed", "pose_bound", "test_bound", "delta_sigma", "penetrate_probability", "max_attempts",
              "min_positive_fraction", "max_draw_rounds")
TRAIN_FIELDS = ("learning_rate", "batch_size", "alpha", "epochs", "seed", "patience", "validation_fraction", "variant")
LOCC_FIELDS = ("points", "grid", "point_features", "cell_features", "conv_channels", "global_dim",
               "predictor_width", "global_pooling")
SIM_FIELDS = ("detector", "dt", "substeps", "stiffness", "damping", "shake_amplitude", "shake_frequency",
              "sd_samples", "threads")
REQUIRED = {
    "train": ("data",),
    "eval": ("checkpoint", "data"),
    "bench": ("known",),
}


class CliParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with status 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _ints(text: str) -> List[int]:
    try:
        return [int(part) for part in str(text).split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def _words(text: str) -> List[str]:
    return [part.strip() for part in str(text).split(",") if part.strip()]


def read_config(path: Path | str) -> Dict[str, str]:
    """
    Parse a key=value file. Blank lines and '#' comments are skipped; keys
    may use dashes or underscores.

    Raises:
        ValueError: a line without '='
    """
    values: Dict[str, str] = {}
    for number, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{number}: expected key=value, got '{line}'")
        key, value = line.split("=", 1)
        values[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return values


def _locc_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--points", type=int, help="surface points per object (K)")
    sub.add_argument("--grid", type=int, help="cells per axis (M)")
    sub.add_argument("--point-features", type=int, help="point MLP width (H)")
    sub.add_argument("--cell-features", type=int, help="features per cell (F)")
    sub.add_argument("--conv-channels", type=int)
    sub.add_argument("--global-dim", type=int)
    sub.add_argument("--predictor-width", type=int)
    sub.add_argument("--global-pooling", choices=("average", "max"))


def build_parser() -> CliParser:
    common = CliParser(add_help=False)
    common.add_argument("--config", type=Path, help="key=value file; flags take precedence")
    common.add_argument("--objects", type=Path, dest="objects_dir", help="directory of .obj files (default: bundled set)")
    common.add_argument("--log-level", default=None)

    parser = CliParser(prog="locc", description="Learned and geometric collision detection toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)
    parser.subcommands = {}

    def command(name: str, help: str) -> CliParser:
        sub = subparsers.add_parser(name, parents=[common], help=help)
        parser.subcommands[name] = sub
        return sub

    sub = command("gen-data", "synthesise a labelled pair dataset")
    sub.add_argument("--pairs", type=int)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--pose-bound", type=float)
    sub.add_argument("--test-bound", type=float)
    sub.add_argument("--delta-sigma", type=float)
    sub.add_argument("--penetrate-probability", type=float)
    sub.add_argument("--max-attempts", type=int)
    sub.add_argument("--min-positive-fraction", type=float)
    sub.add_argument("--max-draw-rounds", type=int)
    sub.add_argument("--holdout", type=int, help="objects held out as the unknown set")
    sub.add_argument("--test-pairs", type=int, help="pairs per test set")
    sub.add_argument("--threads", type=int)
    sub.add_argument("--export-objects", type=Path, help="also write the object set as .obj + .hulls")
    sub.add_argument("--out", type=Path)

    sub = command("train", "train a collision network")
    sub.add_argument("--data", type=Path)
    sub.add_argument("--variant", choices=("local", "global"))
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--batch-size", type=int)
    sub.add_argument("--lr", type=float, dest="learning_rate")
    sub.add_argument("--alpha", type=float)
    sub.add_argument("--patience", type=int)
    sub.add_argument("--validation-fraction", type=float)
    _locc_args(sub)
    sub.add_argument("--out", type=Path)

    sub = command("eval", "evaluate a checkpoint on labelled pairs")
    sub.add_argument("--checkpoint", type=Path)
    sub.add_argument("--data", type=Path)
    sub.add_argument("--threshold", type=float)
    sub.add_argument("--out", type=Path)

    sub = command("bench", "accuracy-speed sweep over the detectors")
    sub.add_argument("--known", type=Path)
    sub.add_argument("--unknown", type=Path)
    sub.add_argument("--checkpoint", type=Path)
    sub.add_argument("--methods", type=_words)
    sub.add_argument("--gjk-iterations", type=_ints)
    sub.add_argument("--gjk-parts", type=_ints)
    sub.add_argument("--gjk-triangles", type=_ints)
    sub.add_argument("--iscd-points", type=_ints)
    sub.add_argument("--batch-size", type=int)
    sub.add_argument("--warmups", type=int)
    sub.add_argument("--repeats", type=int)
    sub.add_argument("--threads", type=int)
    sub.add_argument("--out", type=Path)

    sub = command("simulate", "run the bowl-shaking scenario")
    sub.add_argument("--detector", choices=("locc", "gjk", "exact"))
    sub.add_argument("--decomposition", action="store_true", help="gjk uses decompositions instead of one hull")
    sub.add_argument("--envs", type=int)
    sub.add_argument("--duration", type=float)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--checkpoint", type=Path)
    sub.add_argument("--dt", type=float)
    sub.add_argument("--substeps", type=int)
    sub.add_argument("--stiffness", type=float)
    sub.add_argument("--damping", type=float)
    sub.add_argument("--shake-amplitude", type=float)
    sub.add_argument("--shake-frequency", type=float)
    sub.add_argument("--sd-samples", type=int)
    sub.add_argument("--threads", type=int)
    sub.add_argument("--scaling", type=_ints, help="env counts for the wall-time curve")
    sub.add_argument("--out", type=Path)

    sub = command("sweep", "data-efficiency table for both variants")
    sub.add_argument("--counts", type=_ints)
    sub.add_argument("--pairs", type=int)
    sub.add_argument("--seeds", type=_ints)
    sub.add_argument("--holdout", type=int)
    sub.add_argument("--test-pairs", type=int)
    sub.add_argument("--epochs", type=int)
    _locc_args(sub)
    sub.add_argument("--out", type=Path)
    return parser


def _pick(args: argparse.Namespace, names: Sequence[str]) -> Dict[str, Any]:
    return {name: getattr(args, name) for name in names if getattr(args, name, None) is not None}


def parse(parser: CliParser, argv: Optional[Sequence[str]]) -> argparse.Namespace:
    """Parse argv, folding a --config file in underneath the explicit flags."""
    args = parser.parse_args(argv)
    sub = parser.subcommands[args.command]
    if args.config is not None:
        try:
            values = read_config(args.config)
        except (OSError, ValueError) as e:
            sub.error(str(e))
        actions = {}
        for action in sub._actions:
            actions[action.dest] = action
            for option in action.option_strings:
                actions[option.lstrip("-").replace("-", "_")] = action
        values.pop("config", None)
        unknown = sorted(set(values) - set(actions))
        if unknown:
            sub.error(f"unknown config keys: {', '.join(unknown)}")
        defaults = {}
        for key, value in values.items():
            action = actions[key]
            if isinstance(action, argparse._StoreTrueAction):
                value = value.lower() in ("1", "true", "yes", "on")
            defaults[action.dest] = value
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    for name in REQUIRED.get(args.command, ()):
        if getattr(args, name) is None:
            sub.error(f"--{name.replace('_', '-')} is required")
    return args


def _gen_data(args) -> Dict[str, Any]:
    return pipeline.run_gen_data(GenDataRequest(
        gen=_pick(args, GEN_FIELDS),
        **_pick(args, ("out", "objects_dir", "holdout", "test_pairs", "threads", "export_objects")),
    ))


def _train(args) -> Dict[str, Any]:
    return pipeline.run_train(TrainRequest(
        train=_pick(args, TRAIN_FIELDS),
        locc=_pick(args, LOCC_FIELDS),
        **_pick(args, ("data", "out", "objects_dir")),
    ))


def _eval(args) -> Dict[str, Any]:
    return pipeline.run_eval(EvalRequest(**_pick(args, ("checkpoint", "data", "threshold", "out", "objects_dir"))))


def _bench(args) -> Dict[str, Any]:
    return pipeline.run_bench(BenchRequest(**_pick(args, (
        "known", "unknown", "checkpoint", "methods", "gjk_iterations", "gjk_parts", "gjk_triangles", "iscd_points",
        "batch_size", "warmups", "repeats", "threads", "out", "objects_dir",
    ))))


def _simulate(args) -> Dict[str, Any]:
    sim = _pick(args, SIM_FIELDS)
    if args.decomposition:
        sim["gjk_hull"] = False
    return pipeline.run_simulate(SimulateRequest(
        sim=sim,
        **_pick(args, ("envs", "duration", "seed", "checkpoint", "out", "objects_dir", "scaling")),
    ))


def _sweep(args) -> Dict[str, Any]:
    return pipeline.run_sweep(SweepRequest(
        train=_pick(args, ("epochs",)),
        locc=_pick(args, LOCC_FIELDS),
        **_pick(args, ("counts", "pairs", "seeds", "holdout", "test_pairs", "out", "objects_dir")),
    ))


COMMANDS: Dict[str, Callable[[argparse.Namespace], Dict[str, Any]]] = {
    "gen-data": _gen_data,
    "train": _train,
    "eval": _eval,
    "bench": _bench,
    "simulate": _simulate,
    "sweep": _sweep,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parse(parser, argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else (0 if e.code is None else 1)
    configure_logging(args.log_level)
    try:
        summary = COMMANDS[args.command](args)
    except ValidationError as e:
        parser.subcommands[args.command].print_usage(sys.stderr)
        print(f"{parser.prog} {args.command}: error: invalid option values\n{e}", file=sys.stderr)
        return 1
    except (LoccError, ValueError, KeyError, OSError) as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        return 2
    print(json.dumps(summary, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
