"""Command-line routes for the ``fps`` tool."""
import argparse
import logging
import sys
from typing import Callable, Dict, List, Optional

from src.config import settings
from src.controllers.experiment_controller import ExperimentController
from src.utils.config_parser import load_config
from src.utils.errors import FPSError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Bad command line."""

    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fps", description="Frequency-perturbation domain adaptation pipeline")
    parser.add_argument("--config", help="Experiment configuration file")
    parser.add_argument("--seed", type=int, help="Override the command's seed")
    commands = parser.add_subparsers(dest="command", parser_class=_Parser)

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("--config", dest="sub_config", help="Experiment configuration file")
        sub.add_argument("--seed", dest="sub_seed", type=int, help="Override the command's seed")
        return sub

    sub = command("gen-data", "Write synthetic and shifted real phantom datasets")
    sub.add_argument("--out", required=True)

    sub = command("distmap", "Build the offline k-space distance map")
    sub.add_argument("--syn", required=True)
    sub.add_argument("--real", required=True)
    sub.add_argument("--out", required=True)

    sub = command("perturb", "Write WDFP-perturbed copies of a dataset")
    sub.add_argument("--data", required=True)
    sub.add_argument("--dmap", required=True)
    sub.add_argument("--out", required=True)

    sub = command("train", "Run mean-teacher training")
    sub.add_argument("--data", required=True, help="Directory holding synthetic/ and real/")
    sub.add_argument("--dmap", help="Distance map (required in fps mode)")
    sub.add_argument("--out", required=True, help="Checkpoint directory")
    sub.add_argument("--iters", type=int, help="Override train.total_iterations")
    sub.add_argument("--resume", help="Checkpoint to resume from")

    sub = command("eval", "Evaluate a checkpoint on a dataset")
    sub.add_argument("--checkpoint", required=True)
    sub.add_argument("--data", required=True)
    sub.add_argument("--out", required=True)

    sub = command("classify", "Lesion classification from ROI histogram features")
    sub.add_argument("--data", required=True)
    sub.add_argument("--checkpoint")
    sub.add_argument("--out", required=True)

    sub = command("dti-fit", "Fit diffusion tensors and write FA/MD/AD/RD")
    sub.add_argument("--dwi")
    sub.add_argument("--scheme")
    sub.add_argument("--synth", action="store_true", help="Synthesize a seeded DWI stack first")
    sub.add_argument("--out", required=True)

    sub = command("report", "Collate metric tables into one summary")
    sub.add_argument("--inputs", required=True)
    sub.add_argument("--out", required=True)
    return parser


def _run_gen_data(ctl: ExperimentController, args) -> None:
    ctl.gen_data(args.out, seed=args.seed)


def _run_distmap(ctl: ExperimentController, args) -> None:
    ctl.distmap(args.syn, args.real, args.out)


def _run_perturb(ctl: ExperimentController, args) -> None:
    ctl.perturb(args.data, args.dmap, args.out, seed=args.seed)


def _run_train(ctl: ExperimentController, args) -> None:
    if args.iters is not None and args.iters < 0:
        raise UsageError("fps train: --iters must be >= 0")
    ctl.train(args.data, args.out, dmap_path=args.dmap, iters=args.iters, resume=args.resume, seed=args.seed)


def _run_eval(ctl: ExperimentController, args) -> None:
    ctl.evaluate(args.checkpoint, args.data, args.out)


def _run_classify(ctl: ExperimentController, args) -> None:
    ctl.classify(args.data, args.out, checkpoint=args.checkpoint)


def _run_dti_fit(ctl: ExperimentController, args) -> None:
    if not args.synth and (args.dwi is None or args.scheme is None):
        raise UsageError("fps dti-fit: give --dwi and --scheme, or --synth")
    seed = args.seed if args.seed is not None else settings.fps_default_seed
    ctl.dti_fit(args.out, dwi=args.dwi, scheme_path=args.scheme, synth=args.synth, seed=seed)


def _run_report(ctl: ExperimentController, args) -> None:
    ctl.report(args.inputs, args.out)


COMMANDS: Dict[str, Callable[[ExperimentController, argparse.Namespace], None]] = {
    "gen-data": _run_gen_data,
    "distmap": _run_distmap,
    "perturb": _run_perturb,
    "train": _run_train,
    "eval": _run_eval,
    "classify": _run_classify,
    "dti-fit": _run_dti_fit,
    "report": _run_report,
}


def dispatch(argv: Optional[List[str]] = None) -> int:
    """
    Parse ``argv`` and run one command.

    Returns:
        0 on success, 1 on a pipeline error, 2 on a usage error
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("fps: a command is required")
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(str(e), file=sys.stderr)
        return EXIT_USAGE

    args.config = args.sub_config or args.config
    args.seed = args.sub_seed if args.sub_seed is not None else args.seed
    logger.info(f"Running '{args.command}'")
    try:
        controller = ExperimentController(load_config(args.config), dtype=settings.fps_dtype)
        COMMANDS[args.command](controller, args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except FPSError as e:
        logger.error(f"'{args.command}' failed: {e}")
        print(f"error\t{type(e).__name__}\t{e}", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as e:
        logger.error(f"Unhandled exception in '{args.command}': {e}", exc_info=True)
        print(f"error\t{type(e).__name__}\t{e}", file=sys.stderr)
        return EXIT_FAILURE

    logger.info(f"'{args.command}' finished")
    return EXIT_OK
