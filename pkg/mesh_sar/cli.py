"""Command-line entry point: ``mesh-sar <command> [options]``.

Commands run in pipeline order: gen-data, hierarchy, train-vae, encode-latents
(latent mode only), train-sar, sample, eval, bench, plot. Every command needs a
seed, either from ``--config`` or from ``--seed``.
"""

import argparse
import sys
from typing import Optional, Sequence

from mesh_sar.api import data, evaluation, training
from mesh_sar.api.utils import DEFAULT_LOG_DIR
from mesh_sar.config.run_config import RunConfig, apply_overrides, default_config, load_config, parse_set_option
from mesh_sar.exceptions import MeshSarError, ValidationError
from mesh_sar.numcore import set_default_dtype

COMMANDS = {
    "gen-data": lambda config, args: data.gen_data(config, args.log_dir),
    "hierarchy": lambda config, args: data.build_hierarchies(config, args.log_dir),
    "train-vae": lambda config, args: training.train_vae(config, args.resume, args.log_dir),
    "encode-latents": lambda config, args: training.encode_latents(config, args.log_dir),
    "train-sar": lambda config, args: training.train_sar(config, args.resume, args.log_dir),
    "sample": lambda config, args: evaluation.sample(config, args.log_dir),
    "eval": lambda config, args: evaluation.evaluate(config, args.log_dir),
    "bench": lambda config, args: evaluation.bench(config, parse_schedules(args.schedules), args.log_dir),
    "plot": lambda config, args: evaluation.plot(
        config,
        args.input,
        args.x,
        args.y.split(",") if args.y else None,
        args.kind,
        args.output,
        args.log_dir,
    ),
}


def parse_schedules(option: Optional[str]) -> Optional[list[tuple[int, ...]]]:
    """``"10,10,10;10,6,1"`` -> ``[(10, 10, 10), (10, 6, 1)]``."""
    if not option:
        return None
    try:
        return [tuple(int(s) for s in part.split(",")) for part in option.split(";") if part.strip()]
    except ValueError as e:
        raise ValidationError(f"--schedules expects a;b;c lists of integers, got {option!r}") from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mesh-sar", description="Scale-autoregressive flow matching on meshes")
    parser.add_argument("command", choices=list(COMMANDS), help="Pipeline step to run")
    parser.add_argument("--config", type=str, default=None, help="JSON run config (bare names use $MESH_SAR_CONFIG_DIR)")
    parser.add_argument("--seed", type=int, default=None, help="Run seed; required without --config")
    parser.add_argument("--steps", type=str, default=None, help="Euler steps per scale, coarse to fine, e.g. 10,6,1")
    parser.add_argument("--scales", type=int, default=None, help="Number of scales K")
    parser.add_argument("--threads", type=int, default=None, help="Worker threads for sampling and evaluation")
    parser.add_argument("--precision", choices=["float64", "float32"], default=None, help="Tensor precision")
    parser.add_argument("--no-latent", action="store_true", help="Run SAR on physical fields without the VAE")
    parser.add_argument("--nodewise-sampler", action="store_true", help="Sampler without attention (ablation)")
    parser.add_argument("--no-cond-encoder", action="store_true", help="Condition encoder without blocks (ablation)")
    parser.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="Config override")
    parser.add_argument("--resume", action="store_true", help="Continue training from the saved checkpoint")
    parser.add_argument("--output-dir", type=str, default=None, help="Run directory for artifacts")
    parser.add_argument("--log-dir", type=str, default=DEFAULT_LOG_DIR, help="Directory for log files")
    parser.add_argument("--schedules", type=str, default=None, help="bench: schedules as 10,10,10;10,6,1")
    parser.add_argument("--input", type=str, default=None, help="plot: metric CSV file")
    parser.add_argument("--x", type=str, default=None, help="plot: column for the horizontal axis")
    parser.add_argument("--y", type=str, default=None, help="plot: comma-separated columns to draw")
    parser.add_argument("--kind", choices=["line", "bar"], default="line", help="plot: chart kind")
    parser.add_argument("--output", type=str, default=None, help="plot: output SVG path")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file (or defaults around ``--seed``) with the command-line overrides applied."""
    if args.config:
        config = load_config(args.config)
    elif args.seed is not None:
        config = default_config(args.seed)
    else:
        raise ValidationError("A seed is required: pass --config or --seed.")

    overrides = dict(parse_set_option(option) for option in args.set)
    overrides["seed"] = args.seed
    overrides["output_dir"] = args.output_dir
    overrides["precision"] = args.precision
    overrides["sampling.threads"] = args.threads
    if args.scales is not None:
        overrides["model.num_scales"] = args.scales
        if args.steps is None:
            overrides["sampling.steps_per_scale"] = [config.sampling.steps_per_scale[0]] * args.scales
    overrides["sampling.steps_per_scale"] = args.steps or overrides.get("sampling.steps_per_scale")
    if args.no_latent:
        overrides["model.latent_mode"] = False
    if args.nodewise_sampler:
        overrides["model.nodewise_sampler"] = True
    if args.no_cond_encoder:
        overrides["model.cond_encoder"] = False
    return apply_overrides(config, overrides)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Runs one command and returns its exit code (0 ok, 2 config, 3 prerequisite, 4 numerical)."""
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        set_default_dtype(config.precision)
        result = COMMANDS[args.command](config, args)
    except MeshSarError as e:
        print(f"{args.command}: {e}", file=sys.stderr)
        return e.exit_code

    print(result["message"])
    print(f"Log: {result['log_file']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
