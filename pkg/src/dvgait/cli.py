"""Command-line surface for the dense-view gait pipeline.

Exit codes: 0 success, 1 assertion failure (oracle or replay mismatch),
2 configuration error, 3 missing prerequisite artifact.

`DVGAIT_THREADS` caps BLAS worker threads; it must take effect before numpy
loads, so the heavy imports happen inside main() after the cap is applied.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_CONFIG = 2
EXIT_MISSING = 3

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)


def _apply_thread_cap():
    threads = os.environ.get("DVGAIT_THREADS")
    if threads:
        for var in _THREAD_VARS:
            os.environ[var] = threads


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dvgait",
        description="Dense-view GEI synthesis and cross-view recognition pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, needs_config=True):
        p = sub.add_parser(name, help=help_text, description=help_text)
        if needs_config:
            p.add_argument("-c", "--config", required=True, help="path to the run config JSON")
            p.add_argument("--out", default=None, help="override the config's output directory")
        return p

    add("gen-data", "render the procedural walker corpus")
    add("train-gan", "train the three-network GAN on the training split")
    add("synth", "decode the dense view set from the trained generator")
    p = add("train-cnn", "train the feature CNN")
    p.add_argument(
        "--set",
        dest="which",
        choices=("og", "dv"),
        required=True,
        help="og: originals only; dv: originals plus synthesized views",
    )
    p = add("evaluate", "rank-1 cross-view matrices, aggregates, and run deltas")
    p.add_argument(
        "--run",
        dest="runs",
        action="append",
        choices=("og", "dv"),
        help="run to evaluate; pass twice for a delta report (first minus second)",
    )
    p.add_argument(
        "--oracle",
        action="store_true",
        help="also run the brute-force nearest-neighbor check and fail on mismatch",
    )
    p = add("morph-demo", "pixel morph vs latent synthesis vs ground truth grid")
    p.add_argument("--low", type=float, default=0.0, help="first endpoint view (degrees)")
    p.add_argument("--high", type=float, default=90.0, help="second endpoint view (degrees)")
    p.add_argument("--subjects", type=int, default=2, help="number of held-out subjects to render")
    p = add("replay-paper", "recompute the published aggregate row from the embedded matrix", needs_config=False)
    p.add_argument("--out", default=None, help="also write the recomputed row as CSV")
    return parser


def _load_config(args):
    from .config import load_config

    cfg = load_config(args.config, out_dir_override=args.out)
    from .config import write_effective_config
    from .pipeline import write_run_manifest

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_effective_config(cfg, cfg.out_dir / "effective_config.json")
    write_run_manifest(cfg)
    return cfg


def cmd_gen_data(args):
    from .pipeline import stage_gen_data

    stage_gen_data(_load_config(args))
    return EXIT_OK


def cmd_train_gan(args):
    from .pipeline import stage_train_gan

    stage_train_gan(_load_config(args))
    return EXIT_OK


def cmd_synth(args):
    from .pipeline import stage_synth

    stage_synth(_load_config(args))
    return EXIT_OK


def cmd_train_cnn(args):
    from .pipeline import stage_train_cnn

    stage_train_cnn(_load_config(args), args.which)
    return EXIT_OK


def cmd_evaluate(args):
    from .pipeline import stage_evaluate

    runs = args.runs or ["dv", "og"]
    if len(runs) > 2:
        print("evaluate: pass --run at most twice", file=sys.stderr)
        return EXIT_CONFIG
    stage_evaluate(_load_config(args), runs, oracle=args.oracle)
    return EXIT_OK


def cmd_morph_demo(args):
    from .pipeline import stage_morph_demo

    stage_morph_demo(_load_config(args), low=args.low, high=args.high, subjects=args.subjects)
    return EXIT_OK


def cmd_replay_paper(args):
    from .published_results import CROSSVIEW_VIEWS, OVERALL_MEAN, PER_PROBE_MEANS, replay

    result = replay()
    views = ",".join(f"{v:g}" for v in CROSSVIEW_VIEWS)
    computed = ",".join(f"{m:.1f}" for m in result.computed_per_view)
    published = ",".join(f"{m:.1f}" for m in PER_PROBE_MEANS)
    lines = [
        f"probe view,{views},mean",
        f"recomputed,{computed},{result.computed_mean:.1f}",
        f"published,{published},{OVERALL_MEAN:.1f}",
    ]
    print("\n".join(lines))
    if args.out:
        from pathlib import Path

        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text("\n".join(lines) + "\n")
    if not result.ok:
        print(
            f"replay-paper: recomputed aggregates deviate beyond {result.tolerance}: "
            f"per-view {result.max_per_view_error:.4f}, mean {result.mean_error:.4f}",
            file=sys.stderr,
        )
        return EXIT_ASSERTION
    print(
        f"replay-paper: ok (max per-view error {result.max_per_view_error:.4f}, "
        f"mean error {result.mean_error:.4f})"
    )
    return EXIT_OK


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-gan": cmd_train_gan,
    "synth": cmd_synth,
    "train-cnn": cmd_train_cnn,
    "evaluate": cmd_evaluate,
    "morph-demo": cmd_morph_demo,
    "replay-paper": cmd_replay_paper,
}


def main(argv=None):
    _apply_thread_cap()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)

    from .config import ConfigError
    from .pipeline import MissingArtifact, OracleMismatch

    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifact as exc:
        print(f"missing prerequisite: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except OracleMismatch as exc:
        print(f"oracle mismatch: {exc}", file=sys.stderr)
        return EXIT_ASSERTION


if __name__ == "__main__":
    sys.exit(main())
