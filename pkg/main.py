"""
DPU Navigation Benchmark - Command Line Interface

Entry point for the three experiment commands:

    python main.py train --config terrestrial --seed 0 --out runs/t0
    python main.py eval  --checkpoint runs/t0/checkpoint.bin --scenario terrestrial-eval --episodes 100 --seed 0
    python main.py sweep --config terrestrial --etas 2,4,8 --seeds 0,1,2 --workers 3 --out runs/sweep

--config accepts a bundled preset name (configs/*.json) or a path.
"""

import argparse
import sys
from pathlib import Path

from layer0_nncore import CheckpointError, ConfigError, ShapeError
from layer3_envs import AERIAL, MODES, EnvError
from layer4_harness import (
    ExperimentConfig,
    TrainingDivergedError,
    evaluate,
    format_table,
    sweep,
    train,
)


def print_banner(command: str):
    """Print the welcome banner."""
    print("\n" + "=" * 50)
    print(f"=== DPU NAVIGATION BENCHMARK: {command.upper()} ===")
    print("=" * 50)


def print_separator():
    """Print a visual separator."""
    print("-" * 50)


def parse_int_list(text: str) -> list:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got '{text}'")
    if not values:
        raise argparse.ArgumentTypeError("list must not be empty")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="TD3 with delayed policy updates on LIDAR navigation tasks")
    parser.add_argument("--quiet", action="store_true", help="suppress progress bars and status lines")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one agent")
    p_train.add_argument("--config", required=True, help="preset name or config file")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--eta", type=int, default=None, help="override td3.eta")
    p_train.add_argument("--episodes", type=int, default=None, help="override run.train_episodes")
    p_train.add_argument("--out", required=True, help="output directory")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint greedily")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--scenario", required=True, help="scenario name or file")
    p_eval.add_argument("--episodes", type=int, default=100)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--mode", choices=MODES, default=None, help="defaults to the env the checkpoint was trained on")
    p_eval.add_argument("--out", default=None, help="write metrics.csv and trajectories here")

    p_sweep = sub.add_parser("sweep", help="train and evaluate every (eta, seed) cell")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--etas", type=parse_int_list, default=[2, 4, 8])
    p_sweep.add_argument("--seeds", type=parse_int_list, default=[0])
    p_sweep.add_argument("--workers", type=int, default=None)
    p_sweep.add_argument("--out", default=None)
    return parser


def cmd_train(args) -> int:
    config = ExperimentConfig.from_file(args.config)
    overrides = {"seed": args.seed, "train_episodes": args.episodes}
    config = config.with_overrides(**{k: v for k, v in overrides.items() if v is not None})
    if args.eta is not None:
        config = config.with_overrides(td3={"eta": args.eta})

    result = train(config, out_dir=args.out, verbose=not args.quiet)
    successes = sum(1 for r in result.records if r.success)
    print_separator()
    print(f"✅ Trained {len(result.records)} episodes ({result.env_steps} env steps)")
    print(f"   - Arrivals: {successes}")
    print(f"   - Critic updates: {result.agent.critic_update_count}")
    print(f"   - Actor updates: {result.agent.actor_update_count}")
    print(f"   - Checkpoint: {result.checkpoint_path}")
    return 0


def cmd_eval(args) -> int:
    result = evaluate(
        Path(args.checkpoint),
        args.scenario,
        episodes=args.episodes,
        seed=args.seed,
        mode=args.mode,
        out_dir=args.out,
        verbose=not args.quiet,
    )
    print_separator()
    row = {"scenario": result.scenario.name, **result.report.as_row(include_time=result.mode == AERIAL)}
    print(format_table([row]))
    return 0


def cmd_sweep(args) -> int:
    template = ExperimentConfig.from_file(args.config)
    report = sweep(
        template,
        etas=args.etas,
        seeds=args.seeds,
        out_dir=args.out,
        workers=args.workers,
        verbose=not args.quiet,
    )
    print_separator()
    print(format_table(report.rows))
    print()
    print(format_table(report.generalization_rows))
    if report.failed_cells:
        print(f"\n⚠️  {len(report.failed_cells)} cell(s) did not complete:")
        for cell in report.failed_cells:
            print(f"   - {cell.cell_id}: {cell.error_message}")
        return 1
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if not args.quiet:
        print_banner(args.command)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, CheckpointError, ShapeError) as e:
        print(f"\n❌ {type(e).__name__}: {e}\n")
        return 2
    except TrainingDivergedError as e:
        print(f"\n❌ {e}\n")
        return 3
    except EnvError as e:
        print(f"\n❌ Environment error: {e}\n")
        return 3
    except KeyboardInterrupt:
        print("\n\n👋 Interrupted.\n")
        return 130


if __name__ == "__main__":
    sys.exit(main())
