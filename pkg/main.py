import argparse
import logging
import os
import sys
from dataclasses import replace

import yaml
from dotenv import load_dotenv

from modules.core_model import Cue, read_records, write_records
from modules.errors import ConfigError, DifficultyError, FitError, ValidationError
from modules.evaluation import derive_seed, fit_model, format_report_table, report_json, run_experiment
from modules.exports import (
    ground_truth_grid,
    heatmap_grid,
    select_tree,
    tree_diagram,
    write_heatmap,
    write_tree_diagram,
)
from modules.logging_config import setup_logging
from modules.model_store import load_model, model_kind, save_model
from modules.parquet import ParquetHandler
from modules.settings import DEFAULT_CONFIG_PATH, load_config, parse_settings
from modules.synth import generate_cohort

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def load_settings(args):
    """Parse the --config file (or the shipped default) into Settings."""
    path = args.config or DEFAULT_CONFIG_PATH
    if args.config is None and not os.path.exists(path):
        return parse_settings({})
    return parse_settings(load_config(path))


def run_generate(args):
    """Generate a synthetic cohort and write it as a reach-log CSV."""
    settings = load_settings(args)
    spec = settings.cohort
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    dataset = generate_cohort(spec)
    write_records(dataset, args.out)
    print(f"Wrote {len(dataset)} reach records to {args.out}")


def run_fit(args):
    """Fit one configured model for one participant and save it as JSON."""
    settings = load_settings(args)
    data = read_records(args.data)
    participant = data.participant(args.participant)
    if len(participant) == 0:
        raise ValidationError(f"participant {args.participant!r} not found in {args.data}")
    if any(r.condition != 1 for r in participant):
        raise ValidationError(f"participant {args.participant!r} has rows with condition != 1")
    control = data.control()
    if len(control) == 0:
        raise FitError(f"{args.data} has no control rows (column 'condition' = 0)")

    spec = settings.model_spec(args.model)
    seed = args.seed if args.seed is not None else settings.evaluation.base_seed
    model = fit_model(spec, participant.concat(control), derive_seed(seed, 0), n_jobs=settings.evaluation.n_jobs)
    save_model(model, args.out, {"participant_id": args.participant, "model": spec.name, "seed": seed})

    kind = model_kind(model)
    if kind == "causal_forest":
        print(f"Fitted {spec.name}: mean leaf count {model.mean_leaf_count():.2f} over {len(model.trees)} trees")
    elif kind == "causal_tree":
        print(f"Fitted {spec.name}: {len(model.leaves())} leaves")
    else:
        print(f"Fitted {spec.name} ({model.params.variant.value} T-learner)")
    print(f"Model written to {args.out}")


def run_evaluate(args):
    """Run the multi-seed experiment and write the JSON report and text table."""
    settings = load_settings(args)
    config = settings.evaluation
    if args.seed is not None:
        config = replace(config, base_seed=args.seed, seeds=())
    root, ext = os.path.splitext(args.out)
    if ext.lower() == ".txt":
        raise ValidationError(f"--out {args.out} would be overwritten by the table written to {root}.txt")
    cohort = read_records(args.data)
    report = run_experiment(config, cohort)

    table = format_report_table(report)
    with open(args.out, "w", encoding="utf-8") as file:
        file.write(report_json(report))
    with open(root + ".txt", "w", encoding="utf-8") as file:
        file.write(table)
    if args.cells_parquet:
        ParquetHandler().run(report, args.cells_parquet)
    print(table, end="")
    print(f"Report written to {args.out} and {root}.txt")


def run_export_heatmap(args):
    """Write a heatmap CSV from a saved model or from ball-average ground truth."""
    settings = load_settings(args)
    resolution = tuple(args.resolution) if args.resolution else settings.heatmap.resolution
    if args.data:
        data = read_records(args.data)
        participant = data.participant(args.participant or "")
        if len(participant) == 0:
            raise ValidationError("--data requires --participant naming a participant in the file")
        frame = ground_truth_grid(participant, data.control(), settings.workspace, resolution,
                                  settings.evaluation.ball_radius)
    elif args.model:
        cue = Cue.parse(args.cue) if args.cue else settings.heatmap.cue
        frame = heatmap_grid(load_model(args.model), settings.workspace, resolution, cue)
    else:
        raise ValidationError("export-heatmap needs --model or --data")
    write_heatmap(frame, args.out)
    print(f"Wrote {len(frame)} heatmap rows to {args.out}")


def run_export_tree(args):
    """Write one causal tree of a saved model as a depth-limited DOT diagram."""
    model = load_model(args.model)
    tree = select_tree(model, args.tree_index)
    dot = tree_diagram(tree, args.max_depth)
    write_tree_diagram(dot, args.out)
    print(f"Wrote tree {args.tree_index} (depth <= {args.max_depth}) to {args.out}")


def build_parser():
    """Command-line parser with one subcommand per operation."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON config (default: config/config.yaml)")
    common.add_argument("--seed", type=int, help="override the seed taken from the config")
    common.add_argument("--out", required=True, help="output path")
    common.add_argument("--log-level", help="logging level (default: INFO)")

    parser = argparse.ArgumentParser(description="Personalized functional task difficulty with honest causal forests.")
    commands = parser.add_subparsers(dest="command", required=True)

    generate = commands.add_parser("generate", parents=[common], help="write a synthetic reach-log CSV")
    generate.set_defaults(handler=run_generate)

    fit = commands.add_parser("fit", parents=[common], help="fit one model for one participant")
    fit.add_argument("--data", required=True, help="reach-log CSV")
    fit.add_argument("--participant", required=True, help="post-stroke participant id")
    fit.add_argument("--model", help="configured model name (default: first configured model)")
    fit.set_defaults(handler=run_fit)

    evaluate = commands.add_parser("evaluate", parents=[common], help="run the multi-seed experiment")
    evaluate.add_argument("--data", required=True, help="reach-log CSV")
    evaluate.add_argument("--cells-parquet", help="also write the per-cell table to this Parquet file")
    evaluate.set_defaults(handler=run_evaluate)

    heatmap = commands.add_parser("export-heatmap", parents=[common], help="write x,y,z,tau_hat over a lattice")
    heatmap.add_argument("--model", help="model JSON written by fit")
    heatmap.add_argument("--data", help="reach-log CSV for a ball-average ground-truth map")
    heatmap.add_argument("--participant", help="participant for --data")
    heatmap.add_argument("--resolution", type=int, nargs=3, metavar=("N_R", "N_THETA", "N_Z"))
    heatmap.add_argument("--cue", choices=[c.value for c in Cue], help="cue held fixed (default: move)")
    heatmap.set_defaults(handler=run_export_heatmap)

    tree = commands.add_parser("export-tree", parents=[common], help="write a depth-limited DOT diagram")
    tree.add_argument("--model", required=True, help="model JSON written by fit")
    tree.add_argument("--tree-index", type=int, default=0)
    tree.add_argument("--max-depth", type=int, default=3)
    tree.set_defaults(handler=run_export_tree)
    return parser


def main(argv=None):
    """Parse arguments, run one command, and map failures to exit codes."""
    load_dotenv()
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        args.handler(args)
        return EXIT_OK
    except (ConfigError, ValidationError, yaml.YAMLError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DifficultyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
