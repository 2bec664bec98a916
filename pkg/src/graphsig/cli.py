"""Command-line front end.

Subcommands:
  generate       train the synthetic hyperparameter grid into a corpus directory
  pipeline       corpus -> graphs -> features -> signatures -> CV report
  report         aggregator trajectories, weight ranking, group means
  inspect-graph  partition sizes / edge counts of one stored checkpoint

Experiments are described by a JSON config file; any key can be overridden on
the command line with ``--set key=value`` (values parsed as JSON when
possible, else kept as strings).
"""

from __future__ import annotations

import argparse
import json
import sys

from . import pipeline as pl


def _parse_overrides(pairs):
    overrides = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise pl.PipelineError(f"override {pair!r} is not key=value")
        key, raw = pair.split("=", 1)
        try:
            overrides[key] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key] = raw
    return overrides


def _load_config(args) -> pl.ExperimentConfig:
    overrides = _parse_overrides(getattr(args, "set", None))
    if args.config is None:
        if "corpus" not in overrides:
            raise pl.PipelineError("no --config given and no corpus override set")
        return pl.config_from_dict(overrides)
    return pl.load_config(args.config, overrides)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_generate(args) -> int:
    config = _load_config(args)
    done = {"n": 0}

    def progress(record):
        done["n"] += 1
        status = record.get("error") or (
            f"acc={record['final_accuracy']:.3f} stop={record['early_stop_epoch']}")
        _log(f"[{done['n']}] {record['run_id']}: {status}")

    manifest = pl.generate_corpus(config, progress=progress if args.verbose else None)
    ok = [r for r in manifest["runs"] if "error" not in r]
    accs = [r["final_accuracy"] for r in ok]
    _log(f"corpus written to {config.corpus}: {len(ok)}/{len(manifest['runs'])} runs, "
         f"accuracy range {min(accs):.3f}..{max(accs):.3f}")
    return 0


def cmd_pipeline(args) -> int:
    config = _load_config(args)
    report = pl.run_pipeline(config, log=_log if args.verbose else None)
    print(json.dumps({"mean_metrics": report.mean_metrics,
                      "budget_curve": report.budget_curve}, indent=2, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    config = _load_config(args)
    pl.run_report(config)
    _log(f"report tables written to {config.output}")
    return 0


def cmd_inspect_graph(args) -> int:
    info = pl.inspect_graph(args.run, args.epoch, args.representation, norm=args.norm)
    print(json.dumps(info, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphsig", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", help="JSON experiment config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (JSON value); repeatable")
        p.add_argument("--verbose", action="store_true", help="progress to stderr")

    p = sub.add_parser("generate", help="train the synthetic corpus grid")
    add_config_args(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("pipeline", help="run the full prediction pipeline")
    add_config_args(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("report", help="emit trajectory / weight / group tables")
    add_config_args(p)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("inspect-graph", help="print graph sizes for one checkpoint")
    p.add_argument("--run", required=True, help="run directory (manifest + epoch files)")
    p.add_argument("--epoch", type=int, default=1)
    p.add_argument("--representation", default="rolled",
                   choices=["fc", "rolled", "unrolled"])
    p.add_argument("--norm", default="l2", choices=["l1", "l2"])
    p.set_defaults(func=cmd_inspect_graph)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
