"""Command-line front end.

    twinguard make-fixtures --out fx
    twinguard prepare --config fx/config.yaml --out run
    twinguard run --config fx/config.yaml --out run
    twinguard autofs-bench --config fx/config.yaml --out run --seeds 3
    twinguard report run

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime
error, 1 anything unexpected.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .config import load_config
from .errors import TwinguardError

log = logging.getLogger("twinguard")


def _common(p, out_required=True):
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--row-cap", type=int, help="read at most N rows per source dataset")
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    ap = argparse.ArgumentParser(prog="twinguard", description="Per-router DDoS detection in a twin network")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="balance and merge the source datasets")
    _common(p)

    p = sub.add_parser("run", help="replay the attack schedule through the detector")
    _common(p)
    p.add_argument("--ground-truth-metrics", action="store_true",
                   help="use replay ground truth instead of pseudo-labels as metric references")

    p = sub.add_parser("autofs-bench", help="compare the FS methods over several seeds")
    _common(p)
    p.add_argument("--seeds", type=int, help="number of seeds (default from config)")

    p = sub.add_parser("report", help="emit plot-ready CSVs from a run directory")
    p.add_argument("run_dir")
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("make-fixtures", help="write synthetic datasets and example configs")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")
    return ap


def _config(args):
    return load_config(args.config, seed=args.seed)


def cmd_prepare(args):
    _, stats = pipeline.prepare(_config(args), args.out, args.row_cap)
    print(f"prepared {stats['rows']} rows ({stats['ddos']} DDoS / {stats['notddos']} NotDDoS), "
          f"imbalance ratio {stats['imbalance_ratio']:.3f}")


def cmd_run(args):
    report = pipeline.run_detection(_config(args), args.out, args.ground_truth_metrics or None, args.row_cap)
    for t in report["twins"]:
        lat = [a["latency_minutes"] for a in t["attacks"]]
        print(f"{t['twin']}: {len(t['alarms'])} alarm(s), latency (min) {lat}, "
              f"{len(t['triggers'])} AutoFS trigger(s), model v{t['final_model_version']}")
    agg = report["aggregate"]["pipeline"]
    print(f"aggregate accuracy {agg['accuracy']:.4f}, weighted F {agg['f_measure']:.4f}")


def cmd_autofs_bench(args):
    rows = pipeline.autofs_bench(_config(args), args.out, args.seeds, args.row_cap)
    for r in rows:
        print(f"seed {r['seed']} {r['method']:<12} recall {r['recall']:.4f} time {r['time']:.4f}s"
              + ("  <- winner" if r["winner"] else ""))


def cmd_report(args):
    rates, comparison = pipeline.build_report(args.run_dir)
    print(f"wrote detection_rate.csv ({len(rates)} rows) and method_comparison.csv ({len(comparison)} rows)")


def cmd_make_fixtures(args):
    print(json.dumps(pipeline.make_fixtures(args.out, args.seed)))


COMMANDS = {
    "prepare": cmd_prepare,
    "run": cmd_run,
    "autofs-bench": cmd_autofs_bench,
    "report": cmd_report,
    "make-fixtures": cmd_make_fixtures,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except TwinguardError as exc:
        print(f"twinguard {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"twinguard {args.command}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
