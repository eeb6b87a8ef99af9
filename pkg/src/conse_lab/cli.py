"""Command-line entry point: run, sweep, pareto, plot, audit.

Failures print one JSON object on stderr (``{"error": ..., "param": ...,
"message": ...}``) and exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import harness
from .dp import audit_table
from .env import InvalidParameter
from .policies import THIN_LEVELS


def _apply_overrides(config, args):
    changes = {}
    if args.seed is not None:
        changes["base_seed"] = args.seed
    if args.thin is not None:
        changes["thin"] = args.thin
    if getattr(args, "out", None):
        changes["output_csv"] = args.out
    return config.replace(**changes) if changes else config


def _emit(records, out):
    harness.write_csv(records, out or sys.stdout)


def cmd_run(args):
    config = _apply_overrides(harness.load_config(args.config), args)
    cells = harness.expand_cells(config)
    if len(cells) != 1:
        raise InvalidParameter("config", f"run needs exactly one cell, config expands to {len(cells)}")
    result = harness.run_sweep(config, threads=args.threads)
    _emit(result.records, config.output_csv)
    return _report_failures(result)


def cmd_sweep(args):
    config = _apply_overrides(harness.load_config(args.config), args)
    result = harness.run_sweep(config, threads=args.threads)
    _emit(result.records, config.output_csv)
    if config.output_svg and result.records:
        harness.render_svg_plot(harness.series_by_group(result.records, "n", "cum_regret"),
                                config.output_svg, ylabel="median cumulative regret")
    return _report_failures(result)


def _report_failures(result):
    for f in result.failures:
        print(json.dumps(dict(error="run_failed", **f)), file=sys.stderr)
    return 1 if result.failures else 0


def cmd_pareto(args):
    records = harness.read_csv(args.csv)
    res = harness.pareto_points(records, args.n, policy=args.policy)
    print("alpha,median_cum_regret,median_mise")
    for a, r, m in res.triples:
        print(f"{a!r},{r!r},{m!r}")
    for d in res.diagnostics:
        print(json.dumps(d), file=sys.stderr)
    if args.out and res.triples:
        series = {"pareto": ([t[1] for t in res.triples], [t[2] for t in res.triples])}
        harness.render_svg_plot(series, args.out, loglog=False, xlabel="median cumulative regret",
                                ylabel="median MISE", title=f"n = {args.n}")
    return 0


def cmd_plot(args):
    records = harness.read_csv(args.csv)
    series = harness.series_by_group(records, args.x, args.y)
    out = args.out or "plot.svg"
    harness.render_svg_plot(series, out, loglog=args.loglog, xlabel=args.x, ylabel=f"median {args.y}")
    print(out)
    return 0


def cmd_audit(args):
    rows = audit_table()
    print(f"{'check':<24} {'params':<22} {'value':>14} {'bound':>10}  result")
    for r in rows:
        print(f"{r['check']:<24} {r['params']:<22} {r['value']:>14.6g} {r['bound']:>10.4g}  "
              f"{'PASS' if r['passed'] else 'FAIL'}")
    return 0 if all(r["passed"] for r in rows) else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override base_seed")
    common.add_argument("--out", default=None, help="output path")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--thin", choices=THIN_LEVELS, default=None)

    p = argparse.ArgumentParser(prog="conse-lab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("run", parents=[common], help="run a single-cell config")
    s.add_argument("config")
    s.set_defaults(func=cmd_run)
    s = sub.add_parser("sweep", parents=[common], help="run a full sweep config")
    s.add_argument("config")
    s.set_defaults(func=cmd_sweep)
    s = sub.add_parser("pareto", parents=[common], help="median regret/MISE per alpha at one n")
    s.add_argument("csv")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--policy", default=None)
    s.set_defaults(func=cmd_pareto)
    s = sub.add_parser("plot", parents=[common], help="SVG of median y against x per group")
    s.add_argument("csv")
    s.add_argument("--x", default="n")
    s.add_argument("--y", default="mise", choices=("cum_regret", "mise", "simple_regret"))
    s.add_argument("--loglog", action="store_true")
    s.set_defaults(func=cmd_plot)
    s = sub.add_parser("audit", parents=[common], help="analytic privacy checks")
    s.set_defaults(func=cmd_audit)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InvalidParameter as exc:
        err = dict(error="invalid_parameter", param=exc.param, message=str(exc))
    except (OSError, ValueError, KeyError) as exc:
        err = dict(error=type(exc).__name__, param=None, message=str(exc))
    print(json.dumps(err), file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
