"""Command-line front end.

Subcommands: validate, load, thinflow, nash, verify, labels.  Machine
formats carry rationals as integers or "p/q" strings; reports are written
even on failure so runs can be diffed.  Exit codes: 0 success or
certificate, 1 violations (report written), 2 input errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import labels as labels_mod
from . import nash as nash_mod
from .loading import (check_feasibility, derive_profile, flow_from_json,
                      flow_to_json, inflows_from_json, load_network)
from .netmodel import (COMMON_DESTINATION, COMMON_ORIGIN, instance_from_json,
                       validate_instance)
from .rationals import parse_rational
from .thinflow import solve_thinflow_multisource, solve_thinflow_single


def _read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _write_report(path, doc, quiet):
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        if not quiet:
            print(f"report written to {path}")


def _load_instance(path):
    inst = instance_from_json(_read_json(path))
    result = validate_instance(inst)
    if isinstance(result, list):
        return None, result
    return result, []


def _export_pwl_csv(path, name, fn):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        for row in fn.csv_rows():
            writer.writerow(row)


def cmd_validate(args):
    instance, violations = _load_instance(args.instance)
    doc = {"ok": not violations, "violations": [v.record() for v in violations]}
    _write_report(args.out, doc, args.quiet)
    if violations:
        for v in violations:
            print(str(v), file=sys.stderr)
        return 2
    if not args.quiet:
        print("instance valid")
    return 0


def cmd_load(args):
    instance, violations = _load_instance(args.instance)
    if instance is None:
        print("; ".join(map(str, violations)), file=sys.stderr)
        return 2
    inflows = inflows_from_json(_read_json(args.flowrates))
    horizon = parse_rational(args.horizon) if args.horizon else None
    flow, profile = load_network(instance, inflows, horizon)
    flow.fill_totals(instance)
    report = check_feasibility(instance, flow, profile)
    doc = {"feasibility": report.to_json(), "flow": flow_to_json(instance, flow)}
    if args.format == "json":
        doc["queues"] = {e: profile.volume[e].to_json() for e in profile.volume}
        doc["exit_times"] = {e: profile.exit_time[e].to_json() for e in profile.exit_time}
        _write_report(args.out or "load_report.json", doc, args.quiet)
    else:
        _write_report(args.out or "load_report.json",
                      {"feasibility": report.to_json()}, args.quiet)
        stem = Path(args.out or "load_report.json").with_suffix("")
        for e in profile.volume:
            _export_pwl_csv(f"{stem}_queue_{e}.csv", e, profile.volume[e])
            _export_pwl_csv(f"{stem}_waiting_{e}.csv", e, profile.waiting[e])
            _export_pwl_csv(f"{stem}_exit_{e}.csv", e, profile.exit_time[e])
    if not report.ok:
        for v in report.violations:
            print(str(v), file=sys.stderr)
        return 1
    if not args.quiet:
        print("loaded; flow dynamics certified")
    return 0


def cmd_thinflow(args):
    instance, violations = _load_instance(args.instance)
    if instance is None:
        print("; ".join(map(str, violations)), file=sys.stderr)
        return 2
    config = _read_json(args.config)
    active = [str(e) for e in config["active"]]
    resetting = [str(e) for e in config.get("resetting", [])]
    if "sources" in config:
        sources = {str(j): (str(s["node"]), parse_rational(s["rate"]))
                   for j, s in config["sources"].items()}
        thin = solve_thinflow_multisource(instance, active, resetting, sources,
                                          str(config["sink"]))
    else:
        thin = solve_thinflow_single(
            instance, active, resetting, str(config["source"]),
            str(config["sink"]), parse_rational(config["rate"]),
            parse_rational(config.get("value", 1)))
    _write_report(args.out or "thinflow.json", thin.to_json(), args.quiet)
    if not args.quiet:
        print("thin flow solved")
    return 0


def _construct(instance, args):
    horizon = parse_rational(args.horizon) if args.horizon else None
    if instance.mode == COMMON_ORIGIN:
        return nash_mod.construct_common_origin(instance, horizon, args.max_phases)
    if instance.mode == COMMON_DESTINATION:
        if horizon is None:
            raise ValueError("common-destination construction needs --horizon")
        return nash_mod.construct_common_destination(instance, horizon,
                                                     args.max_phases)
    return nash_mod.construct_nash_single(instance, horizon, args.max_phases)


def cmd_nash(args):
    instance, violations = _load_instance(args.instance)
    if instance is None:
        print("; ".join(map(str, violations)), file=sys.stderr)
        return 2
    result = _construct(instance, args)
    # construct-then-verify gate: never exit 0 on an uncertified equilibrium
    report = nash_mod.verify_nash(result.instance, result.flow)
    doc = result.to_json()
    doc["verification"] = report.to_json()
    _write_report(args.out or "nash.json", doc, args.quiet)
    if args.format == "csv":
        stem = Path(args.out or "nash.json").with_suffix("")
        for v, fn in sorted(result.node_labels.items()):
            _export_pwl_csv(f"{stem}_label_{v}.csv", v, fn)
    if not report.ok:
        for v in report.violations:
            print(str(v), file=sys.stderr)
        return 1
    if not args.quiet:
        print(f"equilibrium constructed: {len(result.phases)} phases, verified")
    return 0


def cmd_verify(args):
    instance, violations = _load_instance(args.instance)
    if instance is None:
        print("; ".join(map(str, violations)), file=sys.stderr)
        return 2
    flow = flow_from_json(instance, _read_json(args.flow))
    report = nash_mod.verify_nash(instance, flow)
    _write_report(args.out or "verify_report.json", report.to_json(), args.quiet)
    if not report.ok:
        for v in report.feasibility.violations:
            print(str(v), file=sys.stderr)
        for v in report.violations:
            print(str(v), file=sys.stderr)
        return 1
    if not args.quiet:
        print("equilibrium certified")
    return 0


def cmd_labels(args):
    instance, violations = _load_instance(args.instance)
    if instance is None:
        print("; ".join(map(str, violations)), file=sys.stderr)
        return 2
    flow = flow_from_json(instance, _read_json(args.flow))
    profile = derive_profile(instance, flow)
    ls = labels_mod.earliest_arrival(instance, profile, args.commodity)
    doc = {"commodity": args.commodity,
           "labels": {v: f.to_json() for v, f in sorted(ls.labels.items())}}
    _write_report(args.out or f"labels_{args.commodity}.json", doc, args.quiet)
    if args.format == "csv":
        stem = Path(args.out or f"labels_{args.commodity}.json").with_suffix("")
        for v, fn in sorted(ls.labels.items()):
            _export_pwl_csv(f"{stem}_{v}.csv", v, fn)
    if not args.quiet:
        print(f"labels computed for commodity {args.commodity}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nashflow",
        description="Exact dynamic-equilibrium toolkit for the deterministic "
                    "queueing model")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", help="report path (written even on failure)")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("validate", help="check instance invariants")
    p.add_argument("instance")
    common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("load", help="load inflow rates through the network")
    p.add_argument("instance")
    p.add_argument("flowrates")
    p.add_argument("--horizon")
    common(p)
    p.set_defaults(func=cmd_load)

    p = sub.add_parser("thinflow", help="solve a thin flow configuration")
    p.add_argument("instance")
    p.add_argument("config")
    common(p)
    p.set_defaults(func=cmd_thinflow)

    p = sub.add_parser("nash", help="construct an equilibrium (by instance mode)")
    p.add_argument("instance")
    p.add_argument("--horizon", help="particle horizon (rational)")
    p.add_argument("--max-phases", type=int, default=500)
    common(p)
    p.set_defaults(func=cmd_nash)

    p = sub.add_parser("verify", help="verify equilibrium conditions of a flow")
    p.add_argument("instance")
    p.add_argument("flow")
    common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("labels", help="earliest-arrival labels of a commodity")
    p.add_argument("instance")
    p.add_argument("flow")
    p.add_argument("commodity")
    common(p)
    p.set_defaults(func=cmd_labels)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, RuntimeError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
