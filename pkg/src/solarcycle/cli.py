"""Command line entry point.

    solarcycle run <scenario> [--seed S] [--out DIR]
    solarcycle audit <chain.json> [--format table|json]
    solarcycle validate <scenario>
    solarcycle report <run-dir> [--format table|json|csv]

Exit codes: 0 success, 1 usage, 2 validation, 3 audit findings.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

from .audit import audit_file
from .money import fmt_micro
from .scenario import ParseError, ScenarioError, ValidationError, bundled_fixtures, load_scenario
from .sim import SimulationError, run, write_outputs

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_FINDINGS = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="solarcycle", description="Solar-panel recycling ledger simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run a scenario file or bundled fixture")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", default=None, help="output directory (default runs/<name>)")

    a = sub.add_parser("audit", help="audit an exported chain")
    a.add_argument("chain")
    a.add_argument("--format", choices=("table", "json"), default="table")

    v = sub.add_parser("validate", help="check a scenario without running it")
    v.add_argument("scenario")

    rp = sub.add_parser("report", help="print a finished run's report")
    rp.add_argument("run_dir")
    rp.add_argument("--format", choices=("table", "json", "csv"), default="table")

    sub.add_parser("fixtures", help="list bundled scenarios")
    return p


def _load(path: str):
    try:
        return load_scenario(path)
    except FileNotFoundError:
        print(f"no such scenario: {path}", file=sys.stderr)
        return None
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return None
    except ValidationError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return None


def cmd_run(args) -> int:
    sc = _load(args.scenario)
    if sc is None:
        return EXIT_VALIDATION
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    out = Path(args.out) if args.out else Path("runs") / sc.name
    t0 = time.perf_counter()
    try:
        report, chain = run(sc)
    except SimulationError as exc:
        print(f"simulation aborted: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    paths = write_outputs(report, chain, out)
    dt = time.perf_counter() - t0
    print(
        f"{sc.name}: solution {sc.solution}, {report.blocks} blocks, {report.transactions} transactions, "
        f"{dt:.1f}s -> {paths['report'].parent}"
    )
    print(f"integrity findings {len(report.integrity)}, audit findings {len(report.audit)}, "
          f"compliance flags {len(report.compliance)}")
    return EXIT_OK


def cmd_audit(args) -> int:
    try:
        result = audit_file(args.chain)
    except FileNotFoundError:
        print(f"no such file: {args.chain}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, KeyError, TypeError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if args.format == "json":
        print(json.dumps(result.to_json(), indent=1, sort_keys=True))
    else:
        print(result.table())
    return EXIT_OK if result.ok else EXIT_FINDINGS


def cmd_validate(args) -> int:
    sc = _load(args.scenario)
    if sc is None:
        return EXIT_VALIDATION
    print(f"{sc.name}: ok ({len(sc.actors)} actors, {len(sc.agreements)} agreements, solution {sc.solution})")
    return EXIT_OK


def _settlement_table(rep: dict) -> str:
    head = f"{'agreement':<22} {'phase':<20} {'accrued':>14} {'owed':>12} {'recycler paid':>14} {'reward':>10}"
    lines = [
        f"{rep['scenario']}  solution {rep['solution']}  seed {rep['seed']}  "
        f"{rep['blocks']} blocks  {rep['transactions']} transactions",
        head,
        "-" * len(head),
    ]
    for s in rep["settlements"]:
        lines.append(
            f"{s['agreement_id']:<22} {s['phase']:<20} {fmt_micro(s['accrued']):>14} "
            f"{fmt_micro(sum(s['owed'].values())):>12} {fmt_micro(s['recycler_paid']):>14} "
            f"{fmt_micro(s['prosumer_reward']):>10}"
        )
    lines.append(f"integrity findings: {len(rep['integrity'])}   audit findings: {len(rep['audit'])}")
    for f in rep["audit"]:
        lines.append("  " + ", ".join(f"{k}={v}" for k, v in f.items()))
    kinds: dict[str, int] = {}
    for c in rep["compliance"]:
        kinds[c["type"]] = kinds.get(c["type"], 0) + 1
    if kinds:
        lines.append("compliance: " + ", ".join(f"{k} {n}" for k, n in sorted(kinds.items())))
    return "\n".join(lines)


def cmd_report(args) -> int:
    path = Path(args.run_dir) / "report.json"
    try:
        rep = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        print(f"no report in {args.run_dir}", file=sys.stderr)
        return EXIT_USAGE
    if args.format == "json":
        print(json.dumps(rep, indent=1, sort_keys=True))
    elif args.format == "csv":
        buf = io.StringIO()
        cols = ["agreement_id", "prosumer", "phase", "accrued", "energy_kwh", "owed", "recycler_paid",
                "prosumer_reward", "settled_tick"]
        w = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        for s in rep["settlements"]:
            w.writerow({**s, "owed": sum(s["owed"].values())})
        print(buf.getvalue(), end="")
    else:
        print(_settlement_table(rep))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "fixtures":
        print("\n".join(bundled_fixtures()))
        return EXIT_OK
    handler = {"run": cmd_run, "audit": cmd_audit, "validate": cmd_validate, "report": cmd_report}[args.command]
    try:
        return handler(args)
    except ScenarioError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
