"""Command-line front end: schema → rules → derive → load → eval → report.

Exit codes: 0 success (for ``eval``/``all``: every coverage rule covered),
1 usage or configuration error, 2 pipeline error, 3 uncovered rules.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from pathlib import Path

from .dataset import load_dataset
from .engine import ENV_VAR, MEMORY, connect, evaluate_coverage, materialize, read_snapshot, \
    resolve_target
from .errors import IdmcovError
from .lang import bind_rules, kind_tally, parse_rules
from .mcdc import derive_all, render_bundle
from .model import emit_ddl, parse_schema
from .report import build_report

EXIT_OK, EXIT_USAGE, EXIT_PIPELINE, EXIT_UNCOVERED = 0, 1, 2, 3
COMMANDS = ("schema", "check", "derive", "load", "eval", "all")
NEEDS = {
    "schema": ("schema",),
    "check": ("schema", "rules"),
    "derive": ("schema", "rules"),
    "load": ("schema", "dataset"),
    "eval": ("schema", "rules"),
    "all": ("schema", "rules", "dataset"),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="idmcov", description="Derive and evaluate business-rule coverage "
                "rules over an Integrated Data Model database.")
    p.add_argument("command", choices=COMMANDS,
                   help="schema: validate and print DDL; check: bind rules and print kinds; "
                        "derive: write the coverage-rule bundle; load: build the database "
                        "from a dataset; eval: execute coverage rules and report; all: the "
                        "whole pipeline")
    p.add_argument("--schema", type=Path, help="IDM schema file")
    p.add_argument("--rules", type=Path, action="append", default=[],
                   help="business-rule file (repeatable)")
    p.add_argument("--dataset", type=Path, help="directory of <Entity>.csv files")
    p.add_argument("--db", help=f"database path, :memory: or sqlite:///path "
                                f"(default: ${ENV_VAR})")
    p.add_argument("--boundaries", action="store_true",
                   help="also derive boundary coverage rules")
    p.add_argument("--replace", action="store_true",
                   help="drop existing tables before loading")
    p.add_argument("--report", choices=("json", "text"), default="text",
                   help="report format (default: text)")
    p.add_argument("--out", type=Path, help="write the command's output here instead of stdout")
    return p


def _validate(args) -> None:
    for need in NEEDS[args.command]:
        value = getattr(args, need)
        if not value:
            raise UsageError(f"{args.command} needs --{need}")
    if args.schema and not args.schema.is_file():
        raise UsageError(f"schema file {args.schema} does not exist")
    for r in args.rules:
        if not r.is_file():
            raise UsageError(f"rules file {r} does not exist")
    if args.dataset and not args.dataset.is_dir():
        raise UsageError(f"dataset directory {args.dataset} does not exist")
    if args.command in ("load", "eval") and not (args.db or os.environ.get(ENV_VAR)):
        raise UsageError(f"{args.command} needs --db or ${ENV_VAR}")
    if args.command == "eval" and not args.dataset:
        target = resolve_target(args.db)
        if target == MEMORY:
            raise UsageError("eval on an in-memory database needs --dataset")
        if not Path(target).exists():
            raise UsageError(f"database {target} does not exist; run load first or "
                             "pass --dataset")
    if args.out is not None and args.out.exists() and args.out.is_dir():
        raise UsageError(f"--out {args.out} is a directory")


def load_schema_file(path: Path):
    return parse_schema(path.read_text(encoding="utf-8"), source=str(path))


def load_rule_files(paths, schema):
    rules = []
    names: set[str] = set()
    for path in paths:
        parsed = parse_rules(path.read_text(encoding="utf-8"), source=str(path))
        for rule in bind_rules(parsed, schema, source=str(path)):
            if rule.name.lower() in names:
                raise IdmcovError(f"{path}: rule name {rule.name} is already used")
            names.add(rule.name.lower())
            rules.append(rule)
    return rules


def _write(out: Path | None, text: str) -> None:
    """Write atomically so a failed run never leaves a partial file."""
    if out is None:
        sys.stdout.write(text)
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=out.parent, prefix=f".{out.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, out)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _load_db(args, schema):
    """Materialize the dataset; a database file created here is removed on failure."""
    target = resolve_target(args.db or os.environ.get(ENV_VAR) or MEMORY)
    created = target != MEMORY and not Path(target).exists()
    try:
        snapshot = load_dataset(schema, args.dataset)
        conn = materialize(schema, snapshot, target, replace=args.replace)
    except BaseException:
        if created:
            Path(target).unlink(missing_ok=True)
        raise
    return conn, snapshot


def run(args) -> int:
    schema = load_schema_file(args.schema)
    cmd = args.command
    if cmd == "schema":
        _write(args.out, emit_ddl(schema))
        return EXIT_OK
    if cmd == "load":
        conn, snapshot = _load_db(args, schema)
        conn.close()
        tally = snapshot.tally(schema)
        print(f"loaded {snapshot.total()} tuples (TestCase {tally['testcase']}, "
              f"UI {tally['ui']}, Database {tally['database']})", file=sys.stderr)
        return EXIT_OK
    rules = load_rule_files(args.rules, schema)
    if cmd == "check":
        lines = [f"{r.name}\t{r.kind}\t{r.context_name}" for r in rules]
        tally = kind_tally(rules)
        lines.append("kinds: " + ", ".join(f"{k}={v}" for k, v in tally.items()))
        _write(args.out, "\n".join(lines) + "\n")
        return EXIT_OK
    coverage = derive_all(rules, schema, boundaries=args.boundaries)
    if cmd == "derive":
        _write(args.out, render_bundle(coverage))
        return EXIT_OK
    if cmd == "all" or args.dataset:
        conn, snapshot = _load_db(args, schema)
    else:
        conn = connect(args.db)
        snapshot = read_snapshot(schema, conn)
    try:
        results = evaluate_coverage(coverage, conn)
    finally:
        conn.close()
    report = build_report(results, coverage, rules, schema, snapshot)
    _write(args.out, report.to_json() if args.report == "json" else report.to_text())
    if any(r.status == "error" for r in results):
        return EXIT_PIPELINE
    return EXIT_OK if report.complete else EXIT_UNCOVERED


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="idmcov: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _validate(args)
    except (UsageError, IdmcovError) as exc:
        print(f"idmcov: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return run(args)
    except (IdmcovError, OSError, UnicodeDecodeError) as exc:
        print(f"idmcov: error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
