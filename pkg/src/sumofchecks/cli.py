"""Command line: ``sumofchecks validate | run | report | trace``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .dataset import DatasetError, load_exemplars, load_manifest, validate_exemplar_combos
from .prompting import Method
from .registry import MalformedDocumentError, default_cvs_registry, load_registry, validate_registry
from .report import REPORT_KINDS, render_report, write_report
from .runner import CellNotFoundError, ExperimentConfig, RunnerError, Runner, audit_trace


def cmd_validate(
    registry: str | None = None,
    manifest: str | None = None,
    exemplars: str | None = None,
    labels: str | None = None,
    out=None,
) -> int:
    """Validate registry, manifest and exemplars; returns the exit status."""
    out = out or sys.stdout
    problems: list[str] = []
    try:
        reg = load_registry(registry) if registry else default_cvs_registry()
    except (FileNotFoundError, MalformedDocumentError) as exc:
        print(f"registry: {exc}", file=out)
        return 1
    problems += [f"registry: {p}" for p in validate_registry(reg, require_cvs=True)]
    if manifest:
        try:
            frames, truths = load_manifest(manifest, labels)
            print(f"manifest: {len(frames)} frames, {len(truths)} labeled", file=out)
        except (FileNotFoundError, DatasetError) as exc:
            problems.append(f"manifest: {exc}")
    if exemplars:
        try:
            exset = load_exemplars(exemplars, reg)
            problems += [f"exemplars: {p}" for p in validate_exemplar_combos(exset)]
        except (FileNotFoundError, DatasetError) as exc:
            problems.append(f"exemplars: {exc}")
    for p in problems:
        print(p, file=out)
    if problems:
        print(f"INVALID ({len(problems)} problem(s))", file=out)
        return 1
    print(f"OK: registry {reg.version} with {len(reg.criteria)} criteria", file=out)
    return 0


def _apply_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    if args.methods:
        cfg.methods = [Method.parse(k) for k in args.methods.split(",")]
    if args.models:
        wanted = args.models.split(",")
        unknown = set(wanted) - {m.name for m in cfg.models}
        if unknown:
            raise RunnerError(f"unknown model(s): {', '.join(sorted(unknown))}")
        cfg.models = [m for m in cfg.models if m.name in wanted]
    if args.backend:
        for m in cfg.models:
            if args.backend == "oracle" and not (args.ruleset or m.ruleset):
                raise RunnerError("--backend oracle needs a ruleset (config 'ruleset' or --ruleset)")
            m.config = replace(m.config, backend_kind=args.backend)
            if args.ruleset:
                m.ruleset = str(Path(args.ruleset).resolve())
    if args.fraction is not None:
        cfg.fraction = args.fraction
    if args.seed is not None:
        cfg.seed = args.seed
    if args.runs is not None:
        cfg.runs = args.runs
    if args.concurrency is not None:
        cfg.concurrency = args.concurrency
    if args.cache_dir:
        cfg.cache_dir = Path(args.cache_dir).resolve()
    return cfg


def cmd_run(args: argparse.Namespace) -> int:
    try:
        cfg = _apply_overrides(ExperimentConfig.load(args.config), args)
        runner = Runner(cfg, args.out)
        manifest = runner.plan()
    except (RunnerError, FileNotFoundError, DatasetError, MalformedDocumentError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"planned {manifest.n_cells()} cells -> {args.out}")
    try:
        results = runner.execute(manifest, resume=args.resume)
    except RunnerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    calls = sum(b.calls for b in runner.backends.values())
    errored = sum(1 for r in results if r.error)
    print(f"done: {len(results)} cells, {errored} errored, {calls} backend call(s)")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    try:
        text, _ = render_report(args.run_dir, args.kind)
        write_report(args.run_dir, args.kind)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(text)
    return 0


def cmd_trace(args: argparse.Namespace) -> int:
    try:
        text = audit_trace(args.run_dir, args.frame, args.criterion, args.method, args.run, args.model)
    except (CellNotFoundError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sumofchecks", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check registry, manifest and exemplar files")
    p.add_argument("--config", help="experiment config; supplies any path not given explicitly")
    p.add_argument("--registry")
    p.add_argument("--manifest")
    p.add_argument("--labels")
    p.add_argument("--exemplars")

    p = sub.add_parser("run", help="execute an experiment config")
    p.add_argument("config")
    p.add_argument("-o", "--out", required=True, help="run directory")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--backend", choices=["remote", "mock", "oracle"], help="override every model's backend")
    p.add_argument("--ruleset", help="oracle ruleset JSON (with --backend oracle)")
    p.add_argument("--methods", help="comma-separated method keys, e.g. direct,cot+fs,sum_of_checks+fs")
    p.add_argument("--models", help="comma-separated model names from the config")
    p.add_argument("--fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--concurrency", type=int)
    p.add_argument("--cache-dir")

    p = sub.add_parser("report", help="render tables from a run directory")
    p.add_argument("run_dir")
    p.add_argument("--kind", choices=REPORT_KINDS, default="results")

    p = sub.add_parser("trace", help="print the audit trace of one cell")
    p.add_argument("run_dir")
    p.add_argument("--frame", required=True)
    p.add_argument("--criterion", type=int, required=True)
    p.add_argument("--method", required=True, help="method key, e.g. sum_of_checks+fs")
    p.add_argument("--run", type=int, default=1)
    p.add_argument("--model")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "validate":
        paths = {"registry": args.registry, "manifest": args.manifest, "exemplars": args.exemplars, "labels": args.labels}
        if args.config:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
            base = Path(args.config).parent
            for key in paths:
                if paths[key] is None and doc.get(key) not in (None, "", "default"):
                    paths[key] = str(base / doc[key])
        return cmd_validate(**paths)
    if args.command == "run":
        return cmd_run(args)
    if args.command == "report":
        return cmd_report(args)
    return cmd_trace(args)


if __name__ == "__main__":
    sys.exit(main())
