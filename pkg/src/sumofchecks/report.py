"""Result, ablation and reliability tables rendered from a run directory."""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Sequence

from .metrics import (
    APResult,
    CheckReliability,
    InsufficientRunsError,
    NoPositivesError,
    VerdictRecord,
    ap_result,
    average_over_criteria,
    mean_std,
    per_check_reliability,
    summarize_by_category,
)
from .prompting import ABLATION_METHODS, MAIN_METHODS, Method
from .registry import CATEGORIES
from .runner import RunManifest, TaskResult, load_run

REPORT_KINDS = ("results", "ablation", "reliability")
ABLATION_LABELS = {
    "sum_of_checks": "no FS",
    "sum_of_checks+fs+llm_agg": "LLM agg.",
    "sum_of_checks+fs": "Weighted",
}
# observational checks first, then the anatomical-evidence categories
CATEGORY_ORDER = ("occlusion-control",) + tuple(c for c in CATEGORIES if c != "occlusion-control")


def pct(x: float) -> str:
    """Percent with one decimal, rounding half away from zero."""
    return str((Decimal(repr(x)) * 100).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


@dataclass
class TableCell:
    mean: float | None  # fraction in [0, 1]
    std: float | None
    n_runs: int
    best: bool = False

    def text(self, run_count: int) -> str:
        if self.mean is None:
            return "—"
        s = pct(self.mean) + " ± " + (pct(self.std) if self.std is not None else "n/a")
        if self.best:
            s = "*" + s
        if self.n_runs < run_count:
            s += f" [{self.n_runs}/{run_count}]"
        return s


@dataclass
class TableRow:
    model: str
    method: str  # method key
    label: str
    cells: dict[str, TableCell] = field(default_factory=dict)


@dataclass
class ResultsTable:
    title: str
    columns: list[str]
    rows: list[TableRow]
    run_count: int
    notes: list[str] = field(default_factory=list)

    def render_text(self) -> str:
        headers = ["Model", "Method", *self.columns]
        body = [[r.model, r.label, *(r.cells[c].text(self.run_count) for c in self.columns)] for r in self.rows]
        widths = [max(len(str(x)) for x in col) for col in zip(headers, *body)]
        lines = [self.title, *self.notes, ""]
        lines.append("  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip())
        lines.append("  ".join("-" * w for w in widths))
        prev = None
        for row in body:
            shown = list(row)
            if row[0] == prev:
                shown[0] = ""
            prev = row[0]
            lines.append("  ".join(str(x).ljust(w) for x, w in zip(shown, widths)).rstrip())
        return "\n".join(lines) + "\n"

    def render_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["model", "method", "label"]
        for c in self.columns:
            header += [f"{c}_mean", f"{c}_std", f"{c}_runs", f"{c}_best"]
        w.writerow(header)
        for r in self.rows:
            line = [r.model, r.method, r.label]
            for c in self.columns:
                cell = r.cells[c]
                line += [
                    "" if cell.mean is None else f"{cell.mean * 100:.6f}",
                    "" if cell.std is None else f"{cell.std * 100:.6f}",
                    cell.n_runs,
                    int(cell.best),
                ]
            w.writerow(line)
        return buf.getvalue()


def _complete(results: Sequence[TaskResult]) -> list[TaskResult]:
    return [r for r in results if r.error is None and r.score is not None and r.label is not None]


def compute_ap_results(results: Sequence[TaskResult]) -> dict[str, list[APResult]]:
    """AP per (model, method, criterion, run) over completed, labeled cells."""
    groups: dict[tuple[str, str, int, int], list[TaskResult]] = defaultdict(list)
    for r in _complete(results):
        groups[(r.model_name, r.method, r.criterion_id, r.run_index)].append(r)
    out: dict[str, list[APResult]] = defaultdict(list)
    for (model, method, crit, run), rs in sorted(groups.items()):
        rs = sorted(rs, key=lambda r: r.frame_id)
        try:
            out[model].append(
                ap_result(crit, Method.parse(method), run, [r.score for r in rs], [r.label for r in rs])
            )
        except NoPositivesError:
            continue
    return out


def _cell(aps: Sequence[float]) -> TableCell:
    if not aps:
        return TableCell(None, None, 0)
    try:
        mean, std = mean_std(list(aps))
    except InsufficientRunsError:
        return TableCell(aps[0], None, 1)
    return TableCell(mean, std, len(aps))


def _build_rows(
    manifest: RunManifest,
    results: Sequence[TaskResult],
    methods: Sequence[str],
    labels: dict[str, str] | None = None,
) -> list[TableRow]:
    per_model = compute_ap_results(results)
    columns = [f"C{c}" for c in manifest.criteria]
    rows = []
    for model in manifest.model_names:
        aps = per_model.get(model, [])
        block = []
        for key in methods:
            method = Method.parse(key)
            row = TableRow(model, key, (labels or {}).get(key, method.label))
            mine = [a for a in aps if a.method == method]
            for crit, col in zip(manifest.criteria, columns):
                row.cells[col] = _cell([a.ap for a in sorted(mine, key=lambda a: a.run_index) if a.criterion_id == crit])
            row.cells["Avg"] = _avg_cell(mine, manifest.criteria)
            block.append(row)
        _mark_best(block, columns + ["Avg"])
        rows.extend(block)
    return rows


def _avg_cell(aps: Sequence[APResult], criteria: Sequence[int]) -> TableCell:
    by_run: dict[int, set[int]] = defaultdict(set)
    for a in aps:
        by_run[a.run_index].add(a.criterion_id)
    n = sum(1 for s in by_run.values() if s >= set(criteria))
    if n == 0:
        return TableCell(None, None, 0)
    relevant = [a for a in aps if a.criterion_id in criteria]
    if n == 1:
        run = next(r for r, s in by_run.items() if s >= set(criteria))
        vals = [a.ap for a in relevant if a.run_index == run]
        return TableCell(sum(vals) / len(vals), None, 1)
    mean, std = average_over_criteria(relevant, relevant[0].method)
    return TableCell(mean, std, n)


def _mark_best(block: Sequence[TableRow], columns: Sequence[str]) -> None:
    # ties at display precision are all marked
    for col in columns:
        shown = [(pct(r.cells[col].mean), r) for r in block if r.cells[col].mean is not None]
        if not shown:
            continue
        top = max(Decimal(s) for s, _ in shown)
        for s, r in shown:
            r.cells[col].best = Decimal(s) == top


def _partial_note(manifest: RunManifest, results: Sequence[TaskResult]) -> list[str]:
    notes = []
    total = manifest.n_cells()
    if len(results) < total:
        notes.append(f"PARTIAL RUN: {len(results)} of {total} cells present; [n/N] marks runs completed")
    errored = sum(1 for r in results if r.error)
    if errored:
        notes.append(f"{errored} errored cell(s) excluded from AP")
    return notes


def results_table(run_dir: str | Path) -> ResultsTable:
    manifest, results = load_run(run_dir)
    # ablation-only variants belong to the ablation table when main methods are present
    main = {m.key for m in MAIN_METHODS}
    methods = [k for k in manifest.methods if k in main] or manifest.methods
    rows = _build_rows(manifest, results, methods)
    return ResultsTable(
        "Frame-level CVS assessment, mAP (%) as mean ± sample std over runs; * = best in model block",
        [f"C{c}" for c in manifest.criteria] + ["Avg"],
        rows,
        manifest.run_count,
        _partial_note(manifest, results),
    )


def ablation_table(run_dir: str | Path) -> ResultsTable:
    manifest, results = load_run(run_dir)
    keys = [m.key for m in ABLATION_METHODS]
    rows = _build_rows(manifest, results, keys, ABLATION_LABELS)
    notes = _partial_note(manifest, results)
    missing = [ABLATION_LABELS[k] for k in keys if k not in manifest.methods]
    if missing:
        notes.append(f"not in this run: {', '.join(missing)}")
    return ResultsTable(
        "Sum-of-Checks ablation, mAP (%) as mean ± sample std over runs; * = best in model block",
        [f"C{c}" for c in manifest.criteria] + ["Avg"],
        rows,
        manifest.run_count,
        notes,
    )


@dataclass
class ReliabilitySection:
    model: str
    method: str
    rows: list[CheckReliability]
    by_category: dict[str, float]


def reliability_sections(run_dir: str | Path) -> list[ReliabilitySection]:
    manifest, results = load_run(run_dir)
    registry = manifest.registry_obj()
    categories = {c.check_id: c.category for c in registry.all_checks()}
    labels = {
        (frame, check): y for frame, answers in manifest.exemplar_check_labels.items() for check, y in answers.items()
    }
    sections = []
    for model in manifest.model_names:
        for key in manifest.methods:
            if Method.parse(key).kind != "sum_of_checks":
                continue
            records = [
                VerdictRecord(r.frame_id, v.check_id, r.run_index, v.verdict)
                for r in results
                if r.model_name == model and r.method == key and r.error is None
                for v in r.verdicts
            ]
            if not records:
                continue
            rows = per_check_reliability(records, categories, labels)
            sections.append(ReliabilitySection(model, key, rows, summarize_by_category(rows)))
    return sections


def render_reliability(sections: Sequence[ReliabilitySection]) -> tuple[str, str]:
    lines = ["Per-check reliability: flip rate across runs and verdict distribution", ""]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(
        ["model", "method", "category", "check_id", "flip_rate", "yes", "no", "uncertain", "unparseable", "accuracy", "n_frames"]
    )
    for sec in sections:
        lines.append(f"== {sec.model} / {Method.parse(sec.method).label} [{sec.method}]")
        for cat in CATEGORY_ORDER:
            rows = [r for r in sec.rows if r.category == cat]
            if not rows:
                continue
            tag = " (observational)" if cat == "occlusion-control" else ""
            lines.append(f"-- {cat}{tag}: mean flip rate {sec.by_category[cat]:.3f}")
            lines.append(f"   {'check':<8}{'flip':>7}{'yes':>7}{'no':>7}{'unc':>7}{'unp':>7}{'acc':>7}{'n':>5}")
            for r in rows:
                d = r.verdict_distribution
                acc = "n/a" if r.accuracy_vs_labels is None else f"{r.accuracy_vs_labels:.3f}"
                lines.append(
                    f"   {r.check_id:<8}{r.flip_rate_across_runs:>7.3f}{d['yes']:>7.3f}{d['no']:>7.3f}"
                    f"{d['uncertain']:>7.3f}{d['unparseable']:>7.3f}{acc:>7}{r.n_frames:>5}"
                )
                w.writerow(
                    [
                        sec.model,
                        sec.method,
                        cat,
                        r.check_id,
                        f"{r.flip_rate_across_runs:.6f}",
                        *(f"{d[k]:.6f}" for k in ("yes", "no", "uncertain", "unparseable")),
                        "" if r.accuracy_vs_labels is None else f"{r.accuracy_vs_labels:.6f}",
                        r.n_frames,
                    ]
                )
        lines.append("")
    if not sections:
        lines.append("(no Sum-of-Checks verdicts in this run)")
    return "\n".join(lines).rstrip("\n") + "\n", buf.getvalue()


def render_report(run_dir: str | Path, kind: str = "results") -> tuple[str, str]:
    """(plain text, CSV) for one report kind."""
    if kind == "results":
        t = results_table(run_dir)
        return t.render_text(), t.render_csv()
    if kind == "ablation":
        t = ablation_table(run_dir)
        return t.render_text(), t.render_csv()
    if kind == "reliability":
        return render_reliability(reliability_sections(run_dir))
    raise ValueError(f"report kind must be one of {REPORT_KINDS}")


def write_report(run_dir: str | Path, kind: str = "results") -> tuple[Path, Path]:
    text, table = render_report(run_dir, kind)
    out = Path(run_dir) / "reports"
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{kind}.txt").write_text(text, encoding="utf-8")
    (out / f"{kind}.csv").write_text(table, encoding="utf-8")
    return out / f"{kind}.txt", out / f"{kind}.csv"
