"""Check registry: criteria, their weighted checks, and validation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

CATEGORIES = (
    "anatomical-visibility",
    "spatial-configuration",
    "ambiguity-exclusion",
    "occlusion-control",
)
WEIGHT_SUM_TOL = 1e-9
CVS_CRITERION_IDS = (1, 2, 3)


class MalformedDocumentError(ValueError):
    """Registry document cannot be parsed into the registry structure."""


@dataclass(frozen=True)
class Check:
    check_id: str
    question: str
    category: str
    weight: float


@dataclass(frozen=True)
class Criterion:
    criterion_id: int
    title: str
    statement: str
    checks: tuple[Check, ...]
    decision_threshold: float = 0.5

    @property
    def check_ids(self) -> tuple[str, ...]:
        return tuple(c.check_id for c in self.checks)

    @property
    def weights(self) -> tuple[float, ...]:
        return tuple(c.weight for c in self.checks)


@dataclass(frozen=True)
class CheckRegistry:
    version: str
    criteria: tuple[Criterion, ...]

    def criterion(self, criterion_id: int) -> Criterion:
        for crit in self.criteria:
            if crit.criterion_id == criterion_id:
                return crit
        raise KeyError(f"no criterion {criterion_id} in registry {self.version!r}")

    def all_checks(self) -> list[Check]:
        return [chk for crit in self.criteria for chk in crit.checks]

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": self.version,
            "criteria": [
                {
                    "criterion_id": crit.criterion_id,
                    "title": crit.title,
                    "statement": crit.statement,
                    "decision_threshold": crit.decision_threshold,
                    "checks": [
                        {
                            "check_id": chk.check_id,
                            "question": chk.question,
                            "category": chk.category,
                            "weight": chk.weight,
                        }
                        for chk in crit.checks
                    ],
                }
                for crit in self.criteria
            ],
        }


def _field(obj: Any, name: str, kind: type | tuple[type, ...], where: str) -> Any:
    if not isinstance(obj, dict):
        raise MalformedDocumentError(f"{where}: expected an object")
    if name not in obj:
        raise MalformedDocumentError(f"{where}: missing field '{name}'")
    value = obj[name]
    # bool is an int subclass; never accept it for numeric fields
    if isinstance(value, bool) and bool not in (kind if isinstance(kind, tuple) else (kind,)):
        raise MalformedDocumentError(f"{where}.{name}: expected {_kind_name(kind)}, got bool")
    if not isinstance(value, kind):
        raise MalformedDocumentError(
            f"{where}.{name}: expected {_kind_name(kind)}, got {type(value).__name__}"
        )
    return value


def _kind_name(kind: type | tuple[type, ...]) -> str:
    if isinstance(kind, tuple):
        return " or ".join(k.__name__ for k in kind)
    return kind.__name__


def registry_from_dict(doc: Any) -> CheckRegistry:
    """Build a registry from a parsed JSON document (structure only, no semantic checks)."""
    version = _field(doc, "version", str, "registry")
    raw_criteria = _field(doc, "criteria", list, "registry")
    criteria = []
    for i, raw in enumerate(raw_criteria):
        where = f"criteria[{i}]"
        raw_checks = _field(raw, "checks", list, where)
        checks = []
        for j, rc in enumerate(raw_checks):
            cwhere = f"{where}.checks[{j}]"
            checks.append(
                Check(
                    check_id=_field(rc, "check_id", str, cwhere),
                    question=_field(rc, "question", str, cwhere),
                    category=_field(rc, "category", str, cwhere),
                    weight=float(_field(rc, "weight", (int, float), cwhere)),
                )
            )
        threshold = raw.get("decision_threshold", 0.5) if isinstance(raw, dict) else 0.5
        if isinstance(threshold, bool) or not isinstance(threshold, (int, float)):
            raise MalformedDocumentError(f"{where}.decision_threshold: expected a number")
        criteria.append(
            Criterion(
                criterion_id=_field(raw, "criterion_id", int, where),
                title=_field(raw, "title", str, where),
                statement=_field(raw, "statement", str, where),
                checks=tuple(checks),
                decision_threshold=float(threshold),
            )
        )
    return CheckRegistry(version=version, criteria=tuple(criteria))


def load_registry(path: str | Path) -> CheckRegistry:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"registry file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocumentError(
            f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    try:
        return registry_from_dict(doc)
    except MalformedDocumentError as exc:
        raise MalformedDocumentError(f"{path}: {exc}") from exc


def save_registry(registry: CheckRegistry, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(registry.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )


def default_cvs_registry() -> CheckRegistry:
    """The shipped CVS registry (three criteria, five uniformly weighted checks each)."""
    ref = resources.files("sumofchecks") / "data" / "cvs_registry.json"
    return registry_from_dict(json.loads(ref.read_text(encoding="utf-8")))


def validate_registry(registry: CheckRegistry, require_cvs: bool = False) -> list[str]:
    """Return every invariant violation found in ``registry``; an empty list means valid.

    ``require_cvs`` additionally demands exactly the criteria 1, 2 and 3.
    """
    problems: list[str] = []
    ids = [c.criterion_id for c in registry.criteria]
    for cid in sorted({i for i in ids if ids.count(i) > 1}):
        problems.append(f"duplicate criterion_id {cid}")
    if require_cvs and sorted(ids) != list(CVS_CRITERION_IDS):
        problems.append(f"CVS registry needs criteria {{1,2,3}}, found {sorted(ids)}")
    if not registry.criteria:
        problems.append("registry has no criteria")

    for crit in registry.criteria:
        tag = f"criterion {crit.criterion_id}"
        if require_cvs and crit.criterion_id not in CVS_CRITERION_IDS:
            problems.append(f"{tag}: criterion_id must be one of 1, 2, 3")
        if not crit.statement.strip():
            problems.append(f"{tag}: empty statement")
        if not (0.0 < crit.decision_threshold < 1.0):
            problems.append(f"{tag}: decision_threshold {crit.decision_threshold} not in (0, 1)")
        if not crit.checks:
            problems.append(f"{tag}: no checks")
            continue
        seen: set[str] = set()
        for chk in crit.checks:
            ctag = f"{tag}, check {chk.check_id}"
            if chk.check_id in seen:
                problems.append(f"{tag}: duplicate check_id {chk.check_id}")
            seen.add(chk.check_id)
            if not chk.check_id.strip():
                problems.append(f"{tag}: empty check_id")
            if not chk.question.strip():
                problems.append(f"{ctag}: empty question")
            if chk.category not in CATEGORIES:
                problems.append(f"{ctag}: unknown category {chk.category!r}")
            if not math.isfinite(chk.weight):
                problems.append(f"{ctag}: non-finite weight")
            elif chk.weight < 0:
                problems.append(f"{ctag}: negative weight {chk.weight:g}")
        total = math.fsum(chk.weight for chk in crit.checks)
        if math.isfinite(total) and abs(total - 1.0) > WEIGHT_SUM_TOL:
            problems.append(f"{tag}: weights sum to {total:.12g} ≠ 1")
    return problems
