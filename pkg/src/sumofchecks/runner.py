"""Experiment planning and execution over models x methods x criteria x frames x runs."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import tempfile
import threading
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Iterator, Sequence

from .aggregation import aggregate, decide, llm_aggregate
from .backend import Backend, ModelConfig, ModelResponse, ResponseCache, Ruleset, make_backend
from .dataset import (
    ExemplarSet,
    FrameRecord,
    file_digest,
    load_exemplars,
    load_image,
    load_manifest,
    sample_eval_split,
)
from .parsing import CheckVerdict, ParseFailure, parse_check_verdicts, parse_scalar_judgment
from .prompting import MAIN_METHODS, Method, Templates, build_for_method
from .registry import CheckRegistry, default_cvs_registry, load_registry, registry_from_dict, validate_registry

log = logging.getLogger(__name__)

DEFAULT_RUNS = 3
DEFAULT_CONCURRENCY = 8


class RunnerError(RuntimeError):
    pass


class ManifestInvalidError(RunnerError):
    pass


class CellNotFoundError(LookupError):
    pass


@dataclass
class ModelEntry:
    """One configured model: a display name, its ModelConfig and offline-backend data."""

    name: str
    config: ModelConfig
    ruleset: str | None = None
    script: list[str] | None = None


@dataclass
class ExperimentConfig:
    manifest: Path
    exemplars: Path | None
    models: list[ModelEntry]
    registry: Path | None = None  # None -> shipped default registry
    labels: Path | None = None
    templates: Path | None = None
    methods: list[Method] = field(default_factory=lambda: list(MAIN_METHODS))
    criteria: list[int] = field(default_factory=lambda: [1, 2, 3])
    runs: int = DEFAULT_RUNS
    fraction: float = 1.0
    seed: int = 0
    split: str | None = "test"
    concurrency: int = DEFAULT_CONCURRENCY
    cache_dir: Path | None = None
    max_attempts: int = 5

    @classmethod
    def from_dict(cls, doc: dict[str, Any], base_dir: str | Path = ".") -> "ExperimentConfig":
        base = Path(base_dir)

        def path(key: str) -> Path | None:
            value = doc.get(key)
            if value in (None, "", "default"):
                return None
            p = Path(value)
            return p if p.is_absolute() else (base / p).resolve()

        models = []
        for m in doc.get("models", []):
            m = dict(m)
            name = m.pop("name", None) or m.get("model_name")
            ruleset = m.pop("ruleset", None)
            if ruleset and not Path(ruleset).is_absolute():
                ruleset = str((base / ruleset).resolve())
            script = m.pop("script", None)
            m.setdefault("model_name", name)
            models.append(ModelEntry(name, ModelConfig(**m), ruleset, script))
        if not models:
            raise RunnerError("config lists no models")
        if "manifest" not in doc:
            raise RunnerError("config has no 'manifest'")
        methods = [Method.parse(k) for k in doc["methods"]] if "methods" in doc else list(MAIN_METHODS)
        return cls(
            manifest=path("manifest"),  # type: ignore[arg-type]
            exemplars=path("exemplars"),
            models=models,
            registry=path("registry"),
            labels=path("labels"),
            templates=path("templates"),
            methods=methods,
            criteria=[int(c) for c in doc.get("criteria", [1, 2, 3])],
            runs=int(doc.get("runs", DEFAULT_RUNS)),
            fraction=float(doc.get("fraction", 1.0)),
            seed=int(doc.get("seed", 0)),
            split=doc.get("split", "test"),
            concurrency=int(doc.get("concurrency", DEFAULT_CONCURRENCY)),
            cache_dir=path("cache_dir"),
            max_attempts=int(doc.get("max_attempts", 5)),
        )

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")), path.parent)


@dataclass(frozen=True, order=True)
class Cell:
    model: str
    method: str
    criterion_id: int
    frame_id: str
    run_index: int

    @property
    def stem(self) -> str:
        raw = f"{self.model}__{self.method}__c{self.criterion_id}__{self.frame_id}__r{self.run_index}"
        return re.sub(r"[^A-Za-z0-9._+-]", "_", raw)


@dataclass
class RunManifest:
    dataset_fingerprint: str
    registry_version: str
    registry: dict[str, Any]
    exemplar_digest: str | None
    exemplar_check_labels: dict[str, dict[str, int]]
    models: list[dict[str, Any]]
    methods: list[str]
    criteria: list[int]
    run_count: int
    eval_fraction: float
    eval_seed: int
    split: str | None
    frame_ids: list[str]
    template_digests: dict[str, str]
    ruleset_digests: dict[str, str] = field(default_factory=dict)

    @property
    def model_names(self) -> list[str]:
        return [m["name"] for m in self.models]

    def cells(self) -> Iterator[Cell]:
        # generation order is the canonical result order
        for model in self.model_names:
            for method in self.methods:
                for crit in self.criteria:
                    for frame_id in self.frame_ids:
                        for run in range(1, self.run_count + 1):
                            yield Cell(model, method, crit, frame_id, run)

    def n_cells(self) -> int:
        return len(self.models) * len(self.methods) * len(self.criteria) * len(self.frame_ids) * self.run_count

    def to_dict(self) -> dict[str, Any]:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunManifest":
        return cls(**d)

    def registry_obj(self) -> CheckRegistry:
        return registry_from_dict(self.registry)


@dataclass
class TaskResult:
    frame_id: str
    criterion_id: int
    method: str
    run_index: int
    model_name: str
    label: int | None = None
    score: float | None = None
    prediction: int | None = None
    threshold: float | None = None
    verdict: str | None = None
    confidence: float | None = None
    verdicts: list[CheckVerdict] = field(default_factory=list)
    cache_keys: list[str] = field(default_factory=list)
    input_tokens: int = 0
    output_tokens: int = 0
    parse_failures: list[str] = field(default_factory=list)
    error: str | None = None

    @property
    def cell(self) -> Cell:
        return Cell(self.model_name, self.method, self.criterion_id, self.frame_id, self.run_index)

    def to_dict(self) -> dict[str, Any]:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["verdicts"] = [v.to_dict() for v in self.verdicts]
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TaskResult":
        d = dict(d)
        d["verdicts"] = [CheckVerdict.from_dict(v) for v in d.get("verdicts", [])]
        return cls(**d)


def _dump(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _exemplar_labels(exemplars: ExemplarSet | None) -> dict[str, dict[str, int]]:
    if not exemplars:
        return {}
    return {
        ex.frame.frame_id: {cid: int(a.verdict == "yes") for cid, a in sorted(ex.check_answers.items())}
        for ex in exemplars
    }


class Runner:
    """Loads and validates the experiment inputs, then plans and executes the cell matrix."""

    def __init__(
        self,
        config: ExperimentConfig,
        run_dir: str | Path,
        backends: dict[str, Backend] | None = None,
    ):
        self.config = config
        self.run_dir = Path(run_dir)
        self.registry = load_registry(config.registry) if config.registry else default_cvs_registry()
        problems = validate_registry(self.registry)
        for crit in config.criteria:
            try:
                self.registry.criterion(crit)
            except KeyError:
                problems.append(f"criterion {crit} requested but not in registry")
        if problems:
            raise ManifestInvalidError("registry invalid: " + "; ".join(problems))
        frames, truths = load_manifest(config.manifest, config.labels)
        self.truths = {g.frame_id: g.labels for g in truths}
        if config.split:
            frames = [f for f in frames if f.split == config.split]
        if not frames:
            raise ManifestInvalidError(f"no frames in split {config.split!r}")
        self.frames = {f.frame_id: f for f in sample_eval_split(frames, config.fraction, config.seed)}
        needs_fs = any(m.few_shot for m in config.methods)
        if needs_fs and config.exemplars is None:
            raise ManifestInvalidError("few-shot methods configured but no exemplar file given")
        self.exemplars = load_exemplars(config.exemplars, self.registry) if config.exemplars else None
        self.templates = Templates.load(config.templates)
        self.models = {m.name: m for m in config.models}
        if len(self.models) != len(config.models):
            raise ManifestInvalidError("model names must be unique")
        cache_root = config.cache_dir or (self.run_dir.parent / f".{self.run_dir.name}-cache")
        self.cache = ResponseCache(cache_root)
        self.backends = backends or {name: self._make_backend(m) for name, m in self.models.items()}
        self._load_image = lru_cache(maxsize=256)(load_image)

    def _make_backend(self, entry: ModelEntry) -> Backend:
        ruleset = Ruleset.load(entry.ruleset) if entry.ruleset else None
        kwargs = {}
        if entry.config.backend_kind == "remote":
            kwargs = {"max_in_flight": self.config.concurrency, "max_attempts": self.config.max_attempts}
        return make_backend(entry.config, self.cache, ruleset=ruleset, script=entry.script, **kwargs)

    # --- planning ----------------------------------------------------------------

    def plan(self) -> RunManifest:
        cfg = self.config
        models = []
        ruleset_digests = {}
        for m in cfg.models:
            models.append({"name": m.name, **m.config.public_dict()})
            if m.ruleset:
                ruleset_digests[m.name] = file_digest(m.ruleset)
        return RunManifest(
            dataset_fingerprint=file_digest(cfg.manifest),
            registry_version=self.registry.version,
            registry=self.registry.to_dict(),
            exemplar_digest=file_digest(cfg.exemplars) if cfg.exemplars else None,
            exemplar_check_labels=_exemplar_labels(self.exemplars),
            models=models,
            methods=[m.key for m in cfg.methods],
            criteria=list(cfg.criteria),
            run_count=cfg.runs,
            eval_fraction=cfg.fraction,
            eval_seed=cfg.seed,
            split=cfg.split,
            frame_ids=sorted(self.frames),
            template_digests=self.templates.digests(),
            ruleset_digests=ruleset_digests,
        )

    # --- execution ---------------------------------------------------------------

    def result_path(self, cell: Cell) -> Path:
        return self.run_dir / "results" / f"{cell.stem}.json"

    def _load_existing(self, cell: Cell) -> TaskResult | None:
        try:
            res = TaskResult.from_dict(json.loads(self.result_path(cell).read_text(encoding="utf-8")))
        except (FileNotFoundError, json.JSONDecodeError, TypeError, KeyError):
            return None
        # errored cells are retried on resume
        return None if res.error else res

    def execute(self, manifest: RunManifest, resume: bool = False) -> list[TaskResult]:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        manifest_path = self.run_dir / "manifest.json"
        text = _dump(manifest.to_dict())
        if resume and manifest_path.exists() and manifest_path.read_text(encoding="utf-8") != text:
            raise ManifestInvalidError(f"{manifest_path} describes a different experiment; refusing to resume")
        _atomic_write(manifest_path, text)

        cells = list(manifest.cells())
        done: dict[Cell, TaskResult] = {}
        todo = []
        for cell in cells:
            existing = self._load_existing(cell) if resume else None
            if existing is not None:
                done[cell] = existing
            else:
                todo.append(cell)
        log.info("%d cells, %d already complete, %d to run", len(cells), len(done), len(todo))

        registry = manifest.registry_obj()
        lock = threading.Lock()

        def work(cell: Cell) -> None:
            res = self.run_cell(cell, registry)
            _atomic_write(self.result_path(cell), _dump(res.to_dict()))
            _atomic_write(self.run_dir / "traces" / f"{cell.stem}.txt", render_trace(res, registry))
            with lock:
                done[cell] = res

        workers = max(1, self.config.concurrency)
        if workers == 1:
            for cell in todo:
                work(cell)
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(work, todo))

        results = [done[c] for c in cells]
        write_run_summaries(self.run_dir, results)
        return results

    def run_cell(self, cell: Cell, registry: CheckRegistry) -> TaskResult:
        criterion = registry.criterion(cell.criterion_id)
        labels = self.truths.get(cell.frame_id)
        res = TaskResult(
            cell.frame_id,
            cell.criterion_id,
            cell.method,
            cell.run_index,
            cell.model,
            label=labels[cell.criterion_id - 1] if labels else None,
            threshold=criterion.decision_threshold,
        )
        ctx = (
            ("frame", cell.frame_id),
            ("criterion", str(cell.criterion_id)),
            ("method", cell.method),
            ("run", str(cell.run_index)),
            ("model", cell.model),
        )

        def sink(f: ParseFailure) -> None:
            res.parse_failures.append(replace(f, context=ctx).render())

        backend = self.backends[cell.model]
        config = replace(self.models[cell.model].config, run_index=cell.run_index)
        method = Method.parse(cell.method)

        def call(payload):
            response = backend.complete(payload, config)
            res.cache_keys.append(response.key)
            res.input_tokens += response.input_tokens
            res.output_tokens += response.output_tokens
            return response.text

        try:
            built = build_for_method(
                method, self.frames[cell.frame_id], criterion, self.exemplars, self.templates, self._load_image
            )
            if method.kind == "sum_of_checks":
                verdicts = parse_check_verdicts(call(built), criterion.checks, sink)
                res.verdicts = verdicts
                if method.aggregation == "llm":
                    score = llm_aggregate(
                        verdicts, criterion, _Recorder(call), config, self.templates, cell.frame_id, sink
                    )
                else:
                    score = aggregate(verdicts, criterion)
            else:
                if method.kind == "subq":
                    stage1, stage2 = built
                    text = call(stage2.render(call(stage1)))
                else:
                    text = call(built)
                judgment = parse_scalar_judgment(text, sink)
                res.verdict, res.confidence = judgment.verdict, judgment.confidence
                score = judgment.confidence
            res.score = score
            res.prediction = decide(score, criterion)
        except Exception as exc:  # noqa: BLE001 - one bad cell must not stop the run
            log.warning("cell %s failed: %s", cell.stem, exc)
            res.error = f"{type(exc).__name__}: {exc}"
            res.score = res.prediction = None
        return res


class _Recorder:
    """Routes llm_aggregate's backend call through the cell's recording ``call``."""

    def __init__(self, call):
        self._call = call

    def complete(self, payload, config) -> ModelResponse:
        return ModelResponse(self._call(payload))


def write_run_summaries(run_dir: Path, results: Sequence[TaskResult]) -> None:
    """Rebuild parse_failures.log and costs.json from the full, ordered result set."""
    lines = [line for r in results for line in r.parse_failures]
    _atomic_write(run_dir / "parse_failures.log", "".join(f"{l}\n" for l in lines))
    costs: dict[str, dict[str, dict[str, int]]] = defaultdict(dict)
    for r in results:
        slot = costs[r.model_name].setdefault(
            r.method, {"cells": 0, "errored": 0, "input_tokens": 0, "output_tokens": 0}
        )
        slot["cells"] += 1
        slot["errored"] += int(r.error is not None)
        slot["input_tokens"] += r.input_tokens
        slot["output_tokens"] += r.output_tokens
    _atomic_write(run_dir / "costs.json", _dump(costs))


def plan_runs(config: ExperimentConfig, run_dir: str | Path) -> RunManifest:
    return Runner(config, run_dir).plan()


def execute(runner: Runner, manifest: RunManifest, resume: bool = False) -> list[TaskResult]:
    return runner.execute(manifest, resume=resume)


# --- audit traces ------------------------------------------------------------------


def _num(x: float) -> str:
    return f"{x:.6g}"


def render_trace(res: TaskResult, registry: CheckRegistry) -> str:
    method = Method.parse(res.method)
    criterion = registry.criterion(res.criterion_id)
    out = [
        f"model: {res.model_name}  method: {method.label} [{res.method}]  run: {res.run_index}",
        f"frame: {res.frame_id}  criterion {criterion.criterion_id}: {criterion.title}",
        f"statement: {criterion.statement}",
        f"ground truth: {'n/a' if res.label is None else res.label}",
        f"prompt refs: {', '.join(k[:16] for k in res.cache_keys if k) or '(none)'}",
    ]
    if res.error:
        out.append(f"error: {res.error}")
        return "\n".join(out) + "\n"

    if method.kind != "sum_of_checks":
        out.append(f"verdict: {res.verdict}")
        out.append(f"confidence: {_num(res.confidence or 0.0)}")
        return "\n".join(out) + "\n"

    checks = {c.check_id: c for c in criterion.checks}
    width = max(len(c) for c in checks) + 2
    out.append("")
    out.append(f"{'check':<{width}}{'category':<24}{'weight':<8}{'verdict':<13}r  justification")
    for v in res.verdicts:
        chk = checks[v.check_id]
        out.append(
            f"{v.check_id:<{width}}{chk.category:<24}{_num(chk.weight):<8}{v.verdict:<13}{v.binary}  "
            f"{v.justification or '(no justification)'}"
        )
    out.append("")
    terms = " + ".join(f"{_num(checks[v.check_id].weight)}·{v.binary}" for v in res.verdicts)
    if method.aggregation == "llm":
        out.append(f"weighted sum (reference) = {terms} = {_num(aggregate(res.verdicts, criterion))}")
        out.append(f"LLM-aggregated score = {_num(res.score)}")
    else:
        out.append(f"weighted score = {terms} = {_num(res.score)}")
    t = criterion.decision_threshold
    if res.prediction:
        out.append(f"{_num(res.score)} > {_num(t)} ⇒ satisfied")
    else:
        out.append(f"{_num(res.score)} ≤ {_num(t)} ⇒ not satisfied")
    return "\n".join(out) + "\n"


def load_run(run_dir: str | Path) -> tuple[RunManifest, list[TaskResult]]:
    """Manifest plus every stored cell result, in canonical cell order (missing cells omitted)."""
    run_dir = Path(run_dir)
    mpath = run_dir / "manifest.json"
    if not mpath.is_file():
        raise FileNotFoundError(f"no run at {run_dir} (missing manifest.json)")
    manifest = RunManifest.from_dict(json.loads(mpath.read_text(encoding="utf-8")))
    results = []
    for cell in manifest.cells():
        p = run_dir / "results" / f"{cell.stem}.json"
        if p.is_file():
            results.append(TaskResult.from_dict(json.loads(p.read_text(encoding="utf-8"))))
    return manifest, results


def audit_trace(
    run_dir: str | Path,
    frame_id: str,
    criterion_id: int,
    method: str | Method,
    run_index: int,
    model: str | None = None,
) -> str:
    manifest, _ = load_run(run_dir)
    key = method.key if isinstance(method, Method) else Method.parse(method).key
    models = [model] if model else manifest.model_names
    for name in models:
        cell = Cell(name, key, int(criterion_id), frame_id, int(run_index))
        p = Path(run_dir) / "results" / f"{cell.stem}.json"
        if p.is_file():
            res = TaskResult.from_dict(json.loads(p.read_text(encoding="utf-8")))
            return render_trace(res, manifest.registry_obj())
    raise CellNotFoundError(
        f"no executed cell for frame={frame_id} criterion={criterion_id} method={key} run={run_index}"
    )


def digest_dir(path: str | Path) -> str:
    """SHA-256 over every file's relative path and bytes, for run-directory comparisons."""
    root = Path(path)
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(b"\0")
            h.update(p.read_bytes())
    return h.hexdigest()
