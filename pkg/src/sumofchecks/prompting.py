"""Prompt payloads for every method: Direct, CoT, SubQ, Sum-of-Checks and the LLM-aggregation step."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

from .dataset import ExemplarSet, FrameRecord, load_image
from .parsing import CheckVerdict
from .registry import Criterion

KINDS = ("direct", "cot", "subq", "sum_of_checks")
AGGREGATIONS = ("weighted", "llm")

SCHEMA_SCALAR = "verdict + confidence"
SCHEMA_COT = "reasoning, then verdict + confidence"
SCHEMA_QA = "question-answer pairs"
SCHEMA_CHECKS = "one line per check_id"
SCHEMA_AGG = "single score in [0,1]"

TEMPLATE_NAMES = (
    "system",
    "direct",
    "cot",
    "subq_stage1",
    "subq_stage2",
    "checks",
    "llm_agg",
    "exemplar_header",
    "exemplar_scalar",
    "exemplar_cot",
    "exemplar_checks",
)

ImageLoader = Callable[[str], tuple[bytes, str]]

_KIND_LABELS = {"direct": "Direct", "cot": "CoT", "subq": "SubQ", "sum_of_checks": "Sum-of-Checks"}


@dataclass(frozen=True, order=True)
class Method:
    kind: str
    few_shot: bool = False
    aggregation: str = "weighted"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown method kind {self.kind!r}")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.aggregation == "llm" and self.kind != "sum_of_checks":
            raise ValueError("llm aggregation only applies to sum_of_checks")

    @property
    def key(self) -> str:
        parts = [self.kind]
        if self.few_shot:
            parts.append("fs")
        if self.aggregation == "llm":
            parts.append("llm_agg")
        return "+".join(parts)

    @property
    def label(self) -> str:
        base = _KIND_LABELS[self.kind]
        if self.kind != "sum_of_checks":
            return base + ("+FS" if self.few_shot else "")
        if self.aggregation == "llm":
            return base + " (LLM agg.)" + ("" if self.few_shot else " (no FS)")
        return base if self.few_shot else base + " (no FS)"

    @classmethod
    def parse(cls, key: str) -> "Method":
        parts = key.strip().lower().split("+")
        kind, flags = parts[0], set(parts[1:])
        unknown = flags - {"fs", "llm_agg"}
        if unknown:
            raise ValueError(f"unknown method flag(s) {sorted(unknown)} in {key!r}")
        return cls(kind, "fs" in flags, "llm" if "llm_agg" in flags else "weighted")


MAIN_METHODS = tuple(
    Method.parse(k)
    for k in ("direct", "direct+fs", "cot", "cot+fs", "subq", "subq+fs", "sum_of_checks+fs")
)
ABLATION_METHODS = (
    Method.parse("sum_of_checks"),
    Method.parse("sum_of_checks+fs+llm_agg"),
    Method.parse("sum_of_checks+fs"),
)


@dataclass(frozen=True)
class PromptPayload:
    system_text: str
    user_text: str
    images: tuple[tuple[bytes, str], ...]
    expected_output_schema: str
    # routing info for offline backends (query frame, criterion, check ids)
    meta: dict = field(default_factory=dict, compare=True)

    def canonical_bytes(self) -> bytes:
        body = {
            "system_text": self.system_text,
            "user_text": self.user_text,
            "expected_output_schema": self.expected_output_schema,
            "meta": self.meta,
            "images": [
                {"media_type": media, "sha256": hashlib.sha256(data).hexdigest(), "size": len(data)}
                for data, media in self.images
            ],
        }
        return json.dumps(body, sort_keys=True, ensure_ascii=False).encode("utf-8")

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_bytes()).hexdigest()


class Templates:
    """Named prompt templates (``str.format`` placeholders) loaded from a directory."""

    def __init__(self, texts: dict[str, str], source: str = "<memory>"):
        missing = [n for n in TEMPLATE_NAMES if n not in texts]
        if missing:
            raise ValueError(f"templates missing from {source}: {', '.join(missing)}")
        self.texts = dict(texts)
        self.source = source

    @classmethod
    def load(cls, directory: str | Path | None = None) -> "Templates":
        if directory is None:
            root = resources.files("sumofchecks") / "data" / "templates"
            texts = {n: (root / f"{n}.txt").read_text(encoding="utf-8") for n in TEMPLATE_NAMES}
            return cls(texts, "builtin")
        d = Path(directory)
        return cls({n: (d / f"{n}.txt").read_text(encoding="utf-8") for n in TEMPLATE_NAMES}, str(d))

    def digests(self) -> dict[str, str]:
        return {n: hashlib.sha256(self.texts[n].encode("utf-8")).hexdigest() for n in TEMPLATE_NAMES}

    def render(self, name: str, **values) -> str:
        return self.texts[name].format_map(values)


_default_templates: Templates | None = None


def default_templates() -> Templates:
    global _default_templates
    if _default_templates is None:
        _default_templates = Templates.load()
    return _default_templates


def _criterion_values(criterion: Criterion) -> dict[str, object]:
    return {
        "criterion_id": criterion.criterion_id,
        "criterion_title": criterion.title,
        "criterion_statement": criterion.statement,
    }


def _scalar_answer(label: int) -> tuple[str, str]:
    return ("yes", "1.0") if label else ("no", "0.0")


def _exemplar_block(
    t: Templates, criterion: Criterion, exemplars: ExemplarSet | None, style: str
) -> str:
    if not exemplars:
        return ""
    parts = [t.render("exemplar_header", n_exemplars=len(exemplars))]
    idx = criterion.criterion_id - 1
    for i, ex in enumerate(exemplars, start=1):
        verdict, confidence = _scalar_answer(ex.labels[idx])
        if style == "checks":
            lines = "\n".join(
                f"{chk.check_id}: {ex.check_answers[chk.check_id].verdict} — "
                f"{ex.check_answers[chk.check_id].justification}"
                for chk in criterion.checks
            )
            parts.append(t.render("exemplar_checks", index=i, answer_lines=lines))
        elif style == "cot":
            reasoning = " ".join(ex.check_answers[chk.check_id].justification for chk in criterion.checks)
            parts.append(
                t.render("exemplar_cot", index=i, reasoning=reasoning, verdict=verdict, confidence=confidence)
            )
        else:
            parts.append(t.render("exemplar_scalar", index=i, verdict=verdict, confidence=confidence))
    return "".join(parts)


def _images(
    frame: FrameRecord, exemplars: ExemplarSet | None, loader: ImageLoader
) -> tuple[tuple[bytes, str], ...]:
    refs = [ex.frame.image_ref for ex in exemplars] if exemplars else []
    refs.append(frame.image_ref)  # query image always last
    return tuple(loader(ref) for ref in refs)


def _meta(frame_id: str, criterion: Criterion, stage: str) -> dict:
    return {
        "frame_id": frame_id,
        "criterion_id": criterion.criterion_id,
        "check_ids": list(criterion.check_ids),
        "stage": stage,
    }


def _scalar_prompt(
    name: str,
    schema: str,
    style: str,
    frame: FrameRecord,
    criterion: Criterion,
    exemplars: ExemplarSet | None,
    templates: Templates | None,
    image_loader: ImageLoader,
) -> PromptPayload:
    t = templates or default_templates()
    n = len(exemplars) if exemplars else 0
    user = t.render(
        name,
        exemplar_block=_exemplar_block(t, criterion, exemplars, style),
        query_index=n + 1,
        **_criterion_values(criterion),
    )
    return PromptPayload(
        system_text=t.render("system"),
        user_text=user,
        images=_images(frame, exemplars, image_loader),
        expected_output_schema=schema,
        meta=_meta(frame.frame_id, criterion, name),
    )


def build_direct_prompt(
    frame: FrameRecord,
    criterion: Criterion,
    exemplars: ExemplarSet | None = None,
    templates: Templates | None = None,
    image_loader: ImageLoader = load_image,
) -> PromptPayload:
    return _scalar_prompt(
        "direct", SCHEMA_SCALAR, "scalar", frame, criterion, exemplars, templates, image_loader
    )


def build_cot_prompt(
    frame: FrameRecord,
    criterion: Criterion,
    exemplars: ExemplarSet | None = None,
    templates: Templates | None = None,
    image_loader: ImageLoader = load_image,
) -> PromptPayload:
    return _scalar_prompt("cot", SCHEMA_COT, "cot", frame, criterion, exemplars, templates, image_loader)


@dataclass(frozen=True)
class SubQStage2:
    """Second SubQ stage; ``render`` embeds the stage-1 answer text verbatim."""

    system_text: str
    template: str
    values: dict
    images: tuple[tuple[bytes, str], ...]
    meta: dict

    def render(self, qa_text: str) -> PromptPayload:
        return PromptPayload(
            system_text=self.system_text,
            user_text=self.template.format_map({**self.values, "qa_pairs": qa_text.strip()}),
            images=self.images,
            expected_output_schema=SCHEMA_SCALAR,
            meta=self.meta,
        )


def build_subq_prompts(
    frame: FrameRecord,
    criterion: Criterion,
    exemplars: ExemplarSet | None = None,
    templates: Templates | None = None,
    image_loader: ImageLoader = load_image,
) -> tuple[PromptPayload, SubQStage2]:
    t = templates or default_templates()
    stage1 = _scalar_prompt(
        "subq_stage1", SCHEMA_QA, "scalar", frame, criterion, exemplars, t, image_loader
    )
    n = len(exemplars) if exemplars else 0
    values = {
        "exemplar_block": _exemplar_block(t, criterion, exemplars, "scalar"),
        "query_index": n + 1,
        **_criterion_values(criterion),
    }
    stage2 = SubQStage2(
        system_text=stage1.system_text,
        template=t.texts["subq_stage2"],
        values=values,
        images=stage1.images,
        meta=_meta(frame.frame_id, criterion, "subq_stage2"),
    )
    return stage1, stage2


def build_check_prompt(
    frame: FrameRecord,
    criterion: Criterion,
    exemplars: ExemplarSet | None = None,
    templates: Templates | None = None,
    image_loader: ImageLoader = load_image,
) -> PromptPayload:
    """All checks of the criterion in one payload, one answer line requested per check."""
    t = templates or default_templates()
    n = len(exemplars) if exemplars else 0
    check_list = "\n".join(f"- {chk.check_id}: {chk.question}" for chk in criterion.checks)
    user = t.render(
        "checks",
        exemplar_block=_exemplar_block(t, criterion, exemplars, "checks"),
        query_index=n + 1,
        check_list=check_list,
        **_criterion_values(criterion),
    )
    return PromptPayload(
        system_text=t.render("system"),
        user_text=user,
        images=_images(frame, exemplars, image_loader),
        expected_output_schema=SCHEMA_CHECKS,
        meta=_meta(frame.frame_id, criterion, "checks"),
    )


def build_llm_agg_prompt(
    criterion: Criterion,
    verdicts: Sequence[CheckVerdict],
    templates: Templates | None = None,
    frame_id: str = "",
) -> PromptPayload:
    t = templates or default_templates()
    questions = {chk.check_id: chk.question for chk in criterion.checks}
    verdict_list = "\n".join(
        f"- {v.check_id} ({questions.get(v.check_id, '?')}): {v.verdict} — "
        f"{v.justification.strip() or '(no justification)'}"
        for v in verdicts
    )
    return PromptPayload(
        system_text=t.render("system"),
        user_text=t.render("llm_agg", verdict_list=verdict_list, **_criterion_values(criterion)),
        images=(),
        expected_output_schema=SCHEMA_AGG,
        meta={**_meta(frame_id, criterion, "llm_agg"), "verdicts": [v.verdict for v in verdicts]},
    )


def build_for_method(
    method: Method,
    frame: FrameRecord,
    criterion: Criterion,
    exemplars: ExemplarSet | None,
    templates: Templates | None = None,
    image_loader: ImageLoader = load_image,
):
    """Dispatch on method kind; exemplars are dropped unless the method is few-shot."""
    ex = exemplars if method.few_shot else None
    if method.few_shot and not exemplars:
        raise ValueError(f"method {method.key} needs an exemplar set")
    builder = {
        "direct": build_direct_prompt,
        "cot": build_cot_prompt,
        "subq": build_subq_prompts,
        "sum_of_checks": build_check_prompt,
    }[method.kind]
    return builder(frame, criterion, ex, templates=templates, image_loader=image_loader)

