"""Frame manifests, ground-truth labels, few-shot exemplars and evaluation splits."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import mimetypes
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .registry import CheckRegistry

SPLITS = ("train", "val", "test")
MANIFEST_HEADER = ("frame_id", "image_ref", "split", "y1", "y2", "y3")
# Label triples of the four exemplars, written as bit-strings (C1 C2 C3).
REQUIRED_COMBOS = ("000", "111", "110", "001")
N_EXEMPLARS = len(REQUIRED_COMBOS)
EXEMPLAR_VERDICTS = ("yes", "no")


class DatasetError(ValueError):
    pass


class MalformedRecordError(DatasetError):
    pass


class DanglingLabelError(DatasetError):
    pass


class MissingCheckAnswerError(DatasetError):
    pass


class BadComboError(DatasetError):
    pass


class EmptyInputError(DatasetError):
    pass


@dataclass(frozen=True)
class FrameRecord:
    frame_id: str
    image_ref: str
    split: str = "test"


@dataclass(frozen=True)
class GroundTruth:
    frame_id: str
    labels: tuple[int, int, int]


@dataclass(frozen=True)
class CheckAnswer:
    verdict: str
    justification: str


@dataclass(frozen=True)
class Exemplar:
    frame: FrameRecord
    labels: tuple[int, int, int]
    check_answers: dict[str, CheckAnswer] = field(hash=False)

    @property
    def combo(self) -> str:
        return "".join(str(y) for y in self.labels)


@dataclass(frozen=True)
class ExemplarSet:
    exemplars: tuple[Exemplar, ...]

    def __len__(self) -> int:
        return len(self.exemplars)

    def __iter__(self):
        return iter(self.exemplars)


def resolve_ref(image_ref: str, base_dir: Path) -> str:
    """Make a relative path absolute against ``base_dir``; URIs pass through."""
    if "://" in image_ref:
        return image_ref
    p = Path(image_ref)
    return str(p if p.is_absolute() else (base_dir / p).resolve())


def load_image(image_ref: str) -> tuple[bytes, str]:
    """Read image bytes and guess their media type. Called lazily at request time."""
    if image_ref.startswith(("http://", "https://")):
        import httpx

        resp = httpx.get(image_ref, timeout=30.0)
        resp.raise_for_status()
        media = resp.headers.get("content-type", "").split(";")[0] or "image/png"
        return resp.content, media
    path = Path(image_ref.removeprefix("file://"))
    media = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
    return path.read_bytes(), media


def _parse_label(value: str, where: str) -> int:
    value = value.strip()
    if value not in ("0", "1"):
        raise MalformedRecordError(f"{where}: label must be 0 or 1, got {value!r}")
    return int(value)


def _read_csv(path: Path) -> tuple[list[str], list[tuple[int, dict[str, str]]]]:
    if not path.is_file():
        raise FileNotFoundError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        rows = [(reader.line_num, row) for row in reader]
    return header, rows


def _labels_from_row(row: dict[str, str], where: str) -> tuple[int, int, int] | None:
    raw = [(row.get(k) or "").strip() for k in ("y1", "y2", "y3")]
    if not any(raw):
        return None
    if not all(raw):
        raise MalformedRecordError(f"{where}: partial label triple {raw}")
    return tuple(_parse_label(v, where) for v in raw)  # type: ignore[return-value]


def load_manifest(
    path: str | Path, labels_path: str | Path | None = None
) -> tuple[list[FrameRecord], list[GroundTruth]]:
    """Parse a frame manifest CSV (``frame_id,image_ref,split,y1,y2,y3``).

    Label columns may be blank for unlabeled frames. An optional separate labels
    CSV (``frame_id,y1,y2,y3``) adds labels; rows for unknown frames raise
    DanglingLabelError. Relative image paths resolve against the manifest's directory.
    """
    path = Path(path)
    header, rows = _read_csv(path)
    if tuple(header) != MANIFEST_HEADER:
        raise MalformedRecordError(
            f"{path}: header must be {','.join(MANIFEST_HEADER)}, got {','.join(header)}"
        )
    frames: list[FrameRecord] = []
    truths: dict[str, GroundTruth] = {}
    seen: set[str] = set()
    for line, row in rows:
        where = f"{path}:{line}"
        if None in row:
            raise MalformedRecordError(f"{where}: too many fields")
        frame_id = (row["frame_id"] or "").strip()
        image_ref = (row["image_ref"] or "").strip()
        split = (row["split"] or "").strip()
        if not frame_id:
            raise MalformedRecordError(f"{where}: empty frame_id")
        if frame_id in seen:
            raise MalformedRecordError(f"{where}: duplicate frame_id {frame_id!r}")
        if not image_ref:
            raise MalformedRecordError(f"{where}: empty image_ref for {frame_id!r}")
        if split not in SPLITS:
            raise MalformedRecordError(f"{where}: split must be one of {SPLITS}, got {split!r}")
        seen.add(frame_id)
        frames.append(FrameRecord(frame_id, resolve_ref(image_ref, path.parent), split))
        labels = _labels_from_row(row, where)
        if labels is not None:
            truths[frame_id] = GroundTruth(frame_id, labels)

    if labels_path is not None:
        lpath = Path(labels_path)
        lheader, lrows = _read_csv(lpath)
        if tuple(lheader) != ("frame_id", "y1", "y2", "y3"):
            raise MalformedRecordError(f"{lpath}: header must be frame_id,y1,y2,y3")
        for line, row in lrows:
            where = f"{lpath}:{line}"
            frame_id = (row["frame_id"] or "").strip()
            if frame_id not in seen:
                raise DanglingLabelError(f"{where}: label for unknown frame_id {frame_id!r}")
            labels = _labels_from_row(row, where)
            if labels is None:
                raise MalformedRecordError(f"{where}: missing labels")
            truths[frame_id] = GroundTruth(frame_id, labels)

    order = {f.frame_id: i for i, f in enumerate(frames)}
    return frames, sorted(truths.values(), key=lambda g: order[g.frame_id])


def validate_exemplar_combos(exemplars: ExemplarSet | Sequence[Exemplar]) -> list[str]:
    """Empty iff there are four exemplars whose label triples are exactly {000, 111, 110, 001}."""
    items = list(exemplars)
    problems: list[str] = []
    if len(items) != N_EXEMPLARS:
        problems.append(f"expected {N_EXEMPLARS} exemplars, got {len(items)}")
    counts = Counter(ex.combo for ex in items)
    details = []
    for combo in sorted(c for c, n in counts.items() if n > 1):
        details.append(f"duplicate combo {combo}")
    for combo in sorted(c for c in counts if c not in REQUIRED_COMBOS):
        details.append(f"unexpected combo {combo}")
    for combo in REQUIRED_COMBOS:
        if combo not in counts:
            details.append(f"missing {combo}")
    if details:
        problems.append(
            "; ".join(details) + f" (required set {{{', '.join(REQUIRED_COMBOS)}}})"
        )
    return problems


def _exemplar_from_dict(raw: dict, i: int, base_dir: Path) -> Exemplar:
    where = f"exemplars[{i}]"
    for key in ("frame_id", "image_ref", "labels", "check_answers"):
        if key not in raw:
            raise MalformedRecordError(f"{where}: missing field '{key}'")
    labels = raw["labels"]
    if isinstance(labels, str):
        labels = list(labels)
    if len(labels) != 3 or any(str(y) not in ("0", "1") for y in labels):
        raise MalformedRecordError(f"{where}: labels must be three 0/1 values")
    answers = {}
    for check_id, ans in raw["check_answers"].items():
        verdict = str(ans.get("verdict", "")).strip().lower()
        justification = str(ans.get("justification", "")).strip()
        if verdict not in EXEMPLAR_VERDICTS:
            raise MalformedRecordError(f"{where}.{check_id}: verdict must be yes or no")
        if not justification:
            raise MalformedRecordError(f"{where}.{check_id}: empty justification")
        answers[check_id] = CheckAnswer(verdict, justification)
    frame = FrameRecord(
        str(raw["frame_id"]), resolve_ref(str(raw["image_ref"]), base_dir), raw.get("split", "train")
    )
    return Exemplar(frame, tuple(int(y) for y in labels), answers)  # type: ignore[arg-type]


def load_exemplars(path: str | Path, registry: CheckRegistry) -> ExemplarSet:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"exemplar file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedRecordError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("exemplars"), list):
        raise MalformedRecordError(f"{path}: expected an object with an 'exemplars' list")
    exset = ExemplarSet(
        tuple(_exemplar_from_dict(raw, i, path.parent) for i, raw in enumerate(doc["exemplars"]))
    )

    required = [c.check_id for c in registry.all_checks()]
    for ex in exset:
        missing = [cid for cid in required if cid not in ex.check_answers]
        if missing:
            raise MissingCheckAnswerError(
                f"exemplar {ex.frame.frame_id}: no answer for check(s) {', '.join(missing)}"
            )
    problems = validate_exemplar_combos(exset)
    if problems:
        raise BadComboError("; ".join(problems))
    return exset


def _rank_key(frame_id: str, seed: int) -> str:
    return hashlib.sha256(f"{seed}:{frame_id}".encode()).hexdigest()


def sample_eval_split(frames: Iterable[FrameRecord], fraction: float, seed: int) -> list[FrameRecord]:
    """Deterministic subset of ``round(fraction * n)`` frames, sorted by frame_id.

    Frames are ranked by a seed-keyed SHA-256 of their frame_id, so the choice
    does not depend on input order or on any RNG state.
    """
    frames = list(frames)
    if not frames:
        raise EmptyInputError("cannot sample from an empty frame list")
    if not (0.0 < fraction <= 1.0):
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    size = math.floor(fraction * len(frames) + 0.5)
    ranked = sorted(frames, key=lambda f: (_rank_key(f.frame_id, seed), f.frame_id, f.image_ref))
    return sorted(ranked[:size], key=lambda f: (f.frame_id, f.image_ref))


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
