"""Turn raw model text into check verdicts, scalar judgments and aggregation scores."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Callable, Sequence

from .registry import Check

log = logging.getLogger(__name__)

VERDICTS = ("yes", "no", "uncertain", "unparseable")


@dataclass(frozen=True)
class CheckVerdict:
    check_id: str
    verdict: str
    justification: str = ""

    @property
    def binary(self) -> int:
        # Only an affirmative answer counts; no/uncertain/unparseable are insufficient evidence.
        return 1 if self.verdict == "yes" else 0

    def to_dict(self) -> dict:
        return {
            "check_id": self.check_id,
            "verdict": self.verdict,
            "justification": self.justification,
            "binary": self.binary,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CheckVerdict":
        return cls(d["check_id"], d["verdict"], d.get("justification", ""))


def binarize(verdict: str) -> int:
    if verdict not in VERDICTS:
        raise ValueError(f"unknown verdict {verdict!r}")
    return 1 if verdict == "yes" else 0


@dataclass(frozen=True)
class ScalarJudgment:
    verdict: str
    confidence: float


@dataclass(frozen=True)
class ParseFailure:
    where: str  # free-form location, e.g. "check c2_5" or "agg score"
    excerpt: str
    context: tuple[tuple[str, str], ...] = ()

    def render(self) -> str:
        ctx = " ".join(f"{k}={v}" for k, v in self.context)
        return f"{ctx} {self.where}: {self.excerpt!r}".strip()


FailureSink = Callable[[ParseFailure], None]


def _report(sink: FailureSink | None, where: str, text: str) -> None:
    excerpt = text.strip().replace("\n", " ")[:120]
    log.info("parse failure (%s): %r", where, excerpt)
    if sink is not None:
        sink(ParseFailure(where, excerpt))


@lru_cache(maxsize=None)
def synonym_table() -> dict[str, str]:
    """Phrase -> canonical verdict, loaded from the shipped JSON asset."""
    ref = resources.files("sumofchecks") / "data" / "verdict_synonyms.json"
    raw = json.loads(ref.read_text(encoding="utf-8"))
    return {phrase.lower(): canon for canon, phrases in raw.items() for phrase in phrases}


@lru_cache(maxsize=None)
def _verdict_regex() -> re.Pattern[str]:
    # longest first so "not satisfied" wins over "satisfied"
    phrases = sorted(synonym_table(), key=len, reverse=True)
    alt = "|".join(re.escape(p).replace(r"\ ", r"\s+") for p in phrases)
    return re.compile(rf"(?<![\w-])({alt})(?![\w-])", re.IGNORECASE)


def _canon(phrase: str) -> str:
    return synonym_table()[re.sub(r"\s+", " ", phrase.lower())]


_BULLET = re.compile(r"^\s*(?:[-*•>]+|\(?\d+[.)])?\s*")
_DECOR_EDGE = re.compile(r"^[\s*`_\"'\[]*")
_SEP = re.compile(r"^\s*(?:[—–\-:|,;.=]+|\(|because\b)?\s*", re.IGNORECASE)


def _parse_check_line(line: str, known: dict[str, str]) -> tuple[str, str, str] | None:
    """Parse ``<check_id> : <verdict> <sep> <justification>``; None if the line doesn't match."""
    body = _BULLET.sub("", line, count=1)
    m = re.match(r"\s*[*`_]*([A-Za-z][\w.]*)[*`_]*\s*(?:\([^)]*\))?\s*[:=]\s*(.*)$", body)
    if not m:
        return None
    check_id = known.get(m.group(1).lower())
    if check_id is None:
        return None
    rest = _DECOR_EDGE.sub("", m.group(2), count=1)
    vm = _verdict_regex().match(rest)
    if not vm:
        return check_id, "unparseable", ""
    tail = _DECOR_EDGE.sub("", rest[vm.end():], count=1)
    sep = _SEP.match(tail)
    justification = tail[sep.end():].strip()
    if "(" in sep.group(0) and justification.endswith(")"):
        justification = justification[:-1].rstrip()
    return check_id, _canon(vm.group(1)), justification


def parse_check_verdicts(
    text: str,
    checks: Sequence[Check],
    failures: FailureSink | None = None,
) -> list[CheckVerdict]:
    """One verdict per check, in check order. Never raises.

    A missing or malformed line becomes ``unparseable`` (binary 0) and is reported
    to ``failures``. The first well-formed line for a check wins.
    """
    known = {c.check_id.lower(): c.check_id for c in checks}
    found: dict[str, CheckVerdict] = {}
    bad_lines: dict[str, str] = {}
    for line in (text or "").splitlines():
        parsed = _parse_check_line(line, known)
        if parsed is None:
            continue
        check_id, verdict, justification = parsed
        if verdict == "unparseable":
            bad_lines.setdefault(check_id, line)
            continue
        found.setdefault(check_id, CheckVerdict(check_id, verdict, justification))

    out = []
    for chk in checks:
        v = found.get(chk.check_id)
        if v is None:
            raw = bad_lines.get(chk.check_id, "<missing line>")
            _report(failures, f"check {chk.check_id}", raw)
            v = CheckVerdict(chk.check_id, "unparseable", "")
        out.append(v)
    return out


_NUMBER = r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?"
_NUM_RE = re.compile(rf"({_NUMBER})\s*(%?)")
_SCORE_TOKEN = re.compile(r"\b(score|confidence|probability)\b", re.IGNORECASE)


def _to_float(match: re.Match[str]) -> float:
    value = float(match.group(1))
    return value / 100.0 if match.group(2) == "%" else value


def _clamp(x: float) -> float:
    return min(1.0, max(0.0, x))


def extract_score(text: str) -> float | None:
    """First number after the last score/confidence token, else the first number in [0, 1].

    The labeled value is clamped to [0, 1]; a trailing ``%`` divides by 100.
    """
    text = text or ""
    tokens = list(_SCORE_TOKEN.finditer(text))
    if tokens:
        m = _NUM_RE.search(text, tokens[-1].end())
        if m:
            return _clamp(_to_float(m))
    for m in _NUM_RE.finditer(text):
        value = _to_float(m)
        if 0.0 <= value <= 1.0:
            return value
    return None


_VERDICT_LABEL = re.compile(r"\b(?:final\s+)?(?:verdict|answer)\s*[:=]\s*", re.IGNORECASE)


def _extract_verdict(text: str) -> str | None:
    labels = list(_VERDICT_LABEL.finditer(text))
    if labels:
        m = _verdict_regex().match(_DECOR_EDGE.sub("", text[labels[-1].end():], count=1))
        if m:
            return _canon(m.group(1))
    hits = list(_verdict_regex().finditer(text))
    return _canon(hits[-1].group(1)) if hits else None


def parse_scalar_judgment(text: str, failures: FailureSink | None = None) -> ScalarJudgment:
    """Final yes/no verdict plus a confidence that the criterion is satisfied.

    Without an explicit confidence, yes -> 1.0 and no -> 0.0. An "uncertain"
    answer is read as no.
    """
    verdict = _extract_verdict(text or "")
    if verdict == "uncertain":
        verdict = "no"
    confidence = extract_score(text or "")
    if verdict is None:
        if confidence is None:
            _report(failures, "scalar judgment", text or "")
            return ScalarJudgment("unparseable", 0.0)
        return ScalarJudgment("unparseable", confidence)
    if confidence is None:
        confidence = 1.0 if verdict == "yes" else 0.0
    return ScalarJudgment(verdict, confidence)


def parse_agg_score(text: str, failures: FailureSink | None = None) -> float:
    score = extract_score(text or "")
    if score is None:
        _report(failures, "aggregation score", text or "")
        return 0.0
    return score
