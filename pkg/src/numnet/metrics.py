"""Exact match and numerically-focused F1, maximized over gold answer sets."""
from __future__ import annotations

import json
import logging
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from numnet.exceptions import ContractError
from numnet.textnum import Corpus, format_number, is_comparing_question, parse_number

logger = logging.getLogger(__name__)

NUMERIC_TOLERANCE = 1e-5
ARTICLES = frozenset({"a", "an", "the"})
_PUNCT = set(string.punctuation)
_SPLIT_RE = re.compile(r"[\s\-–—]+")

REPORT_HEADER = (
    "# F1 is single-span bag-of-tokens F1 with a numeric gate; "
    "multi-span alignment of the official DROP scorer is not applied."
)


def _as_number(piece: str) -> float | None:
    value = parse_number(piece)
    if value is None:
        value = parse_number(piece.strip(string.punctuation.replace("-", "").replace("+", "")))
    return value


def normalize_answer(text: str) -> list[str]:
    """Lowercase, split on whitespace and hyphens, canonicalize numbers,
    strip punctuation and drop articles.

    >>> normalize_answer("The 47-yard")
    ['47', 'yard']
    """
    out = []
    for piece in _SPLIT_RE.split(text.lower()):
        if not piece:
            continue
        value = _as_number(piece)
        if value is not None:
            out.append(format_number(value))
            continue
        word = "".join(ch for ch in piece if ch not in _PUNCT)
        if word and word not in ARTICLES:
            out.append(word)
    return out


def answer_number(text: str) -> float | None:
    """Numeric value of an answer string that is a single number, else None."""
    text = text.strip()
    value = parse_number(text)
    if value is not None:
        return value
    tokens = normalize_answer(text)
    if len(tokens) == 1:
        return parse_number(tokens[0])
    return None


def exact_match(pred: str, golds: Sequence[str]) -> int:
    if not golds:
        raise ContractError("exact_match needs at least one gold answer")
    p = normalize_answer(pred)
    return int(any(p == normalize_answer(g) for g in golds))


def _bag_f1(pred: list[str], gold: list[str]) -> float:
    if not pred and not gold:
        return 1.0
    if not pred or not gold:
        return 0.0
    common = sum((Counter(pred) & Counter(gold)).values())
    return 2.0 * common / (len(pred) + len(gold))


def _f1_single(pred: str, gold: str) -> float:
    gold_value = answer_number(gold)
    if gold_value is not None:
        pred_value = answer_number(pred)
        if pred_value is None or abs(pred_value - gold_value) > NUMERIC_TOLERANCE:
            return 0.0
    return _bag_f1(normalize_answer(pred), normalize_answer(gold))


def numerically_focused_f1(pred: str, golds: Sequence[str]) -> float:
    if not golds:
        raise ContractError("numerically_focused_f1 needs at least one gold answer")
    return max(_f1_single(pred, g) for g in golds)


@dataclass
class SliceScore:
    name: str
    em: float
    f1: float
    n: int


@dataclass
class MetricReport:
    em: float
    f1: float
    per_example: list[tuple[str, int, float]]
    slices: list[SliceScore] = field(default_factory=list)
    missing: int = 0

    def slice(self, name: str) -> SliceScore:
        for s in self.slices:
            if s.name == name:
                return s
        raise KeyError(name)

    def format_table(self) -> str:
        lines = [REPORT_HEADER, f"{'slice':12s} {'EM':>7s} {'F1':>7s} {'N':>6s}"]
        for s in self.slices:
            lines.append(f"{s.name:12s} {100 * s.em:7.2f} {100 * s.f1:7.2f} {s.n:6d}")
        return "\n".join(lines)

    def per_example_jsonl(self) -> str:
        return "".join(
            json.dumps({"query_id": q, "em": em, "f1": f1}) + "\n" for q, em, f1 in self.per_example
        )


def _mean(xs: Sequence[float]) -> float:
    return sum(xs) / len(xs) if xs else 0.0


def has_numeric_gold(golds: Iterable[str]) -> bool:
    return any(answer_number(g) is not None for g in golds)


DEFAULT_SLICES = ("Comparison", "Number", "ALL")


def evaluate(
    predictions: Mapping[str, str] | Sequence[dict],
    corpus: Corpus,
    slices: Sequence[str] = DEFAULT_SLICES,
) -> MetricReport:
    """Score predictions against a gold corpus.

    ``predictions`` is either a query_id -> answer text mapping or a list of
    prediction records carrying ``query_id`` and ``text``.
    """
    if isinstance(predictions, Mapping):
        by_id = dict(predictions)
    else:
        by_id = {}
        for rec in predictions:
            qid = rec["query_id"]
            if qid in by_id:
                raise ValueError(f"duplicate query_id {qid!r} in predictions")
            by_id[qid] = rec["text"]

    per_example = []
    members: dict[str, list[int]] = {name: [] for name in slices}
    missing = 0
    for ex in corpus.examples:
        golds = ex.gold_texts()
        if not golds:
            continue
        if ex.query_id in by_id:
            pred = by_id[ex.query_id]
            em, f1 = exact_match(pred, golds), numerically_focused_f1(pred, golds)
        else:
            missing += 1
            em, f1 = 0, 0.0
        i = len(per_example)
        per_example.append((ex.query_id, em, f1))
        if "ALL" in members:
            members["ALL"].append(i)
        if "Number" in members and has_numeric_gold(golds):
            members["Number"].append(i)
        if "Comparison" in members and is_comparing_question(ex):
            members["Comparison"].append(i)
    if missing:
        logger.warning("%d gold examples have no prediction; scored 0", missing)

    rows = []
    for name in slices:
        idx = members[name]
        rows.append(SliceScore(
            name,
            _mean([per_example[i][1] for i in idx]),
            _mean([per_example[i][2] for i in idx]),
            len(idx),
        ))
    return MetricReport(
        em=_mean([e[1] for e in per_example]),
        f1=_mean([e[2] for e in per_example]),
        per_example=per_example,
        slices=rows,
        missing=missing,
    )
