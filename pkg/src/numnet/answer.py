"""Weak-supervision candidates and greedy decoding of head outputs."""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from numnet.metrics import answer_number, normalize_answer
from numnet.textnum import DropExample, Source, format_number

HUNDRED = 100.0
SIGNS = (0, 1, -1)  # class order of the sign head: zero, plus, minus


class AnswerType(enum.IntEnum):
    PASSAGE_SPAN = 0
    QUESTION_SPAN = 1
    COUNT = 2
    ARITHMETIC = 3


@dataclass(frozen=True)
class AnswerConfig:
    max_nonzero_signs: int = 3
    append_hundred: bool = True
    max_span_len: int = 8
    tolerance: float = 1e-5


@dataclass
class SupervisionSet:
    passage_spans: list[tuple[int, int]] = field(default_factory=list)
    question_spans: list[tuple[int, int]] = field(default_factory=list)
    counts: list[int] = field(default_factory=list)
    sign_assignments: list[tuple[int, ...]] = field(default_factory=list)

    def is_empty(self) -> bool:
        return not (self.passage_spans or self.question_spans or self.counts or self.sign_assignments)


@dataclass
class Prediction:
    answer_type: AnswerType
    text: str
    payload: dict

    def to_record(self, query_id: str) -> dict:
        return {
            "query_id": query_id,
            "type": self.answer_type.name.lower(),
            "text": self.text,
            "payload": self.payload,
        }


def sign_numbers(example: DropExample, append_hundred: bool = True) -> list[float]:
    """Values the arithmetic head assigns signs to, in sign-row order."""
    values = [n.value for n in example.passage_numbers]
    if append_hundred:
        values.append(HUNDRED)
    return values


def gold_numbers(example: DropExample) -> list[float]:
    found = []
    for gold in example.gold_answers:
        for text in (gold.number, *gold.spans):
            if text:
                value = answer_number(text)
                if value is not None and value not in found:
                    found.append(value)
    return found


def _gold_span_targets(example: DropExample) -> list[list[str]]:
    targets = []
    for gold in example.gold_answers:
        for text in (gold.number, *gold.spans):
            norm = normalize_answer(text) if text else []
            if norm and norm not in targets:
                targets.append(norm)
    return targets


def _matching_spans(example: DropExample, source: Source, targets: list[list[str]]) -> list[tuple[int, int]]:
    tokens = example.passage_tokens if source is Source.PASSAGE else example.question_tokens
    token_norm = [normalize_answer(t.text) for t in tokens]
    longest = max((len(t) for t in targets), default=0)
    spans = []
    for s in range(len(tokens)):
        if not token_norm[s]:
            continue
        acc: list[str] = []
        for e in range(s, len(tokens)):
            acc = acc + token_norm[e]
            if len(acc) > longest:
                break
            if token_norm[e] and acc in targets:
                if normalize_answer(example.span_text(source, s, e)) in targets:
                    spans.append((s, e))
    return spans


def sign_assignments(
    values: Sequence[float],
    targets: Sequence[float],
    max_nonzero: int = 3,
    tolerance: float = 1e-5,
) -> list[tuple[int, ...]]:
    """All sign vectors with 1..max_nonzero nonzero entries summing to a target."""
    if not targets:
        return []
    n = len(values)
    found = []
    for k in range(1, min(max_nonzero, n) + 1):
        for positions in itertools.combinations(range(n), k):
            chosen = [values[i] for i in positions]
            for signs in itertools.product((1, -1), repeat=k):
                total = sum(s * v for s, v in zip(signs, chosen))
                if any(abs(total - t) <= tolerance for t in targets):
                    vec = [0] * n
                    for i, s in zip(positions, signs):
                        vec[i] = s
                    found.append(tuple(vec))
    return found


def enumerate_supervision(example: DropExample, config: AnswerConfig = AnswerConfig()) -> SupervisionSet:
    targets = _gold_span_targets(example)
    numbers = gold_numbers(example)
    counts = sorted({int(v) for v in numbers if float(v).is_integer() and 0 <= v <= 9})
    return SupervisionSet(
        passage_spans=_matching_spans(example, Source.PASSAGE, targets),
        question_spans=_matching_spans(example, Source.QUESTION, targets),
        counts=counts,
        sign_assignments=sign_assignments(
            sign_numbers(example, config.append_hundred), numbers,
            config.max_nonzero_signs, config.tolerance,
        ),
    )


# ---------------------------------------------------------------------------
# decoding

def best_span(start_logp: np.ndarray, end_logp: np.ndarray, max_len: int) -> tuple[int, int]:
    """Exact argmax of ``start[s] + end[e]`` over ``s <= e < s + max_len``.

    Ties go to the smallest start, then the smallest end.
    """
    n = len(start_logp)
    scores = np.full((n, max_len), -np.inf)
    for k in range(min(max_len, n)):
        scores[: n - k, k] = start_logp[: n - k] + end_logp[k:]
    flat = int(np.argmax(scores))  # first maximum in row-major order
    s, k = divmod(flat, max_len)
    return s, s + k


def _np(t) -> np.ndarray:
    return t.detach().to("cpu").double().numpy() if hasattr(t, "detach") else np.asarray(t, dtype=float)


def decode(outputs, example: DropExample, config: AnswerConfig = AnswerConfig()) -> Prediction:
    """Greedy decoding: best answer type first, then its best answer."""
    type_logp = _np(outputs.type_logp)
    answer_type = AnswerType(int(np.argmax(type_logp)))
    if answer_type is AnswerType.PASSAGE_SPAN:
        s, e = best_span(_np(outputs.p_start_logp), _np(outputs.p_end_logp), config.max_span_len)
        return Prediction(answer_type, example.span_text(Source.PASSAGE, s, e), {"start": s, "end": e})
    if answer_type is AnswerType.QUESTION_SPAN:
        s, e = best_span(_np(outputs.q_start_logp), _np(outputs.q_end_logp), config.max_span_len)
        return Prediction(answer_type, example.span_text(Source.QUESTION, s, e), {"start": s, "end": e})
    if answer_type is AnswerType.COUNT:
        count = int(np.argmax(_np(outputs.count_logp)))
        return Prediction(answer_type, str(count), {"count": count})
    values = sign_numbers(example, config.append_hundred)
    rows = _np(outputs.sign_logp)
    signs = [SIGNS[int(np.argmax(r))] for r in rows]
    total = sum(s * v for s, v in zip(signs, values))
    return Prediction(
        answer_type,
        format_number(total),
        {"signs": signs, "numbers": values, "total": total},
    )
