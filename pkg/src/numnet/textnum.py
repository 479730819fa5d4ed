"""Tokenization, number extraction and DROP-format corpus handling."""
from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, Sequence, Union

from numnet.exceptions import DropFormatError, SchemaError


class Source(enum.Enum):
    QUESTION = "Q"
    PASSAGE = "P"


class Split(enum.Enum):
    TRAIN = "train"
    DEV = "dev"
    TEST = "test"


@dataclass(frozen=True)
class Token:
    text: str
    char_start: int
    char_end: int


@dataclass(frozen=True)
class NumberOccurrence:
    value: float
    token_index: int
    source: Source


@dataclass(frozen=True)
class GoldAnswer:
    """One gold answer record.

    ``number`` is the raw number string ("" when absent). Date golds are
    rendered into ``spans`` and marked ``unsupported``.
    """

    number: str = ""
    spans: tuple[str, ...] = ()
    unsupported: bool = False

    def text(self) -> str:
        if self.number:
            return self.number
        return " ".join(self.spans)

    def to_json(self) -> dict:
        return {"number": self.number, "spans": list(self.spans)}


@dataclass(frozen=True)
class DropExample:
    passage_id: str
    query_id: str
    passage_text: str
    question_text: str
    passage_tokens: tuple[Token, ...]
    question_tokens: tuple[Token, ...]
    passage_numbers: tuple[NumberOccurrence, ...]
    question_numbers: tuple[NumberOccurrence, ...]
    gold_answers: tuple[GoldAnswer, ...]

    @classmethod
    def from_text(
        cls,
        passage_id: str,
        query_id: str,
        passage: str,
        question: str,
        gold_answers: Sequence[GoldAnswer] = (),
    ) -> "DropExample":
        p_tokens = tuple(tokenize(passage))
        q_tokens = tuple(tokenize(question))
        return cls(
            passage_id=passage_id,
            query_id=query_id,
            passage_text=passage,
            question_text=question,
            passage_tokens=p_tokens,
            question_tokens=q_tokens,
            passage_numbers=tuple(extract_numbers(p_tokens, Source.PASSAGE)),
            question_numbers=tuple(extract_numbers(q_tokens, Source.QUESTION)),
            gold_answers=tuple(gold_answers),
        )

    def gold_texts(self) -> list[str]:
        return [g.text() for g in self.gold_answers]

    def span_text(self, source: Source, start: int, end: int) -> str:
        """Source substring covering tokens ``start..end`` inclusive."""
        if source is Source.PASSAGE:
            tokens, text = self.passage_tokens, self.passage_text
        else:
            tokens, text = self.question_tokens, self.question_text
        return text[tokens[start].char_start:tokens[end].char_end]


@dataclass
class Corpus:
    examples: list[DropExample] = field(default_factory=list)
    split: Split = Split.TRAIN

    def __post_init__(self):
        seen = set()
        for ex in self.examples:
            if ex.query_id in seen:
                raise SchemaError(f"duplicate query_id {ex.query_id!r}")
            seen.add(ex.query_id)

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def __getitem__(self, idx):
        return self.examples[idx]

    def by_query_id(self, query_id: str) -> DropExample:
        for ex in self.examples:
            if ex.query_id == query_id:
                return ex
        raise KeyError(f"unknown query_id {query_id!r}")


# Numbers: optional sign (only when not glued to a preceding word character),
# comma-grouped or plain digit runs, optional decimal part. A number must not
# run straight into another word character ("1960s" stays one word token).
_NUMBER = r"(?:(?<!\w)[+-])?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?(?!\w)"
_TOKEN_RE = re.compile(rf"{_NUMBER}|\w+|[^\w\s]", re.UNICODE)
_NUMBER_RE = re.compile(r"[+-]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?")


def tokenize(text: str) -> list[Token]:
    """Split ``text`` into tokens carrying character offsets.

    >>> [t.text for t in tokenize("a 47-yard field goal")]
    ['a', '47', '-', 'yard', 'field', 'goal']
    """
    return [Token(m.group(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def parse_number(text: str) -> float | None:
    """Parse a single numeric token, or return None."""
    if not _NUMBER_RE.fullmatch(text):
        return None
    value = float(text.replace(",", ""))
    if value != value or value in (float("inf"), float("-inf")):
        return None
    return value


def format_number(x: float) -> str:
    """Render a number the way DROP gold strings write it.

    >>> format_number(4.0), format_number(6.3), format_number(-0.0)
    ('4', '6.3', '0')
    """
    text = f"{float(x):.6f}".rstrip("0").rstrip(".")
    return "0" if text in ("-0", "") else text


def extract_numbers(tokens: Sequence[Token], source: Source) -> list[NumberOccurrence]:
    # "%" after a number is a separate token and leaves the face value alone
    out = []
    for i, tok in enumerate(tokens):
        value = parse_number(tok.text)
        if value is not None:
            out.append(NumberOccurrence(value, i, source))
    return out


def render(tokens: Iterable[Token]) -> str:
    return " ".join(t.text for t in tokens)


def trim(example: DropExample, passage_limit: int, question_limit: int) -> DropExample:
    if passage_limit < 1 or question_limit < 1:
        raise ValueError("trim limits must be >= 1")
    if (len(example.passage_tokens) <= passage_limit
            and len(example.question_tokens) <= question_limit):
        return example
    return replace(
        example,
        passage_tokens=example.passage_tokens[:passage_limit],
        question_tokens=example.question_tokens[:question_limit],
        passage_numbers=tuple(n for n in example.passage_numbers if n.token_index < passage_limit),
        question_numbers=tuple(n for n in example.question_numbers if n.token_index < question_limit),
    )


# ---------------------------------------------------------------------------
# comparing questions

@dataclass(frozen=True)
class Candidates:
    """Token ranges (inclusive-exclusive) of the two "A or B" candidates."""

    a: tuple[int, int]
    b: tuple[int, int]


_MAX_CANDIDATE_TOKENS = 5


def find_candidates(tokens: Sequence[Token]) -> Candidates | None:
    """Locate a question-final ``<A> or <B>?`` segment.

    B is everything between the last "or" and the closing "?". A runs back
    from "or" to the nearest punctuation token; without punctuation within
    reach, A gets as many tokens as B.
    """
    words = [t.text.lower() for t in tokens]
    if len(words) < 4 or words[-1] != "?":
        return None
    try:
        k = len(words) - 1 - words[::-1].index("or")
    except ValueError:
        return None
    b = (k + 1, len(words) - 1)
    b_len = b[1] - b[0]
    if not 1 <= b_len <= _MAX_CANDIDATE_TOKENS:
        return None
    start = k
    while start > 0 and not _is_punct(words[start - 1]) and k - start < _MAX_CANDIDATE_TOKENS:
        start -= 1
    if start == 0 or not _is_punct(words[start - 1]):
        start = k - b_len
    if start < 0 or start == k:
        return None
    a = (start, k)
    if any(_is_punct(w) for w in words[a[0]:a[1]] + words[b[0]:b[1]]):
        return None
    return Candidates(a, b)


def _is_punct(word: str) -> bool:
    return len(word) == 1 and not word.isalnum()


def is_comparing_question(example: DropExample) -> bool:
    return find_candidates(example.question_tokens) is not None


def swap_candidates(example: DropExample) -> DropExample | None:
    """Return a copy of ``example`` with the two candidates swapped, or None."""
    cands = find_candidates(example.question_tokens)
    if cands is None:
        return None
    toks, text = example.question_tokens, example.question_text
    a0, a1 = toks[cands.a[0]].char_start, toks[cands.a[1] - 1].char_end
    b0, b1 = toks[cands.b[0]].char_start, toks[cands.b[1] - 1].char_end
    swapped = text[:a0] + text[b0:b1] + text[a1:b0] + text[a0:a1] + text[b1:]
    q_tokens = tuple(tokenize(swapped))
    return replace(
        example,
        query_id=example.query_id + "#swap",
        question_text=swapped,
        question_tokens=q_tokens,
        question_numbers=tuple(extract_numbers(q_tokens, Source.QUESTION)),
    )


def augment_comparisons(corpus: Corpus, seed: int = 42) -> Corpus:
    """Add a candidate-swapped copy after every comparing question.

    The swap rule is deterministic, so ``seed`` does not change the output;
    it is accepted so augmentation runs are recorded alongside other seeded
    steps.
    """
    if corpus.split is not Split.TRAIN:
        raise ValueError("augmentation applies to a train split only")
    out = []
    for ex in corpus.examples:
        out.append(ex)
        swapped = swap_candidates(ex)
        if swapped is not None:
            out.append(swapped)
    return Corpus(out, corpus.split)


# ---------------------------------------------------------------------------
# DROP JSON

def _gold_from_json(raw: dict, passage_id: str) -> GoldAnswer:
    if not isinstance(raw, dict):
        raise SchemaError(f"answer must be an object (passage_id={passage_id})")
    number = str(raw.get("number", "") or "").strip()
    spans = tuple(str(s) for s in raw.get("spans", []) or [])
    date = raw.get("date") or {}
    date_parts = [str(date.get(k, "") or "").strip() for k in ("day", "month", "year")]
    if not number and not spans and any(date_parts):
        return GoldAnswer("", (" ".join(p for p in date_parts if p),), unsupported=True)
    return GoldAnswer(number, spans)


def _require(obj: dict, key: str, passage_id: str):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(f"missing key {key!r} (passage_id={passage_id})")
    return obj[key]


def parse_drop(data: dict, split: Split = Split.TRAIN) -> Corpus:
    if not isinstance(data, dict):
        raise SchemaError("top level must be an object mapping passage_id to passages")
    examples = []
    for passage_id, entry in data.items():
        passage = _require(entry, "passage", passage_id)
        qa_pairs = _require(entry, "qa_pairs", passage_id)
        for qa in qa_pairs:
            question = _require(qa, "question", passage_id)
            query_id = _require(qa, "query_id", passage_id)
            answer = _require(qa, "answer", passage_id)
            golds = [_gold_from_json(answer, passage_id)]
            golds += [_gold_from_json(a, passage_id) for a in qa.get("validated_answers", []) or []]
            golds = [g for g in golds if g.number or g.spans]
            ex = DropExample.from_text(passage_id, query_id, passage, question, golds)
            if not ex.passage_tokens or not ex.question_tokens:
                raise SchemaError(f"empty passage or question (passage_id={passage_id}, query_id={query_id})")
            examples.append(ex)
    return Corpus(examples, split)


def load_drop_json(stream: Union[IO[bytes], IO[str], bytes, str], split: Split = Split.TRAIN) -> Corpus:
    """Read a DROP-format JSON document into a :class:`Corpus`."""
    raw = stream if isinstance(stream, (bytes, str)) else stream.read()
    text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        offset = len(text[:err.pos].encode("utf-8"))
        raise DropFormatError(f"malformed JSON at byte {offset}: {err.msg}") from err
    return parse_drop(data, split)


def load_drop_file(path, split: Split = Split.TRAIN) -> Corpus:
    with open(path, "rb") as fh:
        return load_drop_json(fh, split)


def corpus_to_drop(corpus: Corpus) -> dict:
    """Inverse of :func:`parse_drop` (validated answers are appended)."""
    out: dict = {}
    for ex in corpus.examples:
        entry = out.setdefault(ex.passage_id, {"passage": ex.passage_text, "qa_pairs": []})
        golds = [g.to_json() for g in ex.gold_answers] or [{"number": "", "spans": []}]
        qa = {"question": ex.question_text, "query_id": ex.query_id, "answer": golds[0]}
        if len(golds) > 1:
            qa["validated_answers"] = golds[1:]
        entry["qa_pairs"].append(qa)
    return out


def dump_drop_json(corpus: Corpus) -> bytes:
    return json.dumps(corpus_to_drop(corpus), indent=1, ensure_ascii=False).encode("utf-8")
