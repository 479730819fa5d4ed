"""Input validation helpers shared by the estimator and the CLI."""
from __future__ import annotations

from typing import Iterable

from numnet.exceptions import ContractError
from numnet.textnum import Corpus, DropExample, Split


def check_corpus(X, split: Split | None = None) -> Corpus:
    """Accept a :class:`Corpus` or an iterable of examples and return a Corpus."""
    if isinstance(X, Corpus):
        corpus = X
    elif isinstance(X, DropExample):
        corpus = Corpus([X], split or Split.TRAIN)
    elif isinstance(X, Iterable) and not isinstance(X, (str, bytes)):
        items = list(X)
        bad = [type(x).__name__ for x in items if not isinstance(x, DropExample)]
        if bad:
            raise TypeError(f"expected DropExample items, got {bad[0]}")
        corpus = Corpus(items, split or Split.TRAIN)
    else:
        raise TypeError(f"expected a Corpus or a list of DropExample, got {type(X).__name__}")
    for ex in corpus.examples:
        if not ex.passage_tokens or not ex.question_tokens:
            raise ContractError(f"example {ex.query_id!r} has an empty passage or question")
    return corpus


def check_positive(name: str, value, allow_zero: bool = False):
    if value < 0 or (value == 0 and not allow_zero):
        raise ValueError(f"{name} must be {'non-negative' if allow_zero else 'positive'}, got {value!r}")
    return value
