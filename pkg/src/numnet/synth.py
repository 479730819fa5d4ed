"""Template-generated DROP-style corpora for hermetic end-to-end runs.

Three families mirror common numerical question styles:

* ``comparison`` -- "Which group is larger: A or B?" over labeled counts,
  answered by a passage span.
* ``arithmetic`` -- differences between the longest field goals, answered
  by a number equal to a difference of two passage numbers.
* ``count`` -- "How many groups made up more than t%?", answered by an
  integer in 0..9.

Golds are computed from the generated numbers, so every example is
consistent by construction.
"""
from __future__ import annotations

import random
from dataclasses import dataclass

from numnet.textnum import Corpus, DropExample, GoldAnswer, Split, format_number

FAMILIES = ("comparison", "arithmetic", "count")

GROUPS = (
    "Germans", "English", "Irish", "Italians", "Poles", "French", "Dutch",
    "Swedes", "Norwegians", "Scots", "Welsh", "Greeks", "Danes", "Finns",
    "Czechs", "Hungarians", "Russians", "Spaniards",
)
KICKERS = (
    "Janikowski", "Mare", "Nugent", "Akers", "Kaeding", "Gould", "Bironas",
    "Crosby", "Hanson", "Feely", "Carney", "Tynes",
)
QUARTERS = ("first", "second", "third", "fourth")
AGE_GROUPS = (
    "under 18", "between 18 and 24", "between 25 and 44", "between 45 and 64",
    "over 65", "of Asian descent", "of African descent", "of Hispanic origin",
    "married couples", "single parents", "veterans", "students",
)


@dataclass(frozen=True)
class SyntheticSpec:
    family: str = "mixed"
    size: int = 100
    min_value: int = 1
    max_value: int = 99
    seed: int = 42

    def __post_init__(self):
        if self.family not in FAMILIES + ("mixed",):
            raise ValueError(f"unknown family {self.family!r}")
        if self.size < 1:
            raise ValueError("size must be >= 1")
        if self.max_value - self.min_value < 10:
            raise ValueError("value range must span at least 10")


def _distinct(rng: random.Random, k: int, lo: int, hi: int) -> list[int]:
    return rng.sample(range(lo, hi + 1), k)


def _comparison(rng: random.Random, spec: SyntheticSpec, qid: str) -> DropExample:
    k = rng.randint(3, 5)
    names = rng.sample(GROUPS, k)
    values = _distinct(rng, k, spec.min_value, spec.max_value)
    year = rng.randint(1990, 2015)
    parts = [f"{v} {n}" for n, v in zip(names, values)]
    passage = f"In the {year} census of the town, there were " + ", ".join(parts[:-1]) + f" and {parts[-1]}."
    i, j = rng.sample(range(k), 2)
    larger = rng.random() < 0.5
    word = "larger" if larger else "smaller"
    question = f"Which group is {word}: {names[i]} or {names[j]}?"
    pick = (values[i] > values[j]) == larger
    answer = names[i] if pick else names[j]
    return DropExample.from_text(f"p-{qid}", qid, passage, question, [GoldAnswer("", (answer,))])


def _arithmetic(rng: random.Random, spec: SyntheticSpec, qid: str) -> DropExample:
    k = rng.randint(3, 5)
    values = _distinct(rng, k, spec.min_value, spec.max_value)
    kickers = [rng.choice(KICKERS) for _ in range(k)]
    sentences = [
        f"In the {rng.choice(QUARTERS)} quarter {who} made a {v}-yard field goal."
        for who, v in zip(kickers, values)
    ]
    ranked = sorted(values, reverse=True)
    if rng.random() < 0.5:
        question = "How many more yards was the longest field goal than the second longest one?"
        gold = ranked[0] - ranked[1]
    else:
        question = "How many yards longer was the longest field goal than the shortest one?"
        gold = ranked[0] - ranked[-1]
    return DropExample.from_text(f"p-{qid}", qid, " ".join(sentences), question,
                                 [GoldAnswer(format_number(gold))])


def _count(rng: random.Random, spec: SyntheticSpec, qid: str) -> DropExample:
    k = rng.randint(4, 8)
    groups = rng.sample(AGE_GROUPS, k)
    lo, hi = max(spec.min_value, 1), min(spec.max_value, 40)
    values = _distinct(rng, k, lo, hi)
    threshold = rng.choice([v for v in range(lo, hi + 1) if v not in values])
    parts = [f"{v}% were {g}" for g, v in zip(groups, values)]
    passage = "Of the population, " + ", ".join(parts[:-1]) + f", and {parts[-1]}."
    question = f"How many groups made up more than {threshold}% of the population?"
    gold = sum(v > threshold for v in values)
    return DropExample.from_text(f"p-{qid}", qid, passage, question, [GoldAnswer(str(gold))])


_BUILDERS = {"comparison": _comparison, "arithmetic": _arithmetic, "count": _count}


def gen_synthetic(spec: SyntheticSpec, split: Split = Split.TRAIN) -> Corpus:
    rng = random.Random(f"numnet-synth:{spec.seed}")
    examples = []
    for i in range(spec.size):
        family = FAMILIES[i % len(FAMILIES)] if spec.family == "mixed" else spec.family
        examples.append(_BUILDERS[family](rng, spec, f"{family}-{spec.seed}-{i}"))
    return Corpus(examples, split)


def toy_corpus() -> Corpus:
    """Four tiny examples, one per answer type, for gradient checks."""
    rows = [
        ("In 2003 there were 12 Germans and 15 English.",
         "Which group is larger: Germans or English?", GoldAnswer("", ("English",))),
        ("There were 40 Dutch and 35 Poles.",
         "Were there 50 Irish in 2003 or Danes?", GoldAnswer("", ("Irish",))),
        ("Of the population, 6.3% were young, 7.9% were old and 8.5% were other.",
         "How many groups made up more than 7% of the population?", GoldAnswer("2")),
        ("Janikowski made a 31-yard field goal and a 36-yard field goal.",
         "How many more yards was the longest field goal than the second longest one?", GoldAnswer("5")),
    ]
    return Corpus([
        DropExample.from_text(f"toy-p{i}", f"toy-{i}", p, q, [g]) for i, (p, q, g) in enumerate(rows)
    ])
