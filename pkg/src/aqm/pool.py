"""Candidate question pools: full enumeration, random subsample, dependency-filtered."""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import Question
from .mnist import MNIST_SCHEMA, CountQuestion, PropertySchema

PROVENANCES = ("full", "randQ", "countQ")


@dataclass(frozen=True)
class QuestionPool:
    questions: tuple
    provenance: str = "full"
    build_seed: int = 0
    note: str = ""

    def __post_init__(self):
        qs = tuple(self.questions)
        if not qs:
            raise ValueError("a question pool must not be empty")
        ids = [q.id for q in qs]
        if len(set(ids)) != len(ids):
            raise ValueError("question ids must be unique within a pool")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        object.__setattr__(self, "questions", qs)

    def __iter__(self):
        return iter(self.questions)

    def __len__(self):
        return len(self.questions)

    def __getitem__(self, i):
        return self.questions[i]

    @property
    def ids(self):
        return [q.id for q in self.questions]


def full_pool(enumeration: Sequence) -> QuestionPool:
    """Every domain question, ids ``0..n-1`` in enumeration order."""
    items = list(enumeration)
    if not items:
        raise ValueError("question enumeration is empty")
    return QuestionPool(tuple(Question(i, p) for i, p in enumerate(items)), "full")


def rand_q(training: Sequence[Question], n: int, seed=0) -> QuestionPool:
    """Uniform sample of ``n`` training questions without replacement."""
    training = list(training)
    if n < 1 or n > len(training):
        raise ValueError(f"cannot sample {n} questions from a set of {len(training)}")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(training), size=n, replace=False)
    return QuestionPool(tuple(training[i] for i in picks), "randQ", int(seed) if isinstance(seed, int) else 0)


class AnswerPairCounts:
    """Joint answer counts for every pair of scored questions.

    Built from an ``(n_items, n_questions)`` answer matrix; the matrix for
    a pair is computed on first access and cached.
    """

    def __init__(self, answers, question_ids, n_symbols: int):
        self.answers = np.asarray(answers, dtype=np.int64)
        self.question_ids = [int(i) for i in question_ids]
        self.n_symbols = int(n_symbols)
        if self.answers.ndim != 2 or self.answers.shape[1] != len(self.question_ids):
            raise ValueError("answers must be (n_items, n_questions)")
        self._col = {qid: j for j, qid in enumerate(self.question_ids)}
        self._cache = {}

    @property
    def n_items(self) -> int:
        return self.answers.shape[0]

    def __contains__(self, pair):
        i, j = pair
        return i in self._col and j in self._col

    def __getitem__(self, pair) -> np.ndarray:
        i, j = pair
        if (i, j) in self._cache:
            return self._cache[(i, j)]
        if (j, i) in self._cache:
            return self._cache[(j, i)].T
        a = self.answers[:, self._col[i]]
        b = self.answers[:, self._col[j]]
        m = np.bincount(a * self.n_symbols + b, minlength=self.n_symbols**2)
        m = m.reshape(self.n_symbols, self.n_symbols)
        self._cache[(i, j)] = m
        return m


def pairwise_agreement(i: int, j: int, counts: AnswerPairCounts) -> float:
    """Empirical probability that questions ``i`` and ``j`` get the same answer."""
    if (i, j) not in counts:
        raise KeyError(f"unscored-pair: ({i}, {j}) not in counts")
    m = counts[(i, j)]
    total = m.sum()
    if total == 0:
        raise ValueError(f"unscored-pair: ({i}, {j}) has no scored items")
    return float(np.trace(m) / total)


def score_answers(items, candidates: Sequence[Question], oracle: Callable) -> np.ndarray:
    """``(n_items, n_candidates)`` matrix; ``oracle(items, question)`` answers all items at once."""
    return np.column_stack([np.asarray(oracle(items, q), dtype=np.int64) for q in candidates])


def count_q(items, candidates: Sequence[Question], n: int, threshold: float = 0.95,
            oracle: Callable = None, n_symbols: int = None) -> QuestionPool:
    """Greedy dependency filter over candidates in ascending id order.

    A candidate is kept iff its answer agreement with every question already
    kept is strictly below ``threshold``. Stops after ``n`` acceptances.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0, 1]")
    if n < 1:
        raise ValueError("n must be >= 1")
    ordered = sorted(candidates, key=lambda q: q.id)
    answers = score_answers(items, ordered, oracle)
    if n_symbols is None:
        n_symbols = int(answers.max()) + 1 if answers.size else 1
    counts = AnswerPairCounts(answers, [q.id for q in ordered], n_symbols)
    kept = []
    for q in ordered:
        if all(pairwise_agreement(q.id, k.id, counts) < threshold for k in kept):
            kept.append(q)
            if len(kept) == n:
                break
    note = "" if len(kept) == n else f"short: {len(kept)} of {n} requested passed the filter"
    return QuestionPool(tuple(kept), "countQ", 0, note)


# ---------------------------------------------------------------------------
# pool files: "<id>\t<property>\t<value>\t<provenance>" per line
# ---------------------------------------------------------------------------

def save_pool(pool: QuestionPool, path, force: bool = False) -> None:
    if os.path.exists(path) and not force:
        raise FileExistsError(f"{path} exists (use force to overwrite)")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for q in pool:
            fh.write(f"{q.id}\t{q.payload.property}\t{q.payload.value}\t{pool.provenance}\n")


def load_pool(path, schema: PropertySchema = MNIST_SCHEMA) -> QuestionPool:
    qs, provs = [], set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields")
            qid, prop, value, prov = parts
            cq = CountQuestion(prop, value)
            schema.validate(cq)
            if int(qid) != schema.column(cq):
                raise ValueError(f"{path}:{lineno}: id {qid} does not match {prop}={value}")
            qs.append(Question(int(qid), cq))
            provs.add(prov)
    if len(provs) > 1:
        raise ValueError(f"{path}: mixed provenance tags {sorted(provs)}")
    return QuestionPool(tuple(qs), provs.pop() if provs else "full")
