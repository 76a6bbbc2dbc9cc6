"""Answer models the questioner holds of the answerer, for count questions.

Both models depend on a candidate image only through the true count for the
asked question, so they are exposed to the engine as
:class:`~aqm.core.TabularLikelihood` objects keyed by true count.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .core import Question, TabularLikelihood
from .mnist import (
    MNIST_SCHEMA,
    N_ANSWERS,
    CountQuestion,
    DigitImage,
    NoisyAnswerer,
    PropertySchema,
    World,
    answer_distribution,
    answer_world,
    true_count,
)

REGIMES = ("indA", "depA", "trueA")
FORMAT_TAG = "aqm-confusion"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainingRegime:
    tag: str = "depA"
    train_fraction: float = 1.0

    def __post_init__(self):
        if self.tag not in REGIMES:
            raise ValueError(f"unknown regime {self.tag!r}; expected one of {REGIMES}")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError("train_fraction must lie in (0, 1]")


@dataclass(frozen=True, eq=False)
class ConfusionModel:
    """Per-question counts of (true count, reported count) pairs with additive smoothing.

    ``counts[k]`` is the 17x17 table of question ``question_ids[k]``.
    """

    question_ids: tuple
    counts: np.ndarray
    epsilon: float = 1.0
    epsilon_prime: float = None
    schema: PropertySchema = MNIST_SCHEMA

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        qids = tuple(int(q) for q in self.question_ids)
        if counts.shape != (len(qids), N_ANSWERS, N_ANSWERS):
            raise ValueError(f"counts must be ({len(qids)}, {N_ANSWERS}, {N_ANSWERS})")
        if (counts < 0).any():
            raise ValueError("counts must be nonnegative")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        eps_prime = N_ANSWERS * self.epsilon if self.epsilon_prime is None else self.epsilon_prime
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "question_ids", qids)
        object.__setattr__(self, "epsilon_prime", float(eps_prime))
        object.__setattr__(self, "epsilon", float(self.epsilon))

    def table(self, qid: int) -> np.ndarray:
        """Smoothed ``p(reported | true)`` for question ``qid``; rows are distributions."""
        try:
            c = self.counts[self.question_ids.index(qid)]
        except ValueError:
            c = np.zeros((N_ANSWERS, N_ANSWERS), dtype=np.int64)
        return (c + self.epsilon) / (c.sum(axis=1, keepdims=True) + self.epsilon_prime)

    def tables(self, n_questions: int) -> np.ndarray:
        return np.stack([self.table(q) for q in range(n_questions)])


def _questions(questions) -> list:
    out = []
    for q in questions:
        if isinstance(q, Question):
            out.append(q)
        else:
            raise TypeError("expected core Question objects with CountQuestion payloads")
    return out


def train_confusion(train: World, questions, label_source: NoisyAnswerer = None, rng=None,
                    epsilon: float = 1.0, train_fraction: float = 1.0) -> ConfusionModel:
    """Count (true answer, label answer) pairs for every training image and question.

    ``label_source=None`` labels with the true count (indA); a
    :class:`NoisyAnswerer` labels with its sampled answers (depA).
    """
    if len(train) == 0:
        raise ValueError("training set is empty")
    if train_fraction < 1.0:
        train = train.subset(max(1, int(round(len(train) * train_fraction))))
    rng = np.random.default_rng(rng)
    qs = _questions(questions)
    truth = train.true_counts
    counts = np.zeros((len(qs), N_ANSWERS, N_ANSWERS), dtype=np.int64)
    for k, q in enumerate(qs):
        real = truth[:, train.schema.column(q.payload)]
        if label_source is None:
            feat = real
        else:
            feat = answer_world(label_source, train, q.payload, rng)
        np.add.at(counts[k], (real, feat), 1)
    return ConfusionModel(tuple(q.id for q in qs), counts, epsilon, schema=train.schema)


def confusion_likelihood(m: ConfusionModel, c: DigitImage, q, a: int) -> float:
    cq = q.payload if isinstance(q, Question) else q
    return float(m.table(m.schema.column(cq))[true_count(c, cq), a])


def true_likelihood(ans: NoisyAnswerer, c: DigitImage, q: CountQuestion, a: int) -> float:
    return float(answer_distribution(ans, c, q).probs[a])


def confusion_model_likelihood(m: ConfusionModel, candidates: World) -> TabularLikelihood:
    """Engine-facing likelihood over ``candidates`` backed by a trained confusion model.

    Questions the model was not trained on get the untrained (uniform) row.
    """
    return TabularLikelihood(candidates.question_keys, m.tables(candidates.schema.n_questions))


def true_model_likelihood(ans: NoisyAnswerer, candidates: World) -> TabularLikelihood:
    """Engine-facing likelihood using the answerer's exact channel."""
    tables = np.stack([ans.count_table(q) for q in candidates.schema.questions])
    return TabularLikelihood(candidates.question_keys, tables)


def build_likelihood(regime: TrainingRegime, candidates: World, answerer: NoisyAnswerer,
                     train: World = None, questions=None, rng=None, epsilon: float = 1.0):
    """Likelihood for a regime; returns ``(likelihood, confusion model or None)``."""
    if regime.tag == "trueA":
        return true_model_likelihood(answerer, candidates), None
    if train is None or questions is None:
        raise ValueError(f"{regime.tag} needs training images and questions")
    source = answerer if regime.tag == "depA" else None
    m = train_confusion(train, questions, source, rng, epsilon, regime.train_fraction)
    return confusion_model_likelihood(m, candidates), m


# ---------------------------------------------------------------------------
# model files
#
#   aqm-confusion 1
#   epsilon <repr>
#   epsilon_prime <repr>
#   questions <n>
#   q <id> <property> <value>
#   17 lines of 17 space-separated integers
#   ...
# ---------------------------------------------------------------------------

def format_confusion(m: ConfusionModel) -> str:
    lines = [
        f"{FORMAT_TAG} {FORMAT_VERSION}",
        f"epsilon {m.epsilon!r}",
        f"epsilon_prime {m.epsilon_prime!r}",
        f"questions {len(m.question_ids)}",
    ]
    qs = m.schema.questions
    for k, qid in enumerate(m.question_ids):
        cq = qs[qid]
        lines.append(f"q {qid} {cq.property} {cq.value}")
        lines.extend(" ".join(str(int(x)) for x in row) for row in m.counts[k])
    return "\n".join(lines) + "\n"


def save_confusion(m: ConfusionModel, path, force: bool = False) -> None:
    if os.path.exists(path) and not force:
        raise FileExistsError(f"{path} exists (use force to overwrite)")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_confusion(m))


def load_confusion(path, schema: PropertySchema = MNIST_SCHEMA) -> ConfusionModel:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    try:
        tag, version = lines[0].split()
        if tag != FORMAT_TAG or int(version) != FORMAT_VERSION:
            raise ValueError(f"unsupported header {lines[0]!r}")
        eps = float(lines[1].split()[1])
        eps_prime = float(lines[2].split()[1])
        n = int(lines[3].split()[1])
        qids, tables = [], []
        pos = 4
        for _ in range(n):
            _, qid, prop, value = lines[pos].split(" ", 3)
            if schema.column(CountQuestion(prop, value)) != int(qid):
                raise ValueError(f"question id {qid} does not match {prop}={value}")
            rows = [[int(x) for x in lines[pos + 1 + r].split()] for r in range(N_ANSWERS)]
            qids.append(int(qid))
            tables.append(rows)
            pos += 1 + N_ANSWERS
    except (IndexError, ValueError, KeyError) as exc:
        raise ValueError(f"{path}: malformed confusion model ({exc})") from None
    counts = np.array(tables, dtype=np.int64).reshape(n, N_ANSWERS, N_ANSWERS)
    return ConfusionModel(tuple(qids), counts, eps, eps_prime, schema)
