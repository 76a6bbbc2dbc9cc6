"""Domain-agnostic questioner engine.

Belief tracking over a finite set of candidate classes, information-gain
question selection against an approximate answerer model, and the dialog
loop that ties them together. Everything here is independent of what a
"question" or an "answer" means; answers are integer symbols ``0..A-1`` and
questions carry an opaque payload.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp, xlogy

from . import _kernels

# gains within this distance of the best are treated as ties
GAIN_TIE_TOL = 1e-12
NEGATIVE_GAIN_TOL = 1e-12
DEFAULT_MAX_LEAVES = 10**7


class AQMError(Exception):
    """Base class for errors raised by the engine; ``code`` is a stable tag."""

    code = "aqm-error"


class ImpossibleAnswerError(AQMError):
    code = "impossible-answer"


class NoCandidateQuestionError(AQMError):
    code = "no-candidate-question"


class LookaheadTooLargeError(AQMError):
    code = "lookahead-too-large"


class AnswererError(AQMError):
    """Raised by an answer oracle when it cannot produce an answer for a turn.

    The dialog loop records it and scores the game as a loss.
    """

    code = "answerer-error"


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassSpace:
    class_ids: tuple

    def __post_init__(self):
        ids = tuple(self.class_ids)
        if not ids:
            raise ValueError("class space must contain at least one class")
        if len(set(ids)) != len(ids):
            raise ValueError("class identifiers must be unique")
        object.__setattr__(self, "class_ids", ids)

    @property
    def n_classes(self) -> int:
        return len(self.class_ids)

    @classmethod
    def range(cls, n: int) -> "ClassSpace":
        return cls(tuple(range(n)))


@dataclass(frozen=True)
class Question:
    id: int
    payload: Any = None


@dataclass(frozen=True)
class AnswerAlphabet:
    symbols: tuple

    @property
    def size(self) -> int:
        return len(self.symbols)

    @classmethod
    def counts(cls, max_count: int) -> "AnswerAlphabet":
        return cls(tuple(range(max_count + 1)))


def _normalize_log(log_w: np.ndarray) -> np.ndarray:
    log_w = np.asarray(log_w, dtype=np.float64)
    if np.isnan(log_w).any():
        raise ValueError("log weights contain NaN")
    z = logsumexp(log_w)
    if not np.isfinite(z):
        raise ImpossibleAnswerError("all classes have zero probability")
    return log_w - z


@dataclass(frozen=True, eq=False)
class Prior:
    log_weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "log_weights", _normalize_log(self.log_weights))

    @classmethod
    def uniform(cls, n_classes: int) -> "Prior":
        if n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        return cls(np.full(n_classes, -math.log(n_classes)))

    @classmethod
    def from_probs(cls, probs) -> "Prior":
        with np.errstate(divide="ignore"):
            return cls(np.log(np.asarray(probs, dtype=np.float64)))

    @property
    def n_classes(self) -> int:
        return self.log_weights.shape[0]


@dataclass(frozen=True, eq=False)
class Posterior:
    """Normalized log-probabilities over classes after ``turn`` observations.

    ``history`` holds the ``(question, answer)`` pairs that produced it, so
    history-dependent likelihoods can be evaluated.
    """

    log_probs: np.ndarray
    turn: int = 0
    history: tuple = ()

    @classmethod
    def from_prior(cls, prior: Prior) -> "Posterior":
        return cls(prior.log_weights, 0, ())

    @classmethod
    def from_log_weights(cls, log_w, turn: int = 0, history: tuple = ()) -> "Posterior":
        return cls(_normalize_log(log_w), turn, history)

    @property
    def n_classes(self) -> int:
        return self.log_probs.shape[0]

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    def entropy(self) -> float:
        p = self.probs
        return float(-xlogy(p, p).sum())


@dataclass(frozen=True)
class TurnRecord:
    question_id: int
    answer: int
    gain: float
    entropy: float
    guess: int


@dataclass
class Transcript:
    turns: list = field(default_factory=list)
    final_guess: Optional[int] = None
    success: bool = False
    seed: Optional[int] = None
    target: Optional[int] = None
    error: Optional[str] = None

    @property
    def question_ids(self):
        return [t.question_id for t in self.turns]

    @property
    def answers(self):
        return [t.answer for t in self.turns]

    @property
    def gains(self):
        return [t.gain for t in self.turns]

    @property
    def entropies(self):
        return [t.entropy for t in self.turns]


# ---------------------------------------------------------------------------
# likelihood models
# ---------------------------------------------------------------------------

class LikelihoodModel:
    """Approximate answer distribution ``p(a | c, q, history)``.

    Subclasses implement :meth:`likelihood_matrix`, returning an
    ``(n_classes, n_answers)`` array whose rows are distributions.
    """

    n_classes: int
    n_answers: int

    def likelihood_matrix(self, question: Question, history: tuple = ()) -> np.ndarray:
        raise NotImplementedError

    def evaluate(self, class_index: int, question: Question, history: tuple = ()) -> np.ndarray:
        return self.likelihood_matrix(question, history)[class_index]

    def answer_column(self, question: Question, answer: int, history: tuple = ()) -> np.ndarray:
        return self.likelihood_matrix(question, history)[:, answer]

    def batch_gains(self, post: Posterior, questions: Sequence[Question]) -> Optional[np.ndarray]:
        """Vectorized gains for many questions, or None when not supported."""
        return None


class MatrixLikelihood(LikelihoodModel):
    """Likelihood given as one explicit ``(n_classes, n_answers)`` array per question id."""

    def __init__(self, matrices):
        self.matrices = {int(k): np.asarray(v, dtype=np.float64) for k, v in dict(matrices).items()}
        shapes = {m.shape for m in self.matrices.values()}
        if len(shapes) != 1:
            raise ValueError("all likelihood matrices must share a shape")
        self.n_classes, self.n_answers = shapes.pop()

    def likelihood_matrix(self, question, history=()):
        return self.matrices[question.id]


class TabularLikelihood(LikelihoodModel):
    """Likelihood that depends on the class only through a per-question row key.

    ``keys[qid, c]`` picks the row of ``tables[qid]`` used for class ``c``.
    Question ids index the first axis of both arrays. The history is
    ignored (answers are modelled as independent given class and question).
    """

    def __init__(self, keys, tables):
        self.keys = np.ascontiguousarray(keys, dtype=np.int64)
        self.tables = np.ascontiguousarray(tables, dtype=np.float64)
        if self.keys.ndim != 2 or self.tables.ndim != 3 or self.keys.shape[0] != self.tables.shape[0]:
            raise ValueError("keys must be (Q, N) and tables (Q, R, A) with matching Q")
        if self.keys.size and (self.keys.min() < 0 or self.keys.max() >= self.tables.shape[1]):
            raise ValueError("row key out of range")
        self.n_classes = self.keys.shape[1]
        self.n_answers = self.tables.shape[2]
        with np.errstate(divide="ignore"):
            self.log_tables = np.log(self.tables)

    def likelihood_matrix(self, question, history=()):
        return self.tables[question.id][self.keys[question.id]]

    def answer_column(self, question, answer, history=()):
        return self.tables[question.id, self.keys[question.id], answer]

    def log_answer_column(self, question, answer):
        return self.log_tables[question.id, self.keys[question.id], answer]

    def batch_gains(self, post, questions):
        ids = np.fromiter((q.id for q in questions), dtype=np.int64, count=len(questions))
        masses = _kernels.bucket_masses(self.keys[ids], post.probs, self.tables.shape[1])
        return _kernels.tabular_gains(masses, self.tables[ids])


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

def _log_column(lik: LikelihoodModel, q: Question, a: int, history: tuple) -> np.ndarray:
    if isinstance(lik, TabularLikelihood):
        return lik.log_answer_column(q, a)
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(lik.answer_column(q, a, history), dtype=np.float64))


def posterior_update(post: Posterior, q: Question, a: int, lik: LikelihoodModel) -> Posterior:
    """Fold one observed answer into the posterior (log space, renormalized)."""
    log_w = post.log_probs + _log_column(lik, q, a, post.history)
    if not np.isfinite(log_w).any():
        raise ImpossibleAnswerError(
            f"answer {a} to question {q.id} has zero likelihood under every class"
        )
    return Posterior(_normalize_log(log_w), post.turn + 1, post.history + ((q, a),))


def posterior_from_history(prior: Prior, history: Iterable, lik: LikelihoodModel) -> Posterior:
    """Batch form: prior times the product of all answer likelihoods, normalized once."""
    history = tuple((q, int(a)) for q, a in history)
    log_w = prior.log_weights.copy()
    for j, (q, a) in enumerate(history):
        log_w = log_w + _log_column(lik, q, a, history[:j])
    if not np.isfinite(log_w).any():
        raise ImpossibleAnswerError("history has zero likelihood under every class")
    return Posterior(_normalize_log(log_w), len(history), history)


def marginal_answer_distribution(post: Posterior, q: Question, lik: LikelihoodModel) -> np.ndarray:
    return post.probs @ lik.likelihood_matrix(q, post.history)


def _clamp_gain(g: float) -> float:
    if g < -NEGATIVE_GAIN_TOL:
        raise AssertionError(f"internal error: information gain {g} is negative")
    return max(g, 0.0)


def information_gain(post: Posterior, q: Question, lik: LikelihoodModel) -> float:
    """Expected KL between each class's answer distribution and the marginal, in nats."""
    p = post.probs
    L = lik.likelihood_matrix(q, post.history)
    marginal = p @ L
    joint = p[:, None] * L
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.log(L) - np.log(marginal)[None, :]
        terms = np.where(joint > 0.0, joint * ratio, 0.0)
    return _clamp_gain(float(terms.sum()))


def information_gain_entropy_form(post: Posterior, q: Question, lik: LikelihoodModel) -> float:
    """Entropy drop ``H[C] - E_a H[C | a]``, forming every conditional posterior.

    Slow on purpose: kept as an independent check of :func:`information_gain`.
    """
    p = post.probs
    L = lik.likelihood_matrix(q, post.history)
    h_prior = float(-xlogy(p, p).sum())
    marginal = p @ L
    expected = 0.0
    for a in range(L.shape[1]):
        if marginal[a] <= 0.0:
            continue
        cond = p * L[:, a] / marginal[a]
        expected += marginal[a] * float(-xlogy(cond, cond).sum())
    return h_prior - expected


def question_gains(post: Posterior, questions: Sequence[Question], lik: LikelihoodModel) -> np.ndarray:
    fast = lik.batch_gains(post, questions)
    if fast is None:
        return np.array([information_gain(post, q, lik) for q in questions])
    low = fast.min() if len(fast) else 0.0
    if low < -NEGATIVE_GAIN_TOL:
        raise AssertionError(f"internal error: information gain {low} is negative")
    return np.maximum(fast, 0.0)


def _argmax_lowest_id(questions: Sequence[Question], gains: np.ndarray) -> int:
    best = gains.max()
    tied = [i for i in range(len(questions)) if gains[i] >= best - GAIN_TIE_TOL]
    return min(tied, key=lambda i: questions[i].id)


def _candidates(pool, exclude) -> list:
    exclude = set(exclude or ())
    cands = [q for q in pool if q.id not in exclude]
    if not cands:
        raise NoCandidateQuestionError("question pool is empty after exclusion")
    return cands


def select_question(post: Posterior, pool: Sequence[Question], lik: LikelihoodModel,
                    exclude: Optional[Iterable[int]] = None):
    """Return ``(question, gain)`` maximizing information gain; ties go to the lowest id."""
    cands = _candidates(pool, exclude)
    gains = question_gains(post, cands, lik)
    i = _argmax_lowest_id(cands, gains)
    return cands[i], float(gains[i])


def guess(post: Posterior) -> int:
    """MAP class index; ``np.argmax`` already returns the first maximum."""
    return int(np.argmax(post.log_probs))


def multi_step_information_gain(post: Posterior, pool: Sequence[Question], lik: LikelihoodModel,
                                k: int, exclude: Optional[Iterable[int]] = None,
                                max_leaves: int = DEFAULT_MAX_LEAVES):
    """Exhaustive expectimax over ``k`` question/answer levels.

    Maximizes over questions and takes the expectation over answers under the
    model's marginal at every node. Returns ``(first question, total expected gain)``.
    """
    if k < 1:
        raise ValueError("lookahead depth k must be >= 1")
    cands = _candidates(pool, exclude)
    leaves = (len(cands) * lik.n_answers) ** k
    if leaves > max_leaves:
        raise LookaheadTooLargeError(
            f"{len(cands)} questions x {lik.n_answers} answers to depth {k} "
            f"needs {leaves} leaves (cap {max_leaves})"
        )

    def value(node: Posterior, depth: int) -> np.ndarray:
        gains = question_gains(node, cands, lik)
        if depth == 1:
            return gains
        totals = gains.copy()
        p = node.probs
        for i, q in enumerate(cands):
            marginal = p @ lik.likelihood_matrix(q, node.history)
            future = 0.0
            for a in np.flatnonzero(marginal > 0.0):
                child = posterior_update(node, q, int(a), lik)
                future += marginal[a] * value(child, depth - 1).max()
            totals[i] += future
        return totals

    totals = value(post, k)
    i = _argmax_lowest_id(cands, totals)
    return cands[i], float(totals[i])


# ---------------------------------------------------------------------------
# dialog loop
# ---------------------------------------------------------------------------

QuestionSelector = Callable[[Posterior, Sequence[Question], LikelihoodModel, set, int], tuple]


def aqm_selector(post, pool, lik, exclude, turn):
    return select_question(post, pool, lik, exclude)


def lookahead_selector(k: int, max_leaves: int = DEFAULT_MAX_LEAVES) -> QuestionSelector:
    def select(post, pool, lik, exclude, turn):
        return multi_step_information_gain(post, pool, lik, k, exclude, max_leaves)
    return select


def random_selector(rng: np.random.Generator) -> QuestionSelector:
    """Uniformly random question; the reported gain is still the model's gain."""
    def select(post, pool, lik, exclude, turn):
        cands = _candidates(pool, exclude)
        q = cands[int(rng.integers(len(cands)))]
        return q, information_gain(post, q, lik)
    return select


@dataclass
class DialogOptions:
    allow_repeats: bool = True
    selector: Optional[QuestionSelector] = None
    stop_entropy: Optional[float] = None
    target: Optional[int] = None
    seed: Optional[int] = None


def run_dialog(prior: Prior, pool: Sequence[Question], lik: LikelihoodModel,
               answerer: Callable[[Question, int], int], turns: int,
               options: Optional[DialogOptions] = None) -> Transcript:
    """Ask ``turns`` questions, updating the posterior after each answer, then guess.

    ``answerer(question, turn)`` returns an integer answer symbol. An
    impossible answer or an :class:`AnswererError` ends the game as a loss
    with the error recorded on the transcript.
    """
    if turns < 1:
        raise ValueError("turns must be >= 1")
    opts = options or DialogOptions()
    select = opts.selector or aqm_selector
    post = Posterior.from_prior(prior)
    tr = Transcript(seed=opts.seed, target=opts.target)
    asked: set = set()
    for t in range(1, turns + 1):
        if opts.stop_entropy is not None and post.entropy() < opts.stop_entropy:
            break
        exclude = set() if opts.allow_repeats else asked
        try:
            q, gain = select(post, pool, lik, exclude, t)
            a = int(answerer(q, t))
            post = posterior_update(post, q, a, lik)
        except (ImpossibleAnswerError, AnswererError) as exc:
            tr.error = f"{exc.code}: {exc}"
            tr.final_guess = guess(post)
            tr.success = False
            return tr
        asked.add(q.id)
        tr.turns.append(TurnRecord(q.id, a, gain, post.entropy(), guess(post)))
    tr.final_guess = guess(post)
    tr.success = opts.target is not None and tr.final_guess == opts.target
    return tr
