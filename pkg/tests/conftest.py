import math

import numpy as np
import pytest

from aqm.core import MatrixLikelihood, Posterior, Question


def brute_gain(p, L):
    """Information gain by explicit loops over answers and classes."""
    n_c, n_a = len(L), len(L[0])
    gain = 0.0
    for a in range(n_a):
        marginal = sum(p[c] * L[c][a] for c in range(n_c))
        for c in range(n_c):
            if p[c] > 0 and L[c][a] > 0:
                gain += p[c] * L[c][a] * math.log(L[c][a] / marginal)
    return gain


def random_instance(rng, n_classes=None, n_answers=None, n_questions=1, sparsity=0.3):
    """Random posterior plus random likelihood matrices, some entries forced to zero."""
    n_c = n_classes or int(rng.integers(1, 12))
    n_a = n_answers or int(rng.integers(2, 6))
    p = rng.dirichlet(np.ones(n_c) * rng.uniform(0.2, 2.0))
    if rng.random() < 0.2:
        p[rng.random(n_c) < 0.3] = 0.0
        if p.sum() == 0:
            p[0] = 1.0
        p /= p.sum()
    mats = {}
    for q in range(n_questions):
        L = rng.dirichlet(np.ones(n_a), size=n_c)
        mask = rng.random((n_c, n_a)) < sparsity
        L[mask] = 0.0
        empty = L.sum(axis=1) == 0
        L[empty, rng.integers(0, n_a, size=empty.sum())] = 1.0
        mats[q] = L / L.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore"):
        post = Posterior.from_log_weights(np.log(p))
    return post, MatrixLikelihood(mats), [Question(q) for q in range(n_questions)]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    """Record one summary line per acceptance criterion, printed after the run."""
    return ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
