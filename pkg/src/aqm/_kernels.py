"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The numba versions are used when numba imports cleanly and the environment
variable ``AQM_NUMBA`` is not set to ``0``. Both paths are always importable
under their suffixed names so tests and benchmarks can compare them.
"""
import os

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and os.environ.get("AQM_NUMBA", "1").strip() not in ("0", "false", "no", "off")


# ---------------------------------------------------------------------------
# numpy reference paths
# ---------------------------------------------------------------------------

def bucket_masses_numpy(keys, probs, n_rows):
    """Sum ``probs`` into ``n_rows`` buckets per question.

    ``keys`` is ``(n_questions, n_classes)`` of row indices; the result is
    ``(n_questions, n_rows)`` with ``out[q, r] = sum(probs[keys[q] == r])``.
    """
    n_q = keys.shape[0]
    flat = (keys + (np.arange(n_q, dtype=np.int64) * n_rows)[:, None]).ravel()
    out = np.bincount(flat, weights=np.tile(probs, n_q), minlength=n_q * n_rows)
    return out.reshape(n_q, n_rows)


def tabular_gains_numpy(masses, tables):
    """Information gain for questions whose likelihood depends on a row key.

    ``masses[q, r]`` is the posterior mass of classes mapped to row ``r``;
    ``tables[q, r, a]`` the answer distribution of that row.
    """
    joint = masses[:, :, None] * tables
    marginal = joint.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.log(tables) - np.log(marginal)[:, None, :]
        terms = np.where(joint > 0.0, joint * ratio, 0.0)
    return terms.sum(axis=(1, 2))


def poisson_binomial_numpy(ps):
    """Exact pmf of a sum of independent Bernoullis with success probs ``ps``."""
    pmf = np.zeros(len(ps) + 1)
    pmf[0] = 1.0
    for i, p in enumerate(ps):
        pmf[1:i + 2] = pmf[1:i + 2] * (1.0 - p) + pmf[0:i + 1] * p
        pmf[0] *= 1.0 - p
    return pmf


# ---------------------------------------------------------------------------
# numba paths
# ---------------------------------------------------------------------------

def _bucket_masses_loop(keys, probs, n_rows):
    n_q, n_c = keys.shape
    out = np.zeros((n_q, n_rows))
    for q in range(n_q):
        for c in range(n_c):
            out[q, keys[q, c]] += probs[c]
    return out


def _tabular_gains_loop(masses, tables):
    n_q, n_r, n_a = tables.shape
    gains = np.zeros(n_q)
    marginal = np.zeros(n_a)
    for q in range(n_q):
        for a in range(n_a):
            s = 0.0
            for r in range(n_r):
                s += masses[q, r] * tables[q, r, a]
            marginal[a] = s
        g = 0.0
        for r in range(n_r):
            w = masses[q, r]
            if w <= 0.0:
                continue
            for a in range(n_a):
                lik = tables[q, r, a]
                if lik > 0.0:
                    g += w * lik * np.log(lik / marginal[a])
        gains[q] = g
    return gains


def _poisson_binomial_loop(ps):
    n = ps.shape[0]
    pmf = np.zeros(n + 1)
    pmf[0] = 1.0
    for i in range(n):
        p = ps[i]
        for k in range(i + 1, 0, -1):
            pmf[k] = pmf[k] * (1.0 - p) + pmf[k - 1] * p
        pmf[0] *= 1.0 - p
    return pmf


if _HAVE_NUMBA:
    bucket_masses_numba = njit(cache=True)(_bucket_masses_loop)
    tabular_gains_numba = njit(cache=True)(_tabular_gains_loop)
    poisson_binomial_numba = njit(cache=True)(_poisson_binomial_loop)
else:  # pragma: no cover
    bucket_masses_numba = _bucket_masses_loop
    tabular_gains_numba = _tabular_gains_loop
    poisson_binomial_numba = _poisson_binomial_loop


if USE_NUMBA:
    def bucket_masses(keys, probs, n_rows):
        return bucket_masses_numba(
            np.ascontiguousarray(keys, dtype=np.int64),
            np.ascontiguousarray(probs, dtype=np.float64),
            int(n_rows),
        )

    def tabular_gains(masses, tables):
        return tabular_gains_numba(
            np.ascontiguousarray(masses, dtype=np.float64),
            np.ascontiguousarray(tables, dtype=np.float64),
        )

    def poisson_binomial(ps):
        return poisson_binomial_numba(np.ascontiguousarray(ps, dtype=np.float64))
else:
    bucket_masses = bucket_masses_numpy
    tabular_gains = tabular_gains_numpy

    def poisson_binomial(ps):
        return poisson_binomial_numpy(np.asarray(ps, dtype=np.float64))


def backend():
    return "numba" if USE_NUMBA else "numpy"
