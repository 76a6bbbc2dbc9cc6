import itertools

import numpy as np
import pytest

from aqm import _kernels


def enumerate_pmf(ps):
    """Poisson-binomial pmf by summing over all 2^n outcome vectors."""
    pmf = np.zeros(len(ps) + 1)
    for bits in itertools.product((0, 1), repeat=len(ps)):
        pr = 1.0
        for b, p in zip(bits, ps):
            pr *= p if b else 1.0 - p
        pmf[sum(bits)] += pr
    return pmf


@pytest.mark.parametrize("impl", [_kernels.poisson_binomial_numpy, _kernels.poisson_binomial_numba])
def test_poisson_binomial_matches_enumeration(impl, rng):
    for n in range(0, 11):
        ps = rng.random(n)
        ps[rng.random(n) < 0.2] = 1.0
        assert np.allclose(impl(ps), enumerate_pmf(ps), atol=1e-14)


def test_bucket_masses_backends_agree(rng):
    keys = rng.integers(0, 17, size=(22, 500))
    probs = rng.dirichlet(np.ones(500))
    a = _kernels.bucket_masses_numpy(keys, probs, 17)
    b = _kernels.bucket_masses_numba(keys, probs, 17)
    assert np.allclose(a, b, atol=1e-15)
    assert np.allclose(a.sum(axis=1), 1.0)
    for q in range(3):
        for r in range(17):
            assert a[q, r] == pytest.approx(probs[keys[q] == r].sum(), abs=1e-15)


def test_tabular_gains_backends_agree(rng):
    masses = rng.dirichlet(np.ones(17), size=22)
    masses[masses < 0.02] = 0.0
    tables = rng.dirichlet(np.ones(17) * 0.3, size=(22, 17))
    tables[tables < 1e-3] = 0.0
    tables /= tables.sum(axis=2, keepdims=True)
    assert np.allclose(_kernels.tabular_gains_numpy(masses, tables),
                       _kernels.tabular_gains_numba(masses, tables), atol=1e-12)


def test_backend_flag():
    assert _kernels.backend() in ("numba", "numpy")
