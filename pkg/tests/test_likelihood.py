import numpy as np
import pytest

from aqm.core import Posterior, Prior, posterior_update
from aqm.likelihood import (
    ConfusionModel,
    TrainingRegime,
    build_likelihood,
    confusion_likelihood,
    confusion_model_likelihood,
    format_confusion,
    load_confusion,
    save_confusion,
    train_confusion,
    true_likelihood,
    true_model_likelihood,
)
from aqm.mnist import MNIST_SCHEMA, CountQuestion, answer_world, generate_world, make_answerer, pool_questions

QUESTIONS = pool_questions()


@pytest.fixture(scope="module")
def train():
    return generate_world(3000, seed=17)


def test_regime_validation():
    with pytest.raises(ValueError):
        TrainingRegime("fooA")
    with pytest.raises(ValueError):
        TrainingRegime("depA", 0.0)


class TestTraining:
    def test_perfect_answerer_is_diagonal(self, train):
        m = train_confusion(train, QUESTIONS, make_answerer(1.0), np.random.default_rng(0))
        for k in range(22):
            c = m.counts[k]
            assert (c == np.diag(np.diag(c))).all()
            t = m.table(k)
            n = np.diag(c)
            assert np.allclose(np.diag(t), (n + 1.0) / (n + 17.0))

    def test_indA_equals_noiseless_depA(self, train):
        ind = train_confusion(train, QUESTIONS, None)
        dep = train_confusion(train, QUESTIONS, make_answerer(1.0), np.random.default_rng(0))
        assert np.array_equal(ind.counts, dep.counts)

    def test_totals(self, train):
        m = train_confusion(train, QUESTIONS, make_answerer(0.9, seed=1), np.random.default_rng(0))
        assert (m.counts.sum(axis=(1, 2)) == len(train)).all()
        assert m.counts.shape == (22, 17, 17)

    def test_train_fraction(self, train):
        m = train_confusion(train, QUESTIONS, None, train_fraction=0.5)
        assert (m.counts.sum(axis=(1, 2)) == 1500).all()

    def test_rows_are_distributions(self, train):
        m = train_confusion(train, QUESTIONS, make_answerer(0.9, seed=1), np.random.default_rng(0))
        for k in range(22):
            assert np.allclose(m.table(k).sum(axis=1), 1.0, atol=1e-12)
            assert (m.table(k) > 0).all()


class TestConfusionLikelihood:
    def test_untrained_is_uniform(self):
        m = ConfusionModel((0,), np.zeros((1, 17, 17)))
        img = generate_world(1, seed=0)[0]
        for a in range(17):
            assert confusion_likelihood(m, img, QUESTIONS[0], a) == pytest.approx(1 / 17)

    def test_single_observation_smoothing(self):
        counts = np.zeros((1, 17, 17), dtype=int)
        counts[0, 3, 3] = 1
        m = ConfusionModel((0,), counts, epsilon=1.0)
        img = generate_world(200, seed=3)
        i = int(np.flatnonzero(img.true_counts[:, 0] == 3)[0])
        assert confusion_likelihood(m, img[i], QUESTIONS[0], 3) == pytest.approx(2 / 18)
        assert confusion_likelihood(m, img[i], QUESTIONS[0], 5) == pytest.approx(1 / 18)

    def test_depends_only_on_true_count(self, train):
        m = train_confusion(train, QUESTIONS, make_answerer(0.9, seed=2), np.random.default_rng(1))
        cands = generate_world(300, seed=5)
        lik = confusion_model_likelihood(m, cands)
        q = QUESTIONS[12]
        L = lik.likelihood_matrix(q)
        keys = cands.true_counts[:, 12]
        for k in np.unique(keys):
            rows = L[keys == k]
            assert (rows == rows[0]).all()
        assert confusion_likelihood(m, cands[7], q, 4) == L[7, 4]

    def test_never_impossible(self, train):
        m = train_confusion(train, QUESTIONS, None)
        lik = confusion_model_likelihood(m, generate_world(50, seed=1))
        post = Posterior.from_prior(Prior.uniform(50))
        for a in range(17):
            posterior_update(post, QUESTIONS[0], a, lik)


class TestTrueLikelihood:
    def test_noiseless_indicator(self):
        ans = make_answerer(1.0)
        img = generate_world(1, seed=2)[0]
        q = CountQuestion("bgcolor", "white")
        k = int(img.digits[:, 1].tolist().count(2))
        assert [true_likelihood(ans, img, q, a) for a in range(17)] == [float(a == k) for a in range(17)]

    def test_matches_sampling(self):
        ans = make_answerer(0.9, seed=8)
        img = generate_world(1, seed=4)[0]
        q = CountQuestion("color", "green")
        from aqm.mnist import World
        n = 100_000
        samples = answer_world(ans, World(np.broadcast_to(img.digits, (n, 16, 4))), q, np.random.default_rng(3))
        freq = np.bincount(samples, minlength=17) / n
        p = np.array([true_likelihood(ans, img, q, a) for a in range(17)])
        assert (np.abs(freq - p) <= 3 * np.sqrt(p * (1 - p) / n) + 1e-12).all()

    def test_depA_converges_to_trueA(self):
        train = generate_world(30000, seed=11)
        ans = make_answerer(0.9, seed=5)
        m = train_confusion(train, QUESTIONS, ans, np.random.default_rng(2))
        for k, q in enumerate(QUESTIONS):
            exact = ans.count_table(q.payload)
            for r in range(17):
                n = m.counts[k, r].sum()
                if n < 1000:
                    continue
                learned = m.table(k)[r]
                tol = 5 * np.sqrt(exact[r] * (1 - exact[r]) / n) + 17 / (n + 17)
                assert (np.abs(learned - exact[r]) <= tol).all()

    def test_tabular_model_matches_scalar(self):
        ans = make_answerer(0.95, seed=1)
        cands = generate_world(40, seed=6)
        lik = true_model_likelihood(ans, cands)
        for i in (0, 13, 39):
            for q in (QUESTIONS[0], QUESTIONS[21]):
                row = lik.likelihood_matrix(q)[i]
                assert np.allclose(row, [true_likelihood(ans, cands[i], q.payload, a) for a in range(17)], atol=1e-14)


def test_build_likelihood_regimes(train):
    cands = generate_world(30, seed=2)
    ans = make_answerer(0.9, seed=3)
    lik, m = build_likelihood(TrainingRegime("trueA"), cands, ans)
    assert m is None and lik.n_classes == 30
    lik, m = build_likelihood(TrainingRegime("indA"), cands, ans, train, QUESTIONS)
    assert (m.counts[:, np.arange(17), np.arange(17)].sum(axis=1) == len(train)).all()
    with pytest.raises(ValueError):
        build_likelihood(TrainingRegime("depA"), cands, ans)


class TestSerialization:
    def test_round_trip_bit_exact(self, tmp_path, train):
        m = train_confusion(train, QUESTIONS[:5] + QUESTIONS[20:], make_answerer(0.9, seed=4),
                            np.random.default_rng(7), epsilon=0.3)
        path = tmp_path / "model.conf"
        save_confusion(m, path)
        back = load_confusion(path)
        assert back.question_ids == m.question_ids
        assert np.array_equal(back.counts, m.counts)
        assert back.epsilon == m.epsilon and back.epsilon_prime == m.epsilon_prime
        assert format_confusion(back) == path.read_text()
        for qid in m.question_ids:
            assert np.array_equal(back.table(qid), m.table(qid))

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.conf"
        path.write_text("aqm-confusion 99\n")
        with pytest.raises(ValueError):
            load_confusion(path)

    def test_refuses_overwrite(self, tmp_path):
        m = ConfusionModel((0,), np.zeros((1, 17, 17)))
        path = tmp_path / "m.conf"
        save_confusion(m, path)
        with pytest.raises(FileExistsError):
            save_confusion(m, path)
        save_confusion(m, path, force=True)


def test_schema_question_ids_are_columns():
    assert [q.id for q in QUESTIONS] == [MNIST_SCHEMA.column(q.payload) for q in QUESTIONS]
