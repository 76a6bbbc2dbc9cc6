import dataclasses
import math

import numpy as np
import pytest

from aqm.core import Question
from aqm.harness import (
    CSV_HEADER,
    ConfigError,
    ExperimentConfig,
    build_setup,
    export_results,
    read_results_csv,
    run_baseline_comparison,
    run_experiment,
    table_csv,
)
from aqm.pool import QuestionPool

SMALL = ExperimentConfig(lam=0.9, regime="depA", n_train=2000, n_candidates=300, n_games=120, turns=4)


@pytest.fixture(scope="module")
def small_setup():
    return build_setup(SMALL)


class TestConfig:
    @pytest.mark.parametrize("change", [{"lam": 1.2}, {"lam": 0.5}, {"regime": "fooA"}, {"turns": 0},
                                        {"n_games": 0}, {"strategy": "multistep-0"}, {"strategy": "greedy"},
                                        {"epsilon": 0.0}, {"pool": "mine"}])
    def test_rejects(self, change):
        with pytest.raises(ConfigError):
            dataclasses.replace(SMALL, **change).validate()

    def test_lookahead(self):
        assert ExperimentConfig(strategy="multistep-3").lookahead == 3
        assert ExperimentConfig(strategy="random").lookahead == 0

    def test_file(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("# acceptance run\nlambda = 0.95\nregime = trueA\nn_games = 50\n"
                        "allow-repeats = false\nstop_entropy = none\n")
        cfg = ExperimentConfig.from_file(path)
        assert (cfg.lam, cfg.regime, cfg.n_games, cfg.allow_repeats, cfg.stop_entropy) == (0.95, "trueA", 50, False, None)

    def test_file_unknown_key(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("lamda = 0.9\n")
        with pytest.raises(ConfigError):
            ExperimentConfig.from_file(path)


def test_rows_cover_every_turn(small_setup):
    tab = run_experiment(SMALL, small_setup)
    assert [r.turn for r in tab.rows] == [1, 2, 3, 4]
    for r in tab.rows:
        assert 0.0 <= r.accuracy <= 1.0
        assert r.ci95 == pytest.approx(1.959963984540054 * math.sqrt(r.accuracy * (1 - r.accuracy) / 120))


def test_determinism_byte_identical(small_setup):
    a = table_csv(run_experiment(SMALL, small_setup))
    b = table_csv(run_experiment(SMALL, build_setup(SMALL)))
    assert a == b


def test_workers_do_not_change_output(small_setup):
    serial = table_csv(run_experiment(SMALL, small_setup))
    parallel = table_csv(run_experiment(dataclasses.replace(SMALL, workers=2), small_setup))
    assert serial == parallel


def test_prior_accuracy_is_chance():
    cfg = ExperimentConfig(lam=1.0, regime="trueA", n_candidates=4, n_games=4000, turns=1)
    tab = run_experiment(cfg)
    assert abs(tab.prior_accuracy - 0.25) < 4 * math.sqrt(0.25 * 0.75 / 4000)


def test_entropy_non_increasing_noiseless():
    cfg = ExperimentConfig(lam=1.0, regime="trueA", n_candidates=2000, n_games=200, turns=6)
    tab = run_experiment(cfg)
    h = [math.log(2000)] + [r.entropy_mean for r in tab.rows]
    assert all(b <= a + 1e-12 for a, b in zip(h, h[1:]))


def test_single_question_pool_strategies_agree():
    cfg = ExperimentConfig(lam=0.9, regime="trueA", n_candidates=300, n_games=100, turns=3)
    setup = build_setup(cfg)
    setup.pool = QuestionPool((Question(4, setup.pool[4].payload),))
    aqm, rnd = run_baseline_comparison(dataclasses.replace(cfg, random_with_replacement=True), setup)
    assert np.array_equal(aqm.accuracy, rnd.accuracy)


def test_one_turn_beats_prior():
    cfg = ExperimentConfig(lam=1.0, regime="trueA", n_candidates=1000, n_games=500, turns=1)
    aqm, rnd = run_baseline_comparison(cfg)
    assert aqm.at(1).accuracy > 1 / 1000 and rnd.at(1).accuracy > 1 / 1000


class TestExport:
    def test_header_and_round_trip(self, tmp_path, small_setup):
        tabs = run_baseline_comparison(SMALL, small_setup)
        path = tmp_path / "res.csv"
        written = export_results(tabs, path, plot_data=True)
        assert [p.rsplit("/", 1)[-1] for p in written] == ["res.csv", "res.json", "res.series.json"]
        assert path.read_text().splitlines()[0] == ",".join(CSV_HEADER)
        rows = read_results_csv(path)
        assert len(rows) == 2 * SMALL.turns
        for tab, chunk in zip(tabs, (rows[:4], rows[4:])):
            assert [r["accuracy"] for r in chunk] == [r.accuracy for r in tab.rows]
            assert [r["entropy_mean"] for r in chunk] == [r.entropy_mean for r in tab.rows]
            assert chunk[0]["strategy"] == tab.config.strategy

    def test_io_error_has_path(self, tmp_path, small_setup):
        tab = run_experiment(dataclasses.replace(SMALL, n_games=5), small_setup)
        with pytest.raises(OSError, match="missing"):
            export_results(tab, tmp_path / "missing" / "r.csv")
