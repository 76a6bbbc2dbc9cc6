"""Self-play experiments on the counting-dialog world: accuracy-vs-turn curves."""
from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import json
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__, _kernels
from .core import (
    AnswererError,
    DialogOptions,
    Prior,
    Question,
    aqm_selector,
    lookahead_selector,
    random_selector,
    run_dialog,
)
from .likelihood import TrainingRegime, build_likelihood, confusion_model_likelihood, load_confusion
from .mnist import MNIST_SCHEMA, answer, generate_world, load_world, make_answerer, pool_questions
from .pool import count_q, full_pool, load_pool, rand_q

CSV_HEADER = ("turn", "accuracy", "ci95", "entropy_mean", "strategy", "lambda", "regime", "seed")
Z95 = 1.959963984540054


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    lam: float = 1.0
    regime: str = "depA"
    strategy: str = "aqm"
    turns: int = 6
    n_train: int = 30000
    n_candidates: int = 10000
    n_games: int = 1000
    pool: str = "full"
    pool_size: int = 22
    count_threshold: float = 0.95
    world_seed: int = 0
    answerer_seed: int = 0
    game_seed: int = 0
    epsilon: float = 1.0
    allow_repeats: bool = True
    random_with_replacement: bool = False
    train_fraction: float = 1.0
    fixed_recognition: bool = False
    stop_entropy: Optional[float] = None
    n_answerers: int = 1
    workers: int = 1
    candidates_path: Optional[str] = None
    train_path: Optional[str] = None
    model_path: Optional[str] = None
    pool_path: Optional[str] = None

    def validate(self) -> "ExperimentConfig":
        if not 0.5 < self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in (0.5, 1], got {self.lam}")
        if self.regime not in ("indA", "depA", "trueA"):
            raise ConfigError(f"unknown regime {self.regime!r}")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ConfigError("train_fraction must lie in (0, 1]")
        self.lookahead  # raises on a malformed strategy
        for name in ("turns", "n_train", "n_candidates", "n_games", "pool_size", "n_answerers", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.pool not in ("full", "randQ", "countQ"):
            raise ConfigError(f"unknown pool kind {self.pool!r} (full, randQ, countQ)")
        if not 0.0 < self.count_threshold <= 1.0:
            raise ConfigError("count_threshold must lie in (0, 1]")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        return self

    @property
    def lookahead(self) -> int:
        """Lookahead depth of the strategy: 1 for aqm, 0 for random."""
        if self.strategy == "aqm":
            return 1
        if self.strategy == "random":
            return 0
        if self.strategy.startswith("multistep-"):
            try:
                k = int(self.strategy.split("-", 1)[1])
            except ValueError:
                k = 0
            if k >= 1:
                return k
        raise ConfigError(f"unknown strategy {self.strategy!r} (aqm, random, multistep-<k>)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        """Build from string or typed values, coercing to each field's type."""
        kwargs = {}
        fields = {f.name: f for f in dataclasses.fields(cls)}
        for key, raw in values.items():
            name = key.replace("-", "_")
            if name == "lambda":
                name = "lam"
            if name not in fields:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[name] = _coerce(name, fields[name].default, raw)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        """Read a flat ``key = value`` file (``#`` comments, no sections)."""
        parser = configparser.ConfigParser(interpolation=None)
        with open(path, encoding="utf-8") as fh:
            parser.read_string("[experiment]\n" + fh.read(), source=str(path))
        return cls.from_mapping(dict(parser["experiment"]))


_OPTIONAL_TYPES = {"stop_entropy": float, "candidates_path": str, "train_path": str,
                   "model_path": str, "pool_path": str}


def _coerce(name, default, raw):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if name in _OPTIONAL_TYPES:
            return None if raw.lower() in ("", "none") else _OPTIONAL_TYPES[name](raw)
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


@dataclass(frozen=True)
class TurnRow:
    turn: int
    accuracy: float
    ci95: float
    entropy_mean: float


@dataclass
class ResultTable:
    rows: list
    config: ExperimentConfig
    prior_accuracy: float = 0.0
    n_errors: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def accuracy(self) -> np.ndarray:
        return np.array([r.accuracy for r in self.rows])

    def at(self, turn: int) -> TurnRow:
        return self.rows[turn - 1]


@dataclass
class Agent:
    """One answerer draw together with the questioner's model of it."""

    answerer: object
    likelihood: object
    confusion: object = None


@dataclass
class ExperimentSetup:
    """Everything shared between paired runs: worlds, pool, answerers and their models.

    Game ``g`` is played against ``agents[g % len(agents)]``.
    """

    candidates: object
    pool: object
    agents: list
    train: object = None

    def agent(self, game: int) -> Agent:
        return self.agents[game % len(self.agents)]

    @property
    def answerer(self):
        return self.agents[0].answerer

    @property
    def likelihood(self):
        return self.agents[0].likelihood

    @property
    def n_classes(self) -> int:
        return len(self.candidates)


def build_setup(cfg: ExperimentConfig) -> ExperimentSetup:
    cfg.validate()
    if cfg.candidates_path:
        candidates = load_world(cfg.candidates_path)
    else:
        candidates = generate_world(cfg.n_candidates, MNIST_SCHEMA, [cfg.world_seed, 1])

    train = None
    if cfg.regime != "trueA" or cfg.pool == "countQ":
        if cfg.train_path:
            train = load_world(cfg.train_path)
        elif not (cfg.model_path and cfg.pool != "countQ"):
            train = generate_world(cfg.n_train, MNIST_SCHEMA, [cfg.world_seed, 0])

    questions = pool_questions(MNIST_SCHEMA)
    if cfg.pool_path:
        pool = load_pool(cfg.pool_path)
    elif cfg.pool == "full":
        pool = full_pool(MNIST_SCHEMA.questions)
    elif cfg.pool == "randQ":
        pool = rand_q(questions, min(cfg.pool_size, len(questions)), cfg.world_seed)
    else:
        pool = count_q(train, questions, cfg.pool_size, cfg.count_threshold,
                       lambda world, q: world.true_counts[:, q.id], n_symbols=17)

    agents = []
    for i in range(cfg.n_answerers):
        seed = cfg.answerer_seed + i
        answerer = make_answerer(cfg.lam, seed, MNIST_SCHEMA, cfg.fixed_recognition)
        if cfg.regime != "trueA" and cfg.model_path:
            confusion = load_confusion(cfg.model_path)
            lik = confusion_model_likelihood(confusion, candidates)
        else:
            # the answer model is trained on every domain question, not only the pool
            lik, confusion = build_likelihood(
                TrainingRegime(cfg.regime, cfg.train_fraction), candidates, answerer, train,
                questions, np.random.default_rng([seed, 7]), cfg.epsilon,
            )
        agents.append(Agent(answerer, lik, confusion))
    return ExperimentSetup(candidates, pool, agents, train)


def answer_oracle(setup: ExperimentSetup, target: int, game_seed: int, game: int):
    """Answerer for one game; noise is keyed by (game seed, game, turn, question id)."""
    img = setup.candidates[target]
    ans = setup.agent(game).answerer

    def respond(q: Question, turn: int) -> int:
        rng = np.random.default_rng([game_seed, game, turn, q.id])
        return answer(ans, img, q.payload, rng)
    return respond


def game_targets(cfg: ExperimentConfig, n_classes: int) -> np.ndarray:
    return np.random.default_rng([cfg.game_seed, 0]).integers(0, n_classes, size=cfg.n_games)


def _selector(cfg: ExperimentConfig, game: int):
    k = cfg.lookahead
    if k == 0:
        return random_selector(np.random.default_rng([cfg.game_seed, 1, game]))
    if k == 1:
        return aqm_selector
    return lookahead_selector(k)


def play_games(setup: ExperimentSetup, cfg: ExperimentConfig, games, oracle_factory=None):
    """Play the listed games; returns ``(correct, entropy, errors)`` arrays over turns 0..T."""
    games = list(games)
    n = setup.n_classes
    prior = Prior.uniform(n)
    targets = game_targets(cfg, n)
    oracle_factory = oracle_factory or answer_oracle
    T = cfg.turns
    correct = np.zeros((len(games), T + 1), dtype=bool)
    entropy = np.zeros((len(games), T + 1))
    errors = []
    h0 = math.log(n)
    allow = cfg.allow_repeats if cfg.lookahead else cfg.random_with_replacement
    for row, g in enumerate(games):
        target = int(targets[g])
        opts = DialogOptions(allow_repeats=allow, selector=_selector(cfg, g),
                             stop_entropy=cfg.stop_entropy, target=target, seed=g)
        try:
            tr = run_dialog(prior, setup.pool, setup.agent(g).likelihood,
                            oracle_factory(setup, target, cfg.game_seed, g), T, opts)
        except AnswererError as exc:  # pragma: no cover - run_dialog records these
            errors.append((g, str(exc)))
            continue
        correct[row, 0] = target == 0  # uniform prior guesses index 0
        entropy[row, 0] = h0
        last_guess, last_h = 0, h0
        for t in range(1, T + 1):
            if t <= len(tr.turns):
                last_guess, last_h = tr.turns[t - 1].guess, tr.turns[t - 1].entropy
            elif tr.error is not None:
                last_guess = -1
            correct[row, t] = last_guess == target
            entropy[row, t] = last_h
        if tr.error is not None:
            errors.append((g, tr.error))
    return correct, entropy, errors


def _play_chunk(args):
    setup, cfg, games = args
    return play_games(setup, cfg, games)


def _tabulate(cfg, correct, entropy, errors, started) -> ResultTable:
    n = correct.shape[0]
    rows = []
    for t in range(1, cfg.turns + 1):
        p = float(correct[:, t].mean())
        rows.append(TurnRow(t, p, Z95 * math.sqrt(p * (1.0 - p) / n), float(entropy[:, t].mean())))
    meta = {
        "wall_clock_s": round(time.perf_counter() - started, 3),
        "aqm_version": __version__,
        "numpy_version": np.__version__,
        "kernel_backend": _kernels.backend(),
        "python": platform.python_version(),
        "errors": [list(e) for e in errors],
    }
    return ResultTable(rows, cfg, float(correct[:, 0].mean()), len(errors), meta)


def run_experiment(cfg: ExperimentConfig, setup: Optional[ExperimentSetup] = None,
                   oracle_factory=None) -> ResultTable:
    """Play ``cfg.n_games`` dialogs and tabulate accuracy and entropy per turn."""
    started = time.perf_counter()
    cfg.validate()
    setup = setup or build_setup(cfg)
    games = range(cfg.n_games)
    if cfg.workers > 1 and oracle_factory is None:
        chunks = [list(c) for c in np.array_split(np.arange(cfg.n_games), cfg.workers) if len(c)]
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            parts = list(ex.map(_play_chunk, [(setup, cfg, c) for c in chunks]))
        correct = np.concatenate([p[0] for p in parts])
        entropy = np.concatenate([p[1] for p in parts])
        errors = [e for p in parts for e in p[2]]
    else:
        correct, entropy, errors = play_games(setup, cfg, games, oracle_factory)
    return _tabulate(cfg, correct, entropy, errors, started)


def run_baseline_comparison(cfg: ExperimentConfig, setup: Optional[ExperimentSetup] = None):
    """AQM and random questioners on the same worlds, answerer, targets and noise keys."""
    setup = setup or build_setup(cfg)
    aqm = run_experiment(dataclasses.replace(cfg, strategy="aqm"), setup)
    rnd = run_experiment(dataclasses.replace(cfg, strategy="random"), setup)
    return aqm, rnd


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def table_csv(tables) -> str:
    if isinstance(tables, ResultTable):
        tables = [tables]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for tab in tables:
        c = tab.config
        for r in tab.rows:
            w.writerow([r.turn, _fmt(r.accuracy), _fmt(r.ci95), _fmt(r.entropy_mean),
                        c.strategy, _fmt(c.lam), c.regime, c.game_seed])
    return buf.getvalue()


def export_results(tables, path, plot_data: bool = False) -> list:
    """Write ``path`` (CSV) plus a ``.json`` sidecar; optionally a plot-series file.

    Returns the list of written paths.
    """
    if isinstance(tables, ResultTable):
        tables = [tables]
    path = os.fspath(path)
    stem = path[:-4] if path.endswith(".csv") else path
    written = []
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(table_csv(tables))
        written.append(path)
        sidecar = {
            "curves": [
                {"config": t.config.to_dict(), "prior_accuracy": t.prior_accuracy,
                 "n_errors": t.n_errors, "metadata": t.metadata}
                for t in tables
            ]
        }
        with open(stem + ".json", "w", encoding="utf-8") as fh:
            json.dump(sidecar, fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(stem + ".json")
        if plot_data:
            written.append(write_plot_series(read_results_csv(path), stem + ".series.json"))
    except OSError as exc:
        raise OSError(f"cannot write results to {exc.filename or path}: {exc.strerror}") from exc
    return written


def read_results_csv(path) -> list:
    """Parse an exported CSV back into typed row dicts."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        out = []
        for rec in reader:
            d = dict(zip(header, rec))
            out.append({
                "turn": int(d["turn"]), "accuracy": float(d["accuracy"]), "ci95": float(d["ci95"]),
                "entropy_mean": float(d["entropy_mean"]), "strategy": d["strategy"],
                "lambda": float(d["lambda"]), "regime": d["regime"], "seed": int(d["seed"]),
            })
    return out


def curves(rows) -> dict:
    """Group parsed CSV rows into ``{(strategy, lambda, regime, seed): [rows...]}``."""
    out = {}
    for r in rows:
        out.setdefault((r["strategy"], r["lambda"], r["regime"], r["seed"]), []).append(r)
    return out


def write_plot_series(rows, path) -> str:
    series = [
        {"label": f"{s} {reg} lambda={lam}", "strategy": s, "lambda": lam, "regime": reg, "seed": seed,
         "x": [r["turn"] for r in rs], "y": [r["accuracy"] for r in rs],
         "ci95": [r["ci95"] for r in rs]}
        for (s, lam, reg, seed), rs in curves(rows).items()
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"series": series}, fh, indent=2)
        fh.write("\n")
    return path


def format_table(tab: ResultTable) -> str:
    c = tab.config
    lines = [f"strategy={c.strategy} regime={c.regime} lambda={c.lam} games={c.n_games} "
             f"candidates={tab.config.n_candidates}",
             f"{'turn':>4}  {'accuracy':>8}  {'ci95':>6}  {'entropy':>8}",
             f"{0:>4}  {tab.prior_accuracy:8.4f}  {'':>6}  {'':>8}"]
    for r in tab.rows:
        lines.append(f"{r.turn:>4}  {r.accuracy:8.4f}  {r.ci95:6.4f}  {r.entropy_mean:8.4f}")
    if tab.n_errors:
        lines.append(f"game-level errors: {tab.n_errors}")
    return "\n".join(lines)
