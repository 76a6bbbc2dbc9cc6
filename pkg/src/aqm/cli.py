"""``aqm`` command line: worlds, training, self-play, reports, interactive play.

Exit codes: 0 success, 2 usage or validation error, 3 game-level errors
during a run, 4 file I/O problems (including refusing to overwrite).
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from .core import AQMError, ImpossibleAnswerError, Posterior, Prior, guess, posterior_update, select_question
from .harness import (
    ConfigError,
    ExperimentConfig,
    build_setup,
    export_results,
    format_table,
    read_results_csv,
    run_baseline_comparison,
    run_experiment,
    write_plot_series,
)
from .likelihood import (
    TrainingRegime,
    confusion_model_likelihood,
    load_confusion,
    save_confusion,
    train_confusion,
    true_model_likelihood,
)
from .mnist import MNIST_SCHEMA, N_ANSWERS, generate_world, load_world, make_answerer, pool_questions, save_world
from .pool import full_pool, save_pool

EXIT_OK, EXIT_USAGE, EXIT_GAME, EXIT_IO = 0, 2, 3, 4
OUTPUT_DIR_ENV = "AQM_OUTPUT_DIR"


class UsageError(Exception):
    pass


def _output_path(given, default_name):
    if given:
        return given
    return os.path.join(os.environ.get(OUTPUT_DIR_ENV, "."), default_name)


def _check_writable(paths, force):
    for p in paths:
        if os.path.exists(p) and not force:
            raise FileExistsError(f"{p} exists (use --force to overwrite)")


# ---------------------------------------------------------------------------
# experiment flags shared by selfplay / compare / serve-protocol
# ---------------------------------------------------------------------------

_EXPERIMENT_FLAGS = [
    ("--lambda", "lam", float, "nominal property accuracy in (0.5, 1]"),
    ("--regime", "regime", str, "indA, depA or trueA"),
    ("--strategy", "strategy", str, "aqm, random or multistep-<k>"),
    ("--turns", "turns", int, None),
    ("--games", "n_games", int, None),
    ("--n-train", "n_train", int, None),
    ("--n-candidates", "n_candidates", int, None),
    ("--pool", "pool", str, "full, randQ or countQ"),
    ("--pool-size", "pool_size", int, None),
    ("--count-threshold", "count_threshold", float, None),
    ("--world-seed", "world_seed", int, None),
    ("--answerer-seed", "answerer_seed", int, None),
    ("--game-seed", "game_seed", int, None),
    ("--epsilon", "epsilon", float, "confusion smoothing count"),
    ("--train-fraction", "train_fraction", float, None),
    ("--stop-entropy", "stop_entropy", float, None),
    ("--answerers", "n_answerers", int, "independent answerer draws, games assigned round-robin"),
    ("--workers", "workers", int, None),
    ("--candidates", "candidates_path", str, "candidate world file"),
    ("--train-world", "train_path", str, "training world file"),
    ("--model", "model_path", str, "confusion model file (depA/indA)"),
    ("--pool-file", "pool_path", str, "question pool file"),
]

_BOOL_FLAGS = [
    ("--no-repeats", "allow_repeats", False),
    ("--random-with-replacement", "random_with_replacement", True),
    ("--fixed-recognition", "fixed_recognition", True),
]


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value experiment file; flags override it")
    for flag, dest, typ, help_ in _EXPERIMENT_FLAGS:
        p.add_argument(flag, dest=dest, type=typ, default=None, help=help_)
    for flag, dest, value in _BOOL_FLAGS:
        p.add_argument(flag, dest=dest, action="store_const", const=value, default=None)
    p.add_argument("-o", "--output", help="results CSV path")
    p.add_argument("--plot-data", action="store_true", help="also write a per-curve series file")
    p.add_argument("--save-pool", help="write the question pool used")
    p.add_argument("--force", action="store_true")


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    overrides = {dest: getattr(args, dest) for _, dest, _, _ in _EXPERIMENT_FLAGS}
    overrides.update({dest: getattr(args, dest) for _, dest, _ in _BOOL_FLAGS})
    cfg = dataclasses.replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    return cfg.validate()


def _outputs(args, cfg, default_name):
    out = _output_path(args.output, default_name)
    stem = out[:-4] if out.endswith(".csv") else out
    paths = [out, stem + ".json"] + ([stem + ".series.json"] if args.plot_data else [])
    if args.save_pool:
        paths.append(args.save_pool)
    _check_writable(paths, args.force)
    return out


def _finish(args, tables, setup, out) -> int:
    for path in export_results(tables, out, plot_data=args.plot_data):
        print(f"wrote {path}")
    if args.save_pool:
        save_pool(setup.pool, args.save_pool, force=args.force)
        print(f"wrote {args.save_pool}")
    errors = sum(t.n_errors for t in tables)
    if errors:
        for t in tables:
            for g, msg in t.metadata.get("errors", [])[:5]:
                print(f"game {g}: {msg}", file=sys.stderr)
        return EXIT_GAME
    return EXIT_OK


def _default_name(cfg, kind):
    return f"{kind}-{cfg.strategy}-{cfg.regime}-lam{cfg.lam}-seed{cfg.game_seed}.csv"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_world(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be positive")
    _check_writable([args.output], args.force)
    save_world(generate_world(args.n, MNIST_SCHEMA, args.seed), args.output, force=args.force)
    print(f"wrote {args.output} ({args.n} images)")
    return EXIT_OK


def cmd_train(args) -> int:
    regime = TrainingRegime(args.regime)
    if regime.tag == "trueA":
        raise UsageError("trueA has no trained model")
    cfg = ExperimentConfig(lam=args.lam, regime=args.regime, epsilon=args.epsilon,
                           train_fraction=args.train_fraction).validate()
    out = _output_path(args.output, f"{regime.tag}-lam{args.lam}.conf")
    _check_writable([out], args.force)
    train = load_world(args.train_world) if args.train_world else generate_world(args.n_train, MNIST_SCHEMA, [args.world_seed, 0])
    ans = make_answerer(cfg.lam, args.answerer_seed, MNIST_SCHEMA)
    rng = np.random.default_rng([args.answerer_seed, 7])
    m = train_confusion(train, pool_questions(MNIST_SCHEMA), ans if regime.tag == "depA" else None, rng,
                        cfg.epsilon, cfg.train_fraction)
    save_confusion(m, out, force=args.force)
    print(f"wrote {out} ({regime.tag}, {len(train)} training images)")
    return EXIT_OK


def cmd_selfplay(args) -> int:
    cfg = _config(args)
    out = _outputs(args, cfg, _default_name(cfg, "selfplay"))
    setup = build_setup(cfg)
    tab = run_experiment(cfg, setup)
    print(format_table(tab))
    return _finish(args, [tab], setup, out)


def cmd_compare(args) -> int:
    cfg = _config(args)
    out = _outputs(args, cfg, _default_name(dataclasses.replace(cfg, strategy="compare"), "compare"))
    setup = build_setup(cfg)
    tables = run_baseline_comparison(cfg, setup)
    for tab in tables:
        print(format_table(tab))
        print()
    return _finish(args, list(tables), setup, out)


def cmd_serve_protocol(args) -> int:
    from .protocol import ExternalAnswerer, protocol_oracle_factory

    cfg = _config(args)
    if cfg.workers != 1:
        raise UsageError("the protocol bridge runs games sequentially (--workers 1)")
    out = _outputs(args, cfg, _default_name(cfg, "protocol"))
    setup = build_setup(cfg)
    bridge = ExternalAnswerer.spawn(args.peer, timeout=args.timeout)
    try:
        bridge.handshake()
        tab = run_experiment(cfg, setup, protocol_oracle_factory(bridge))
    finally:
        bridge.close()
    print(format_table(tab))
    return _finish(args, [tab], setup, out)


def cmd_report(args) -> int:
    rows = []
    for path in args.results:
        rows.extend(read_results_csv(path))
    if args.plot_data:
        _check_writable([args.plot_data], args.force)
    groups = {}
    for r in rows:
        groups.setdefault((r["strategy"], r["lambda"], r["regime"], r["seed"]), []).append(r)
    for (s, lam, reg, seed), rs in groups.items():
        print(f"strategy={s} regime={reg} lambda={lam} seed={seed}")
        print(f"{'turn':>4}  {'accuracy':>8}  {'ci95':>6}  {'entropy':>8}")
        for r in rs:
            print(f"{r['turn']:>4}  {r['accuracy']:8.4f}  {r['ci95']:6.4f}  {r['entropy_mean']:8.4f}")
        print()
    if args.plot_data:
        print(f"wrote {write_plot_series(rows, args.plot_data)}")
    return EXIT_OK


def _render_image(img) -> str:
    names = MNIST_SCHEMA.names
    lines = ["digit  " + "  ".join(f"{n:<8}" for n in names)]
    for i, row in enumerate(img.names()):
        lines.append(f"{i:>5}  " + "  ".join(f"{v:<8}" for v in row))
    return "\n".join(lines)


def _read_answer(stdin, stdout, prompt):
    """Prompt until an integer in 0..16 arrives; ``None`` on end of input."""
    while True:
        stdout.write(prompt)
        stdout.flush()
        line = stdin.readline()
        if not line:
            return None
        text = line.strip()
        try:
            a = int(text)
        except ValueError:
            stdout.write(f"please enter a whole number between 0 and {N_ANSWERS - 1}\n")
            continue
        if 0 <= a < N_ANSWERS:
            return a
        stdout.write(f"{a} is out of range, answers run from 0 to {N_ANSWERS - 1}\n")


def cmd_play(args, stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    ExperimentConfig(lam=args.lam, regime=args.regime, turns=args.turns).validate()
    world = load_world(args.world) if args.world else generate_world(args.n, MNIST_SCHEMA, [args.seed, 1])
    ans = make_answerer(args.lam, args.seed, MNIST_SCHEMA)
    if args.regime == "trueA":
        lik = true_model_likelihood(ans, world)
    elif args.model:
        lik = confusion_model_likelihood(load_confusion(args.model), world)
    else:
        train = generate_world(args.n_train, MNIST_SCHEMA, [args.seed, 0])
        labels = ans if args.regime == "depA" else None
        lik = confusion_model_likelihood(
            train_confusion(train, pool_questions(MNIST_SCHEMA), labels, np.random.default_rng([args.seed, 7])),
            world)
    pool = full_pool(MNIST_SCHEMA.questions)
    target = int(np.random.default_rng([args.seed, 2]).integers(len(world)))
    img = world[target]

    stdout.write(f"You are the answerer. The questioner is looking for one image among {len(world)}.\n")
    stdout.write(f"Your image (#{target}):\n{_render_image(img)}\n\n")
    post = Posterior.from_prior(Prior.uniform(len(world)))
    answered = 0
    for t in range(1, args.turns + 1):
        q, gain = select_question(post, pool, lik)
        cq = q.payload
        while True:
            a = _read_answer(stdin, stdout, f"Q{t}: how many digits have {cq.property} = {cq.value}? ")
            if a is None:
                stdout.write(f"\nsession ended after {answered} answered question(s); "
                             f"current guess #{guess(post)}, target #{target}\n")
                return EXIT_OK
            try:
                post = posterior_update(post, q, a, lik)
                break
            except ImpossibleAnswerError:
                stdout.write("no candidate image is consistent with that answer under the model, try again\n")
        answered += 1
        p = post.probs
        top = np.argsort(-p, kind="stable")[:5]
        stdout.write("  top candidates: " + ", ".join(f"#{int(c)} {p[c]:.3f}" for c in top) + "\n")
    g = guess(post)
    verdict = "correct" if g == target else "wrong"
    stdout.write(f"\nfinal guess: image #{g} ({verdict}; your image was #{target})\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aqm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-world", help="generate a world file")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_world)

    p = sub.add_parser("train", help="train a confusion model (depA or indA)")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--regime", default="depA")
    p.add_argument("--train-world")
    p.add_argument("--n-train", type=int, default=30000)
    p.add_argument("--world-seed", type=int, default=0)
    p.add_argument("--answerer-seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--train-fraction", type=float, default=1.0)
    p.add_argument("-o", "--output")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    for name, func, help_ in (("selfplay", cmd_selfplay, "run self-play games and export the curve"),
                              ("compare", cmd_compare, "AQM against random questions on paired seeds")):
        p = sub.add_parser(name, help=help_)
        _add_experiment_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("serve-protocol", help="self-play against an external answerer process")
    _add_experiment_flags(p)
    p.add_argument("--peer", default=f"{sys.executable} -m aqm.echo_oracle",
                   help="command speaking the JSON-lines answer protocol")
    p.add_argument("--timeout", type=float, default=30.0)
    p.set_defaults(func=cmd_serve_protocol)

    p = sub.add_parser("report", help="print exported result tables")
    p.add_argument("results", nargs="+")
    p.add_argument("--plot-data", help="write a per-curve series file")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("play", help="answer the questioner yourself")
    p.add_argument("--world")
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--regime", default="trueA")
    p.add_argument("--model")
    p.add_argument("--n-train", type=int, default=30000)
    p.add_argument("--turns", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_play)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"aqm {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"aqm {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except AQMError as exc:
        print(f"aqm {args.command}: {exc.code}: {exc}", file=sys.stderr)
        return EXIT_GAME
    except ValueError as exc:
        print(f"aqm {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
