"""Command-line entry point: ``ssaqn gen|oracle|vocab|train|eval|play``.

Exit codes: 0 on success, 1 on usage or validation errors, 2 on I/O errors.
Diagnostics go to stderr; data goes to files or stdout.
"""
from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence, TextIO

from . import gamefmt
from .agent import Agent, evaluate
from .engine import GameSpec, Simulator
from .errors import SSAQNError
from .nn import load_checkpoint, save_checkpoint
from .textproc import Vocabulary
from .trainer import TrainConfig, train, write_metrics

log = logging.getLogger("ssaqn")

EXIT_OK, EXIT_USAGE, EXIT_IO = 0, 1, 2

# (learning rate, epsilon decay) used when a preset is chosen and the flags are omitted
PRESET_RATES = {
    "individual": (1e-4, 0.99),
    "generalise": (1e-5, 0.999),
    "transfer": (1e-5, 0.999),
    "universal": (1e-5, 0.999),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ssaqn", description="Text-game simulator and SSAQN trainer.")
    common = _Parser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic game")
    p.add_argument("--states", type=int, default=18)
    p.add_argument("--endings", type=int, default=7)
    p.add_argument("--branching", type=float, default=2.5)
    p.add_argument("--cycle-prob", type=float, default=0.2)
    p.add_argument("--lexicon-size", type=int, default=155)
    p.add_argument("--lexicon-seed", type=int, default=None, help="share a lexicon between games")
    p.add_argument("--words", type=int, default=28, help="average words per state description")
    p.add_argument("--variants", type=int, default=1, help="description variants per state")
    p.add_argument("--stochastic", action="store_true", help="add stochastic transitions")
    p.add_argument("--max-steps", type=int, default=100)
    p.add_argument("--id", dest="game_id", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output path (default: stdout)")

    p = sub.add_parser("oracle", parents=[common], help="print a game's optimal expected reward")
    p.add_argument("--game", required=True, help="game file or bundled game name")

    p = sub.add_parser("vocab", parents=[common], help="build the unified vocabulary of some games")
    p.add_argument("--games", nargs="+", required=True)
    p.add_argument("--out", default=None, help="output path (default: stdout)")

    p = sub.add_parser("train", parents=[common], help="train an agent")
    p.add_argument("--preset", choices=sorted(PRESET_RATES), default=None,
                   help="wire train/eval games on the bundled suite (or on --games)")
    p.add_argument("--games", nargs="+", default=None)
    p.add_argument("--eval-games", nargs="+", default=None)
    p.add_argument("--vocab", default=None, help="vocabulary file (default: union of all games involved)")
    p.add_argument("--episodes", type=int, default=500)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--eps-decay", type=float, default=None)
    p.add_argument("--gamma", type=float, default=0.95)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--prioritized", type=float, default=0.25)
    p.add_argument("--eval-every", type=int, default=1)
    p.add_argument("--eval-runs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--history-coeff", type=float, default=None, help="history penalty c (default 2*r_max)")
    p.add_argument("--mask-padding", action="store_true", help="freeze the LSTM over padding in training batches")
    p.add_argument("--initial", default=None, help="checkpoint to start from")
    p.add_argument("--out", default=None, help="checkpoint path")
    p.add_argument("--metrics", default=None, help="metrics CSV path")
    p.add_argument("--plot", default=None, help="learning-curve image path (png, pdf, svg)")

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint's greedy policy")
    p.add_argument("--model", required=True)
    p.add_argument("--games", nargs="+", required=True)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-history", action="store_true", help="disable the history penalty")

    p = sub.add_parser("play", parents=[common], help="play a game in the terminal")
    p.add_argument("--game", required=True)
    p.add_argument("--seed", type=int, default=None)
    return parser


# ---------------------------------------------------------------------------
# commands


def _write_text(text: str, path: Optional[str], stdout: TextIO) -> None:
    if path is None:
        stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def cmd_gen(args, stdout, stderr) -> int:
    params = gamefmt.SyntheticParams(
        n_states=args.states, branching=args.branching, n_endings=args.endings,
        lexicon_size=args.lexicon_size, cycle_probability=args.cycle_prob,
        stochastic_transitions=args.stochastic, description_variant_count=args.variants,
        avg_words_per_description=args.words, seed=args.seed, lexicon_seed=args.lexicon_seed,
        max_steps=args.max_steps, game_id=args.game_id,
    )
    game = gamefmt.generate_synthetic(params)
    _write_text(gamefmt.dump_game(game), args.out, stdout)
    return EXIT_OK


def cmd_oracle(args, stdout, stderr) -> int:
    game = gamefmt.resolve_game(args.game)
    stdout.write(_fmt(gamefmt.optimal_reward(game).optimal_expected_reward) + "\n")
    return EXIT_OK


def cmd_vocab(args, stdout, stderr) -> int:
    tokens = gamefmt.enumerate_vocabulary([gamefmt.resolve_game(g) for g in args.games])
    _write_text("".join(t + "\n" for t in tokens), args.out, stdout)
    return EXIT_OK


def _unique(games: Sequence[GameSpec]) -> list[GameSpec]:
    seen, out = set(), []
    for g in games:
        if g.id not in seen:
            seen.add(g.id)
            out.append(g)
    return out


def wire_games(preset: Optional[str], games, eval_games, initial):
    """Resolve (train games, eval games, vocabulary games) for a preset.

    individual: train and evaluate on the same game(s).
    generalise: leave-one-out; train on the suite minus the held-out eval games.
    transfer: continue training an ``initial`` checkpoint on the held-out game(s).
    universal: train and evaluate on the whole suite.
    The suite is ``games`` when given, otherwise the bundled games; the
    held-out game defaults to the last one of the suite.
    """
    games = [gamefmt.resolve_game(g) for g in games] if games else None
    eval_games = [gamefmt.resolve_game(g) for g in eval_games] if eval_games else None
    if preset is None:
        if not games:
            raise UsageError("train: --games is required without --preset")
        evals = eval_games or games
        return games, evals, _unique(games + evals)
    if preset == "individual":
        chosen = games or [gamefmt.bundled_game("mini-quest")]
        evals = eval_games or chosen
        return chosen, evals, _unique(chosen + evals)
    suite = games or gamefmt.bundled_suite()
    if preset == "universal":
        evals = eval_games or suite
        return suite, evals, _unique(suite + evals)
    held = eval_games or [suite[-1]]
    vocab_games = _unique(suite + held)
    if preset == "generalise":
        held_ids = {g.id for g in held}
        train_games = [g for g in suite if g.id not in held_ids]
        if not train_games:
            raise UsageError("train: leave-one-out needs at least one game besides the held-out one")
        return train_games, held, vocab_games
    if initial is None:
        raise UsageError("train: the transfer preset needs --initial")
    return held, held, vocab_games


def cmd_train(args, stdout, stderr) -> int:
    train_games, eval_games, vocab_games = wire_games(args.preset, args.games, args.eval_games, args.initial)
    lr, decay = args.lr, args.eps_decay
    if args.preset is not None:
        default_lr, default_decay = PRESET_RATES[args.preset]
        lr = default_lr if lr is None else lr
        decay = default_decay if decay is None else decay
    if lr is None or decay is None:
        raise UsageError("train: --lr and --eps-decay are required without --preset")
    if args.episodes < 1:
        raise UsageError("train: --episodes must be >= 1")
    try:
        config = TrainConfig(
            learning_rate=lr, epsilon_decay=decay, episodes=args.episodes, batch_size=args.batch,
            prioritized_fraction=args.prioritized, gamma=args.gamma, eval_every=args.eval_every,
            eval_runs=args.eval_runs, seed=args.seed, history_coefficient=args.history_coeff,
            mask_padding=args.mask_padding,
        )
    except ValueError as exc:
        raise UsageError(f"train: {exc}") from exc
    if args.vocab:
        vocab = Vocabulary.load(args.vocab)
    else:
        vocab = Vocabulary.from_tokens(gamefmt.enumerate_vocabulary(vocab_games))
    log.info("training on %s, evaluating on %s, vocabulary of %d tokens",
             ",".join(g.id for g in train_games), ",".join(g.id for g in eval_games), vocab.size)

    def progress(episode, rows):
        if episode % 50 == 0:
            log.info("episode %d: %s", episode, " ".join(f"{r.game_id}={r.eval_mean:.2f}" for r in rows))
        return False

    agent, metrics = train(train_games, eval_games, config, vocab, initial=args.initial, callback=progress)
    if args.out:
        save_checkpoint(agent.params, agent.vocab, agent.config, args.out)
    if args.metrics:
        write_metrics(metrics, args.metrics)
    optima = {g.id: gamefmt.optimal_reward(g).optimal_expected_reward for g in eval_games}
    if args.plot and metrics:
        from .report import plot_learning_curves

        plot_learning_curves(metrics, args.plot, optima)
    last = {r.game_id: r for r in metrics}
    for g in eval_games:
        row = last.get(g.id)
        final = "n/a" if row is None else _fmt(row.eval_mean)
        stdout.write(f"{g.id}: final eval {final}, oracle optimum {_fmt(optima[g.id])}\n")
    return EXIT_OK


def cmd_eval(args, stdout, stderr) -> int:
    params, vocab, config = load_checkpoint(args.model)
    agent = Agent(params, vocab, config)
    if args.runs < 1:
        raise UsageError("eval: --runs must be >= 1")
    stdout.write("game_id,runs,mean,std,oracle\n")
    for ref in args.games:
        game = gamefmt.resolve_game(ref)
        mean, std = evaluate(agent, game, args.runs, seed=args.seed, use_history=not args.no_history)
        best = gamefmt.optimal_reward(game).optimal_expected_reward
        stdout.write(f"{game.id},{args.runs},{mean!r},{std!r},{best!r}\n")
    return EXIT_OK


def interactive_play(game: GameSpec, seed=None, stdin: TextIO = sys.stdin,
                     stdout: TextIO = sys.stdout) -> Optional[float]:
    """Turn-based terminal play. Returns the total reward, or None if the player quits."""
    sim = Simulator(game, seed)
    obs = sim.reset()
    stdout.write(obs.state_text + "\n")
    while not obs.done:
        for i, text in enumerate(obs.action_texts, 1):
            stdout.write(f"  {i}. {text}\n")
        n = len(obs.action_texts)
        while True:
            stdout.write("> ")
            stdout.flush()
            line = stdin.readline()
            if not line:
                return None
            answer = line.strip()
            if answer.lower() == "q":
                return None
            if answer.isdigit() and 1 <= int(answer) <= n:
                break
            stdout.write(f"Enter a number from 1 to {n}, or q to quit.\n")
        obs = sim.step(int(answer) - 1)
        stdout.write("\n" + obs.state_text + "\n")
    total = sim.state.total_reward
    stdout.write(f"Total reward: {_fmt(total)}\n")
    return total


def cmd_play(args, stdout, stderr, stdin) -> int:
    interactive_play(gamefmt.resolve_game(args.game), args.seed, stdin, stdout)
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "oracle": cmd_oracle, "vocab": cmd_vocab, "train": cmd_train, "eval": cmd_eval}


def dispatch(argv: Optional[Sequence[str]] = None, stdin: TextIO = None, stdout: TextIO = None,
             stderr: TextIO = None) -> int:
    """Run one command and return its exit code."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE

    handler = logging.StreamHandler(stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO if args.verbose else logging.WARNING)
    try:
        if args.command == "play":
            return cmd_play(args, stdout, stderr, stdin)
        return COMMANDS[args.command](args, stdout, stderr)
    except OSError as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_IO
    except (UsageError, SSAQNError, ValueError) as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    finally:
        log.removeHandler(handler)


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
