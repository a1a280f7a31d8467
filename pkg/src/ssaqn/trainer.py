"""DQN-style training loop with prioritised replay of positive rewards."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .agent import Agent, HistoryLedger, normalize_target, play_episode, select_action
from .engine import GameSpec, Simulator
from .errors import EmptyMemory, VocabMismatch
from .nn import NetworkConfig, OptimizerState, init_params, load_checkpoint, mse_loss, ssaqn_backward, ssaqn_forward_batch
from .textproc import Vocabulary, pad_batch

log = logging.getLogger(__name__)

METRICS_HEADER = ("episode", "game_id", "eval_mean", "eval_std", "epsilon", "steps", "loss")


@dataclass(frozen=True)
class ExperienceTuple:
    s_text: str
    a_text: str
    r: float
    s_next_text: str
    a_next_texts: tuple[str, ...]
    game_id: str
    r_max: float

    @property
    def terminal(self) -> bool:
        return not self.a_next_texts


class ReplayMemory:
    """FIFO ring buffer that also indexes its positive-reward entries."""

    def __init__(self, capacity: int = 500_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.slots: list[ExperienceTuple] = []
        self._next = 0
        # slot lists with O(1) swap-removal, split by sign of reward
        self._pos: list[int] = []
        self._rest: list[int] = []
        self._where: dict[int, int] = {}

    def __len__(self) -> int:
        return len(self.slots)

    @property
    def positive_count(self) -> int:
        return len(self._pos)

    def positive_slots(self) -> list[int]:
        return list(self._pos)

    def _index_of(self, exp):
        return self._pos if exp.r > 0 else self._rest

    def _unindex(self, slot):
        bucket = self._index_of(self.slots[slot])
        at = self._where.pop(slot)
        last = bucket.pop()
        if last != slot:
            bucket[at] = last
            self._where[last] = at

    def store(self, exp: ExperienceTuple) -> None:
        if len(self.slots) < self.capacity:
            slot = len(self.slots)
            self.slots.append(exp)
        else:
            slot = self._next
            self._unindex(slot)
            self.slots[slot] = exp
        self._next = (slot + 1) % self.capacity
        bucket = self._index_of(exp)
        self._where[slot] = len(bucket)
        bucket.append(slot)

    def __iter__(self):
        return iter(self.slots)


def store(memory: ReplayMemory, exp: ExperienceTuple) -> None:
    memory.store(exp)


def _draw(rng, population: Sequence[int], k: int) -> list[int]:
    if k <= 0:
        return []
    replace = len(population) < k
    picks = rng.choice(len(population), size=k, replace=replace)
    return [population[int(i)] for i in picks]


def sample_batch(memory: ReplayMemory, b: int, p: float, rng) -> list[ExperienceTuple]:
    """``floor(p*b)`` positive-reward tuples followed by the remaining draws.

    With p > 0 the remainder comes from the non-positive entries, so exactly
    ``floor(p*b)`` positives end up in the batch whenever any exist. Without
    positives (or with p = 0) the whole batch is uniform over the memory.
    Draws are without replacement unless the pool is too small.
    """
    if len(memory) == 0:
        raise EmptyMemory("replay memory is empty")
    n_pos = int(np.floor(p * b))
    everything = range(len(memory))
    if n_pos == 0 or not memory._pos:
        slots = _draw(rng, everything, b)
    else:
        rest = memory._rest or everything
        slots = _draw(rng, memory._pos, n_pos) + _draw(rng, rest, b - n_pos)
    return [memory.slots[s] for s in slots]


# ---------------------------------------------------------------------------
# targets


def compute_target(exp: ExperienceTuple, agent: Agent, gamma: float) -> float:
    """Bellman target in game units: r, plus the discounted best next Q if non-terminal."""
    if exp.terminal or gamma == 0:
        return exp.r
    scores = agent.scores(exp.s_next_text, exp.a_next_texts)
    return exp.r + gamma * float(np.max(scores)) * exp.r_max


def compute_targets(batch: Sequence[ExperienceTuple], agent: Agent, gamma: float) -> np.ndarray:
    """Normalised targets for a batch; successor states are scored once each."""
    seen: dict = {}
    out = np.empty(len(batch))
    for i, exp in enumerate(batch):
        key = (exp.s_next_text, exp.a_next_texts, exp.r, exp.r_max)
        if key not in seen:
            seen[key] = normalize_target(compute_target(exp, agent, gamma), exp.r_max)
        out[i] = seen[key]
    return out


def batch_loss(agent: Agent, batch: Sequence[ExperienceTuple], targets: np.ndarray, mask_padding: bool = False):
    """Forward the batch through the network; returns (loss, dL/dcs, cache).

    States and actions are left-padded separately. By default the padding
    runs through the LSTM like any other token; ``mask_padding`` freezes the
    recurrent state over it instead, so padded and unpadded encodings agree.
    """
    S, _ = pad_batch([agent.indices(e.s_text) for e in batch])
    A, _ = pad_batch([agent.indices(e.a_text) for e in batch])
    cs, cache = ssaqn_forward_batch(agent.params, S, A, mask_padding)
    loss, dcs = mse_loss(cs, targets)
    return loss, dcs, cache


def train_step(agent: Agent, opt: OptimizerState, batch, gamma: float, lr: float,
               mask_padding: bool = False) -> float:
    targets = compute_targets(batch, agent, gamma)
    loss, dcs, cache = batch_loss(agent, batch, targets, mask_padding)
    grads = ssaqn_backward(agent.params, cache, dcs)
    agent.update(grads, opt, lr)
    return loss


# ---------------------------------------------------------------------------
# episodes and the loop


def run_episode(agent: Agent, sim: Simulator, epsilon: float, ledger: Optional[HistoryLedger], rng):
    """Play one episode with the epsilon-greedy policy, collecting experiences."""
    if ledger is not None:
        ledger.clear()
    game = sim.game
    obs = sim.reset()
    experiences, total = [], 0.0
    while not obs.done:
        choice = select_action(agent, obs, epsilon, ledger, rng, game.r_max)
        nxt = sim.step(choice)
        total += nxt.last_reward
        experiences.append(ExperienceTuple(
            obs.state_text, obs.action_texts[choice], nxt.last_reward,
            nxt.state_text, nxt.action_texts, game.id, game.r_max,
        ))
        obs = nxt
    return experiences, total, obs.steps_taken


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    epsilon_decay: float
    episodes: int = 500
    batch_size: int = 256
    prioritized_fraction: float = 0.25
    gamma: float = 0.95
    epsilon: float = 1.0
    eval_every: int = 1
    eval_runs: int = 1
    replay_capacity: int = 500_000
    seed: int = 0
    history_coefficient: Optional[float] = None
    eval_history: bool = True
    mask_padding: bool = False

    def __post_init__(self):
        if not 0 <= self.prioritized_fraction <= 1:
            raise ValueError("prioritized_fraction must lie in [0, 1]")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0 < self.epsilon_decay <= 1:
            raise ValueError("epsilon_decay must lie in (0, 1]")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.eval_every < 1 or self.eval_runs < 1:
            raise ValueError("learning_rate, batch_size, eval_every and eval_runs must be positive")


@dataclass(frozen=True)
class MetricsRow:
    episode: int
    game_id: str
    eval_mean: float
    eval_std: float
    epsilon: float
    steps: float
    loss: float

    def as_csv(self) -> list[str]:
        return [str(self.episode), self.game_id, repr(self.eval_mean), repr(self.eval_std),
                repr(self.epsilon), repr(self.steps), repr(self.loss)]


def write_metrics(rows: Sequence[MetricsRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for row in rows:
            writer.writerow(row.as_csv())


def read_metrics(path) -> list[MetricsRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [
            MetricsRow(int(r["episode"]), r["game_id"], float(r["eval_mean"]), float(r["eval_std"]),
                       float(r["epsilon"]), float(r["steps"]), float(r["loss"]))
            for r in reader
        ]


def build_agent(vocab: Vocabulary, seed, net_config: Optional[NetworkConfig] = None, initial=None,
                history_coefficient=None) -> Agent:
    """Fresh agent, or one restored from checkpoint ``initial`` with a matching vocabulary."""
    if initial is not None:
        params, ck_vocab, ck_config = load_checkpoint(initial)
        if ck_vocab.index_to_token != vocab.index_to_token:
            raise VocabMismatch(
                f"checkpoint vocabulary ({ck_vocab.size} tokens) differs from the supplied one ({vocab.size})"
            )
        return Agent(params, vocab, ck_config, history_coefficient)
    config = net_config or NetworkConfig(vocab_size=vocab.size)
    if config.vocab_size != vocab.size:
        raise ValueError("network config vocab_size does not match the vocabulary")
    return Agent(init_params(config, seed), vocab, config, history_coefficient)


def train(train_games: Sequence[GameSpec], eval_games: Sequence[GameSpec], config: TrainConfig,
          vocab: Vocabulary, initial=None, net_config: Optional[NetworkConfig] = None,
          callback: Optional[Callable[[int, list[MetricsRow]], bool]] = None):
    """Train one agent on all ``train_games`` at once.

    Each episode rolls out every training game once, takes one RMSProp step
    on a sampled batch and decays epsilon; every ``eval_every`` episodes the
    greedy policy is scored on each evaluation game. ``callback`` receives the
    episode number and the new rows and may return True to stop early.
    """
    seeds = np.random.SeedSequence(config.seed).spawn(4 + len(train_games) + len(eval_games))
    init_seed, choice_seed, sample_seed, _ = seeds[:4]
    train_seeds = seeds[4:4 + len(train_games)]
    eval_seeds = seeds[4 + len(train_games):]

    agent = build_agent(vocab, np.random.default_rng(init_seed), net_config, initial, config.history_coefficient)
    opt = OptimizerState()
    memory = ReplayMemory(config.replay_capacity)
    choice_rng = np.random.default_rng(choice_seed)
    sample_rng = np.random.default_rng(sample_seed)
    train_sims = [Simulator(g, np.random.default_rng(s)) for g, s in zip(train_games, train_seeds)]
    eval_sims = [Simulator(g, np.random.default_rng(s)) for g, s in zip(eval_games, eval_seeds)]
    ledger = HistoryLedger()

    epsilon = config.epsilon
    metrics: list[MetricsRow] = []
    for e in range(config.episodes):
        for sim in train_sims:
            experiences, _, _ = run_episode(agent, sim, epsilon, ledger, choice_rng)
            for exp in experiences:
                memory.store(exp)
        batch = sample_batch(memory, config.batch_size, config.prioritized_fraction, sample_rng)
        loss = train_step(agent, opt, batch, config.gamma, config.learning_rate, config.mask_padding)
        epsilon *= config.epsilon_decay

        episode = e + 1
        if episode % config.eval_every:
            continue
        rows = []
        for sim in eval_sims:
            results = [play_episode(agent, sim, 0.0, None, config.eval_history) for _ in range(config.eval_runs)]
            rewards = np.array([r for r, _ in results])
            steps = float(np.mean([s for _, s in results]))
            rows.append(MetricsRow(episode, sim.game.id, float(rewards.mean()), float(rewards.std()),
                                   epsilon, steps, loss))
        metrics.extend(rows)
        log.debug("episode %d: %s", episode, ", ".join(f"{r.game_id}={r.eval_mean:.2f}" for r in rows))
        if callback is not None and callback(episode, rows):
            break
    return agent, metrics
