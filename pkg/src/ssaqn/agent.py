"""Playing agent: cached Q-values, Q scaling and history-penalised epsilon-greedy."""
from __future__ import annotations

from collections import Counter, defaultdict
from typing import Optional, Sequence

import numpy as np

from .engine import GameSpec, Observation, Simulator
from .nn import NetworkConfig, OptimizerState, Parameters, branch_forward, cosine, rmsprop_step
from .textproc import Vocabulary, encode, preprocess


def scale_q(cs, r_max: float):
    """Map a cosine score in [-1, 1] to game units [-r_max, r_max]."""
    return cs * r_max


def normalize_target(q_target, r_max: float):
    return np.clip(q_target / r_max, -1.0, 1.0)


class HistoryLedger:
    """Per-episode counts of selected (state text, action text) pairs."""

    def __init__(self):
        self.counts = Counter()

    @staticmethod
    def key(state_text: str, action_text: str):
        return " ".join(preprocess(state_text)), " ".join(preprocess(action_text))

    def count(self, state_text: str, action_text: str) -> int:
        return self.counts[self.key(state_text, action_text)]

    def record(self, state_text: str, action_text: str) -> None:
        self.counts[self.key(state_text, action_text)] += 1

    def clear(self) -> None:
        self.counts.clear()


class Agent:
    """SSAQN weights plus the text plumbing needed to score observations.

    Dense state-head outputs are cached per preprocessed state text and the
    cache is dropped on every parameter update.
    """

    def __init__(self, params: Parameters, vocab: Vocabulary, config: NetworkConfig,
                 history_coefficient: Optional[float] = None):
        if not vocab.size == config.vocab_size == params["E"].shape[0]:
            raise ValueError(
                f"vocabulary size {vocab.size}, config {config.vocab_size} and "
                f"embedding rows {params['E'].shape[0]} disagree"
            )
        self.params = params
        self.vocab = vocab
        self.config = config
        self.history_coefficient = history_coefficient
        self._indices: dict[str, tuple[int, ...]] = {}
        self._state_cache: dict[tuple[int, ...], np.ndarray] = {}

    def indices(self, text: str) -> tuple[int, ...]:
        idx = self._indices.get(text)
        if idx is None:
            idx = self._indices[text] = tuple(encode(self.vocab, preprocess(text)))
        return idx

    def invalidate(self) -> None:
        self._state_cache.clear()

    def update(self, grads, opt: OptimizerState, lr: float) -> None:
        rmsprop_step(self.params, opt, grads, lr)
        self.invalidate()

    def state_vector(self, state_text: str) -> np.ndarray:
        key = self.indices(state_text)
        x = self._state_cache.get(key)
        if x is None:
            x, _ = branch_forward(self.params, np.array([key], dtype=np.int64).reshape(1, len(key)), "s")
            x = self._state_cache[key] = x[0]
        return x

    def action_vectors(self, action_texts: Sequence[str]) -> np.ndarray:
        """Action-head outputs; texts are batched by length so nothing is padded."""
        seqs = [self.indices(t) for t in action_texts]
        out = np.empty((len(seqs), self.config.dense_dim))
        groups = defaultdict(list)
        for row, seq in enumerate(seqs):
            groups[len(seq)].append(row)
        for length, rows in groups.items():
            X = np.array([seqs[r] for r in rows], dtype=np.int64).reshape(len(rows), length)
            y, _ = branch_forward(self.params, X, "a")
            out[rows] = y
        return out

    def scores(self, state_text: str, action_texts: Sequence[str]) -> np.ndarray:
        """Raw cosine scores of each action in the state."""
        x = self.state_vector(state_text)
        return cosine(x[None, :], self.action_vectors(action_texts))


def q_values(agent: Agent, state_text: str, action_texts: Sequence[str], r_max: float) -> list[float]:
    return [float(q) for q in scale_q(agent.scores(state_text, action_texts), r_max)]


def select_action(agent: Agent, observation: Observation, epsilon: float, ledger: Optional[HistoryLedger],
                  rng: Optional[np.random.Generator], r_max: float) -> int:
    """Epsilon-greedy over history-penalised Q-values; records the choice."""
    texts = observation.action_texts
    if epsilon > 0 and rng.random() < epsilon:
        choice = int(rng.integers(len(texts)))
    else:
        q = np.array(q_values(agent, observation.state_text, texts, r_max))
        if ledger is not None:
            c = 2.0 * r_max if agent.history_coefficient is None else agent.history_coefficient
            q = q - c * np.array([ledger.count(observation.state_text, a) for a in texts])
        choice = int(np.argmax(q))
    if ledger is not None:
        ledger.record(observation.state_text, texts[choice])
    return choice


def play_episode(agent: Agent, sim: Simulator, epsilon: float = 0.0, rng=None, use_history: bool = True):
    """One episode; returns (total reward, steps)."""
    ledger = HistoryLedger() if use_history else None
    obs = sim.reset()
    total = 0.0
    while not obs.done:
        choice = select_action(agent, obs, epsilon, ledger, rng, sim.game.r_max)
        obs = sim.step(choice)
        total += obs.last_reward
    return total, obs.steps_taken


def evaluate(agent: Agent, game: GameSpec, runs: int, seed=None, epsilon: float = 0.0,
             use_history: bool = True, sim: Optional[Simulator] = None, rng=None):
    """Mean and population standard deviation of ``runs`` episode rewards."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    sim_seed, choice_seed = np.random.SeedSequence(seed).spawn(2)
    sim = sim or Simulator(game, np.random.default_rng(sim_seed))
    if epsilon > 0 and rng is None:
        rng = np.random.default_rng(choice_seed)
    rewards = [play_episode(agent, sim, epsilon, rng, use_history)[0] for _ in range(runs)]
    return float(np.mean(rewards)), float(np.std(rewards))
