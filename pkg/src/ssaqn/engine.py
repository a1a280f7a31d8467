"""Choice-based text game model and episode simulator."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import IndexOutOfRange, NoRuleMatched, StepAfterDone

DEFAULT_STEP_PENALTY = -0.1

_INTEGER = re.compile(r"-?\d+")


@dataclass(frozen=True)
class ActionSpec:
    description_variants: tuple[str, ...]
    transitions: tuple[tuple[str, float], ...]

    @property
    def deterministic(self) -> bool:
        return len(self.transitions) == 1


@dataclass(frozen=True)
class StateSpec:
    id: str
    description_variants: tuple[str, ...]
    terminal: bool = False
    ending_reward: Optional[float] = None
    actions: tuple[ActionSpec, ...] = ()


@dataclass(frozen=True)
class EndingRule:
    """Maps a substring of the final text to a reward.

    With ``scale`` set, the reward is ``scale * X + offset`` where ``X`` is the
    first integer appearing after the matched substring.
    """

    match: str
    reward: Optional[float] = None
    scale: Optional[float] = None
    offset: float = 0.0

    @property
    def linear(self) -> bool:
        return self.scale is not None

    def evaluate(self, text: str, start: int) -> float:
        if not self.linear:
            return float(self.reward)
        found = _INTEGER.search(text, start)
        if found is None:
            raise NoRuleMatched(f"rule {self.match!r} matched but no integer follows it")
        return self.scale * int(found.group()) + self.offset


@dataclass(frozen=True)
class GameSpec:
    id: str
    title: str
    start_state: str
    max_steps: int
    r_max: float
    states: dict[str, StateSpec]
    step_penalty: float = DEFAULT_STEP_PENALTY
    ending_rules: tuple[EndingRule, ...] = ()

    def __hash__(self):
        return hash(self.id)

    @property
    def stochastic_transitions(self) -> bool:
        return any(not a.deterministic for s in self.states.values() for a in s.actions)

    @property
    def deterministic(self) -> bool:
        """True when both transitions and descriptions are deterministic."""
        if self.stochastic_transitions:
            return False
        for s in self.states.values():
            if len(s.description_variants) > 1:
                return False
            if any(len(a.description_variants) > 1 for a in s.actions):
                return False
        return True

    def terminal_rewards(self, state_id: str) -> list[float]:
        """Reward of each description variant of a terminal state."""
        state = self.states[state_id]
        if state.ending_reward is not None:
            return [float(state.ending_reward)] * len(state.description_variants)
        return [classify_ending(self.ending_rules, text) for text in state.description_variants]


def classify_ending(rules: Sequence[EndingRule], final_text: str) -> float:
    """Reward of the first rule whose substring occurs in the final text."""
    if not final_text:
        raise ValueError("final text must be non-empty")
    lowered = final_text.lower()
    for rule in rules:
        pos = lowered.find(rule.match.lower())
        if pos >= 0:
            return rule.evaluate(lowered, pos + len(rule.match))
    raise NoRuleMatched(f"no ending rule matches {final_text[:60]!r}")


def present_actions(actions: Sequence[str], rng: np.random.Generator):
    """Shuffle action texts; ``permutation[i]`` is the canonical index shown at slot i."""
    if len(actions) == 0:
        raise ValueError("no actions to present")
    permutation = [int(i) for i in rng.permutation(len(actions))]
    return [actions[i] for i in permutation], permutation


@dataclass(frozen=True)
class Observation:
    state_text: str
    action_texts: tuple[str, ...]
    last_reward: float
    done: bool
    steps_taken: int


@dataclass
class EpisodeState:
    current: str
    steps_taken: int
    rng: np.random.Generator
    presentation_permutation: list[int] = field(default_factory=list)
    done: bool = False
    total_reward: float = 0.0


class Simulator:
    """Runs episodes of one game with a private seeded random stream.

    The stream is consumed across episodes, so repeated resets yield fresh
    shuffles and variants; two simulators built with the same seed replay
    identically.
    """

    def __init__(self, game: GameSpec, seed=None):
        self.game = game
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.state = EpisodeState(current=game.start_state, steps_taken=0, rng=rng, done=True)
        self.last_observation: Optional[Observation] = None

    @property
    def rng(self) -> np.random.Generator:
        return self.state.rng

    def _choose(self, variants):
        if len(variants) == 1:
            return variants[0]
        return variants[int(self.rng.integers(len(variants)))]

    def _observe(self, state_text: str, reward: float) -> Observation:
        st = self.state
        if st.done:
            st.presentation_permutation = []
            texts = ()
        else:
            spec = self.game.states[st.current]
            rendered = [self._choose(a.description_variants) for a in spec.actions]
            texts, st.presentation_permutation = present_actions(rendered, self.rng)
            texts = tuple(texts)
        self.last_observation = Observation(state_text, texts, reward, st.done, st.steps_taken)
        return self.last_observation

    def reset(self) -> Observation:
        st = self.state
        st.current = self.game.start_state
        st.steps_taken = 0
        st.total_reward = 0.0
        start = self.game.states[st.current]
        st.done = start.terminal
        return self._observe(self._choose(start.description_variants), 0.0)

    def step(self, presented_index: int) -> Observation:
        st = self.state
        if st.done:
            raise StepAfterDone("episode is over; call reset()")
        n = len(st.presentation_permutation)
        if not 0 <= presented_index < n:
            raise IndexOutOfRange(f"action index {presented_index} not in [0, {n})")
        action = self.game.states[st.current].actions[st.presentation_permutation[presented_index]]
        if action.deterministic:
            target = action.transitions[0][0]
        else:
            probs = np.array([p for _, p in action.transitions])
            pick = int(self.rng.choice(len(probs), p=probs / probs.sum()))
            target = action.transitions[pick][0]

        st.current = target
        st.steps_taken += 1
        spec = self.game.states[target]
        text = self._choose(spec.description_variants)
        if spec.terminal:
            if spec.ending_reward is not None:
                reward = float(spec.ending_reward)
            else:
                reward = classify_ending(self.game.ending_rules, text)
            st.done = True
        else:
            reward = self.game.step_penalty
            st.done = st.steps_taken >= self.game.max_steps
        st.total_reward += reward
        return self._observe(text, reward)

    def presented_index(self, canonical: int) -> int:
        """Slot at which canonical action ``canonical`` is currently shown."""
        return self.state.presentation_permutation.index(canonical)
