"""Game files, synthetic game generation and the value-iteration oracle."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .engine import DEFAULT_STEP_PENALTY, ActionSpec, EndingRule, GameSpec, StateSpec
from .errors import InfeasibleParams, NoRuleMatched, ParseError, ValidationError
from .textproc import preprocess

FORMAT_VERSION = 1
PROB_TOLERANCE = 1e-9

BUNDLED_GAMES = ("mini-quest", "mini-fate", "loop-trap")
RULE_TABLES = ("cat-simulator-2016", "star-court", "the-red-hair", "transit")


# ---------------------------------------------------------------------------
# parsing


def _require(obj, key, kind, where):
    if not isinstance(obj, dict) or key not in obj:
        raise ParseError(f"{where}: missing key {key!r}")
    value = obj[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ParseError(f"{where}.{key}: expected a number")
        return float(value)
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise ParseError(f"{where}.{key}: expected {kind.__name__}")
    return value


def _texts(obj, where) -> tuple[str, ...]:
    variants = _require(obj, "description_variants", list, where)
    if not all(isinstance(v, str) for v in variants):
        raise ParseError(f"{where}.description_variants: expected a list of strings")
    return tuple(variants)


def _parse_rule(raw, where) -> EndingRule:
    match = _require(raw, "match", str, where)
    if "scale" in raw:
        return EndingRule(
            match,
            scale=_require(raw, "scale", float, where),
            offset=float(raw.get("offset", 0.0)),
        )
    return EndingRule(match, reward=_require(raw, "reward", float, where))


def parse_rules(raw_rules, where="ending_rules") -> tuple[EndingRule, ...]:
    if not isinstance(raw_rules, list):
        raise ParseError(f"{where}: expected a list")
    return tuple(_parse_rule(r, f"{where}[{i}]") for i, r in enumerate(raw_rules))


def _parse(doc: dict) -> GameSpec:
    if doc.get("format") != FORMAT_VERSION:
        raise ParseError(f"unsupported format {doc.get('format')!r}; expected {FORMAT_VERSION}")
    raw_states = _require(doc, "states", dict, "game")
    states = {}
    for sid, raw in raw_states.items():
        where = f"states.{sid}"
        actions = []
        for i, ra in enumerate(raw.get("actions", [])):
            aw = f"{where}.actions[{i}]"
            trans = []
            for j, rt in enumerate(_require(ra, "transitions", list, aw)):
                tw = f"{aw}.transitions[{j}]"
                trans.append((_require(rt, "target", str, tw), _require(rt, "p", float, tw)))
            actions.append(ActionSpec(_texts(ra, aw), tuple(trans)))
        reward = raw.get("ending_reward")
        if reward is not None and (isinstance(reward, bool) or not isinstance(reward, (int, float))):
            raise ParseError(f"{where}.ending_reward: expected a number")
        states[sid] = StateSpec(
            id=sid,
            description_variants=_texts(raw, where),
            terminal=bool(raw.get("terminal", False)),
            ending_reward=None if reward is None else float(reward),
            actions=tuple(actions),
        )
    return GameSpec(
        id=_require(doc, "id", str, "game"),
        title=str(doc.get("title", doc["id"])),
        start_state=_require(doc, "start_state", str, "game"),
        max_steps=_require(doc, "max_steps", int, "game"),
        r_max=_require(doc, "r_max", float, "game"),
        step_penalty=float(doc.get("step_penalty", DEFAULT_STEP_PENALTY)),
        states=states,
        ending_rules=parse_rules(doc.get("ending_rules", [])),
    )


def validate(game: GameSpec) -> list[str]:
    """Every invariant violation of ``game``; empty when the game is valid."""
    problems = []
    if game.max_steps < 1:
        problems.append(f"max_steps must be positive, got {game.max_steps}")
    if not game.r_max > 0:
        problems.append(f"r_max must be positive, got {game.r_max}")
    if game.step_penalty > 0:
        problems.append(f"step_penalty must be <= 0, got {game.step_penalty}")
    if game.start_state not in game.states:
        problems.append(f"start state {game.start_state!r} does not exist")

    for sid, state in game.states.items():
        if not state.description_variants:
            problems.append(f"state {sid!r} has no description variants")
        if state.terminal:
            if state.actions:
                problems.append(f"terminal state {sid!r} has actions")
            if state.ending_reward is None:
                try:
                    classified = game.terminal_rewards(sid)
                except NoRuleMatched:
                    problems.append(f"terminal state {sid!r} has no ending_reward and no matching ending rule")
                else:
                    if any(abs(x) > game.r_max for x in classified):
                        problems.append(f"terminal state {sid!r} classified reward exceeds r_max {game.r_max}")
            elif abs(state.ending_reward) > game.r_max:
                problems.append(f"terminal state {sid!r} reward {state.ending_reward} exceeds r_max {game.r_max}")
            continue
        if not state.actions:
            problems.append(f"non-terminal state {sid!r} has no actions")
        for i, action in enumerate(state.actions):
            where = f"state {sid!r} action {i}"
            if not action.description_variants:
                problems.append(f"{where} has no description variants")
            if not action.transitions:
                problems.append(f"{where} has no transitions")
                continue
            for target, p in action.transitions:
                if target not in game.states:
                    problems.append(f"{where} targets unknown state {target!r}")
                if not 0 < p <= 1:
                    problems.append(f"{where} has probability {p} outside (0, 1]")
            total = math.fsum(p for _, p in action.transitions)
            if abs(total - 1.0) > PROB_TOLERANCE:
                problems.append(f"{where}: probabilities sum to {total:.12g}")

    if not problems:
        best = optimal_reward(game).optimal_expected_reward
        if abs(best) > game.r_max + 1e-12:
            problems.append(f"optimal reward {best} exceeds r_max {game.r_max}")
    return problems


def load_game(document: str) -> GameSpec:
    """Parse and validate a JSON game document."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("game document must be a JSON object")
    game = _parse(doc)
    problems = validate(game)
    if problems:
        raise ValidationError(problems)
    return game


def load_game_file(path) -> GameSpec:
    return load_game(Path(path).read_text(encoding="utf-8"))


def _rule_to_json(rule: EndingRule) -> dict:
    if rule.linear:
        return {"match": rule.match, "scale": rule.scale, "offset": rule.offset}
    return {"match": rule.match, "reward": rule.reward}


def dump_game(game: GameSpec) -> str:
    states = {}
    for sid, s in game.states.items():
        raw = {"description_variants": list(s.description_variants), "terminal": s.terminal}
        if s.ending_reward is not None:
            raw["ending_reward"] = s.ending_reward
        raw["actions"] = [
            {
                "description_variants": list(a.description_variants),
                "transitions": [{"target": t, "p": p} for t, p in a.transitions],
            }
            for a in s.actions
        ]
        states[sid] = raw
    doc = {
        "format": FORMAT_VERSION,
        "id": game.id,
        "title": game.title,
        "start_state": game.start_state,
        "max_steps": game.max_steps,
        "r_max": game.r_max,
        "step_penalty": game.step_penalty,
        "states": states,
        "ending_rules": [_rule_to_json(r) for r in game.ending_rules],
    }
    return json.dumps(doc, indent=1, ensure_ascii=False) + "\n"


# ---------------------------------------------------------------------------
# bundled assets


def _data_file(*parts):
    return resources.files("ssaqn").joinpath("data", *parts)


@lru_cache(maxsize=None)
def bundled_game(name: str) -> GameSpec:
    return load_game(_data_file("games", f"{name}.game").read_text(encoding="utf-8"))


def bundled_suite() -> list[GameSpec]:
    return [bundled_game(n) for n in BUNDLED_GAMES]


def resolve_game(ref) -> GameSpec:
    """Load a game from a path, falling back to a bundled game name."""
    path = Path(ref)
    if path.exists():
        return load_game_file(path)
    stem = path.name[:-5] if path.name.endswith(".game") else path.name
    if stem in BUNDLED_GAMES:
        return bundled_game(stem)
    raise FileNotFoundError(f"no such game file: {ref}")


def load_rule_table(name: str):
    """Ending rules of a bundled fixture table plus its (text, reward) cases."""
    doc = json.loads(_data_file("rules", f"{name}.json").read_text(encoding="utf-8"))
    rules = parse_rules(doc["ending_rules"])
    cases = [(c["text"], float(c["reward"])) for c in doc.get("cases", [])]
    return rules, cases


# ---------------------------------------------------------------------------
# oracle


@dataclass(frozen=True)
class OracleResult:
    optimal_expected_reward: float
    optimal_action_map: dict  # (state id, steps remaining) -> canonical action index

    def action(self, state_id: str, steps_remaining: int) -> int:
        return self.optimal_action_map[(state_id, steps_remaining)]


def optimal_reward(game: GameSpec) -> OracleResult:
    """Finite-horizon value iteration over (state, steps remaining).

    Non-terminal arrivals pay ``step_penalty``, terminal arrivals pay the ending
    reward (averaged over description variants), running out of steps pays
    nothing further. No discounting.
    """
    ending = {
        sid: sum(r) / len(r)
        for sid, s in game.states.items()
        if s.terminal
        for r in [game.terminal_rewards(sid)]
    }
    if game.states[game.start_state].terminal:
        return OracleResult(ending[game.start_state], {})

    live = [sid for sid, s in game.states.items() if not s.terminal]
    pen = game.step_penalty
    value = dict.fromkeys(live, 0.0)
    policy = {}
    for k in range(1, game.max_steps + 1):
        nxt = {}
        for sid in live:
            best, best_i = -math.inf, 0
            for i, action in enumerate(game.states[sid].actions):
                q = 0.0
                for target, p in action.transitions:
                    q += p * (ending[target] if target in ending else pen + value[target])
                if q > best:
                    best, best_i = q, i
            nxt[sid] = best
            policy[(sid, k)] = best_i
        value = nxt
    return OracleResult(value[game.start_state], policy)


def enumerate_vocabulary(games: Iterable[GameSpec]) -> list[str]:
    """Sorted union of preprocessed tokens over every state and action text."""
    tokens = set()
    for game in games:
        for state in game.states.values():
            for text in state.description_variants:
                tokens.update(preprocess(text))
            for action in state.actions:
                for text in action.description_variants:
                    tokens.update(preprocess(text))
    return sorted(tokens)


# ---------------------------------------------------------------------------
# synthetic games

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


@dataclass(frozen=True)
class SyntheticParams:
    n_states: int = 18
    branching: float = 2.5
    n_endings: int = 7
    lexicon_size: int = 155
    cycle_probability: float = 0.2
    stochastic_transitions: bool = False
    description_variant_count: int = 1
    avg_words_per_description: int = 28
    seed: int = 0
    lexicon_seed: Optional[int] = None  # set to share one lexicon between games
    max_steps: int = 100
    step_penalty: float = DEFAULT_STEP_PENALTY
    best_reward: float = 20.0
    game_id: Optional[str] = None

    def problems(self) -> list[str]:
        out = []
        if self.n_states < 3:
            out.append("n_states must be >= 3")
        if self.n_endings < 2:
            out.append("n_endings must be >= 2")
        if self.n_endings >= self.n_states:
            out.append(f"n_endings ({self.n_endings}) must be < n_states ({self.n_states})")
        if self.branching < 1:
            out.append("branching must be >= 1")
        if not 0 <= self.cycle_probability <= 1:
            out.append("cycle_probability must lie in [0, 1]")
        if self.description_variant_count < 1:
            out.append("description_variant_count must be >= 1")
        if self.avg_words_per_description < 1 or self.lexicon_size < 2:
            out.append("text sizes must be positive")
        if self.max_steps < 1 or self.best_reward <= 0 or self.step_penalty > 0:
            out.append("max_steps and best_reward must be positive, step_penalty <= 0")
        return out


@lru_cache(maxsize=1)
def _reserved_words() -> frozenset:
    return frozenset(enumerate_vocabulary(bundled_suite()))


def synthetic_lexicon(size: int, seed: int) -> list[str]:
    """Pronounceable three-syllable nonsense words, disjoint from the bundled games."""
    rng = np.random.default_rng([seed, 0x1E8])
    reserved = _reserved_words()
    words, seen = [], set()
    while len(words) < size:
        cs = rng.integers(len(_CONSONANTS), size=3)
        vs = rng.integers(len(_VOWELS), size=3)
        word = "".join(_CONSONANTS[c] + _VOWELS[v] for c, v in zip(cs, vs))
        if word not in seen and word not in reserved:
            seen.add(word)
            words.append(word)
    return words


def _sentence(rng, lexicon, n_words):
    words = [lexicon[i] for i in rng.integers(len(lexicon), size=max(1, n_words))]
    return " ".join(words).capitalize() + "."


def _split_probability(rng, parts):
    raw = rng.dirichlet(np.ones(parts)) * 0.8 + 0.2 / parts
    probs = [round(float(x), 6) for x in raw[:-1]]
    probs.append(round(1.0 - sum(probs), 6))
    return probs


def generate_synthetic(params: SyntheticParams) -> GameSpec:
    """Seeded random game with exactly one maximal ending."""
    problems = params.problems()
    if problems:
        raise InfeasibleParams("; ".join(problems))
    rng = np.random.default_rng([params.seed, 0x5EED])
    lex_seed = params.seed if params.lexicon_seed is None else params.lexicon_seed
    lexicon = synthetic_lexicon(params.lexicon_size, lex_seed)

    n_live = params.n_states - params.n_endings
    live = [f"s{i:02d}" for i in range(n_live)]
    ends = [f"end{j:02d}" for j in range(params.n_endings)]

    # spanning tree over live states keeps every state reachable from s00
    targets = {sid: [] for sid in live}
    depth = {live[0]: 0}
    for i in range(1, n_live):
        parent = live[int(rng.integers(i))]
        targets[parent].append(live[i])
        depth[live[i]] = depth[parent] + 1
    # deepest leaf first: it receives the planted best ending
    leaves = sorted((sid for sid in live if not targets[sid]), key=lambda s: -depth[s])
    order = list(rng.permutation(len(ends)))
    for j, e in enumerate(order):
        holder = leaves[j] if j < len(leaves) else live[int(rng.integers(n_live))]
        targets[holder].append(ends[e])
    for sid in leaves[len(ends):]:
        targets[sid].append(ends[int(rng.integers(len(ends)))])

    for i, sid in enumerate(live):
        want = 1 + int(rng.poisson(params.branching - 1))
        tries = 0
        while len(targets[sid]) < want and tries < 20:
            tries += 1
            if i > 0 and rng.random() < params.cycle_probability:
                cand = live[int(rng.integers(i))]
            else:
                pool = live[i + 1:] + ends
                cand = pool[int(rng.integers(len(pool)))]
            if cand not in targets[sid]:
                targets[sid].append(cand)
        rng.shuffle(targets[sid])

    # one planted best ending, the rest graded downward to -best_reward
    best = params.best_reward
    rewards = {ends[order[0]]: best}
    others = [ends[e] for e in order[1:]]
    for k, e in enumerate(others):
        frac = k / max(1, len(others) - 1)
        rewards[e] = round(best / 2 - frac * 1.5 * best, 1)

    used_texts = set()

    def fresh_text(n_words):
        while True:
            text = _sentence(rng, lexicon, n_words)
            if text not in used_texts:
                used_texts.add(text)
                return text

    avg = params.avg_words_per_description

    def description():
        return tuple(
            fresh_text(int(rng.integers(max(1, avg // 2), avg + avg // 2 + 1)))
            for _ in range(params.description_variant_count)
        )

    states = {}
    for sid in live:
        actions = []
        for target in targets[sid]:
            trans = [(target, 1.0)]
            forced = sid == live[0] and not actions
            if params.stochastic_transitions and (rng.random() < 0.3 or forced):
                i = live.index(sid)
                pool = [s for s in live[i + 1:] + ends if s != target]
                if pool:
                    extra = pool[int(rng.integers(len(pool)))]
                    p = _split_probability(rng, 2)
                    trans = [(target, p[0]), (extra, p[1])]
            action_words = max(2, avg // 6 + int(rng.integers(0, 3)))
            actions.append(ActionSpec((fresh_text(action_words),), tuple(trans)))
        states[sid] = StateSpec(sid, description(), actions=tuple(actions))
    for e in ends:
        states[e] = StateSpec(e, description(), terminal=True, ending_reward=rewards[e])

    game = GameSpec(
        id=params.game_id or f"synthetic-{params.seed}",
        title=f"Synthetic game {params.seed}",
        start_state=live[0],
        max_steps=params.max_steps,
        r_max=best,
        step_penalty=params.step_penalty,
        states=states,
    )
    problems = validate(game)
    if problems:
        raise InfeasibleParams("; ".join(problems))
    if not optimal_reward(game).optimal_expected_reward > 0:
        raise InfeasibleParams("no positive ending reachable within max_steps")
    return game
