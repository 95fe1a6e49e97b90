"""Scripted, parameterised policy populations for both environments.

Arena agents mix opponent-seeking, centre-seeking and orbiting drives and
sample a thrust from a softmax over cosine scores. Speakers each have one or
two forbidden symbols and a codebook; listeners decode symbols into landmark
guesses learned from the two speakers they are paired with.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.stats import qmc

from .env import ARENA_ACTIONS, LISTENER_MOVES, NO_THRUST, STAY, THRUST_DIRS
from .errors import ConfigError, ObservationError
from .nn_core import softmax

N_SYMBOLS = 7
N_TARGETS = 3

# --- arena -------------------------------------------------------------------


@dataclass(frozen=True)
class ArenaStyle:
    aggressiveness: float  # in [0, 1]
    orbit_bias: float  # in [-0.5, 0.5]
    temperature: float  # in [0.1, 1.0]
    dash_period: int = 0  # 0 (no dashes) or 4..12

    def __post_init__(self):
        if not 0.0 <= self.aggressiveness <= 1.0:
            raise ConfigError("aggressiveness must lie in [0, 1]")
        if not -0.5 <= self.orbit_bias <= 0.5:
            raise ConfigError("orbit_bias must lie in [-0.5, 0.5]")
        if not 0.0 < self.temperature <= 1.0:
            raise ConfigError("temperature must lie in (0, 1]")
        if self.dash_period != 0 and not 4 <= self.dash_period <= 12:
            raise ConfigError("dash_period must be 0 or in 4..12")


DASH_PERIODS = (0,) + tuple(range(4, 13))


def make_arena_population(n: int, seed: int) -> list[ArenaStyle]:
    """``n`` distinct styles on a scrambled Halton sequence over the style box."""
    if n < 2:
        raise ConfigError("an arena population needs at least 2 agents")
    pts = qmc.Halton(d=4, scramble=True, seed=seed).random(n)
    styles = []
    for u in pts:
        styles.append(
            ArenaStyle(
                aggressiveness=float(u[0]),
                orbit_bias=float(u[1] - 0.5),
                temperature=float(0.1 + 0.9 * u[2]),
                dash_period=DASH_PERIODS[min(int(u[3] * len(DASH_PERIODS)), len(DASH_PERIODS) - 1)],
            )
        )
    if len(set(styles)) != n:
        raise ConfigError("population styles collided; pick another seed")
    return styles


def _unit(v: np.ndarray) -> np.ndarray | None:
    n = float(np.hypot(v[0], v[1]))
    return v / n if n > 1e-12 else None


def arena_direction(style: ArenaStyle, obs: np.ndarray, t: int = 0) -> np.ndarray:
    me, opp = obs[0:2], obs[4:6]
    alpha = style.aggressiveness
    if style.dash_period and t % style.dash_period < 2:
        alpha = 1.0
    to_opp = _unit(opp - me)
    to_center = _unit(-me)
    center_term = to_center if to_center is not None else np.zeros(2)
    if to_opp is None:
        return center_term
    perp = np.array([-to_opp[1], to_opp[0]])
    return alpha * to_opp + (1.0 - alpha) * center_term + style.orbit_bias * perp


def arena_action_probs(style: ArenaStyle, obs: np.ndarray, t: int = 0) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape != (8,) or not np.all(np.isfinite(obs)):
        raise ObservationError("arena observation must be a finite 8-vector")
    d = arena_direction(style, obs, t)
    scores = np.zeros(ARENA_ACTIONS)
    u = _unit(d)
    if u is not None:
        scores[:NO_THRUST] = THRUST_DIRS @ u
    return softmax(scores / style.temperature)


def arena_act(style: ArenaStyle, obs: np.ndarray, rng: np.random.Generator, t: int = 0) -> int:
    p = arena_action_probs(style, obs, t)
    return int(rng.choice(ARENA_ACTIONS, p=p))


@dataclass
class ArenaPolicy:
    agent_id: int
    style: ArenaStyle
    role: str = "arena"

    def __call__(self, obs, rng, t=0):
        return arena_act(self.style, obs, rng, t)


@dataclass
class FixedDirectionPolicy:
    """Deterministic reference policies: ``push`` heads for the opponent, ``flee`` away from the centre."""

    agent_id: int
    mode: str  # "push" | "flee" | "still"
    role: str = "arena"

    def __call__(self, obs, rng, t=0):
        me, opp = obs[0:2], obs[4:6]
        if self.mode == "still":
            return NO_THRUST
        d = opp - me if self.mode == "push" else me
        if self.mode == "flee" and np.hypot(*d) < 1e-12:
            d = np.array([1.0, 0.0])
        return int(np.argmax(THRUST_DIRS @ d))


# --- signal ------------------------------------------------------------------


@dataclass(frozen=True)
class SpeakerSpec:
    mask: tuple[int, ...]  # forbidden symbols
    codebook: tuple[int, int, int]  # target -> preferred symbol
    temperature: float = 0.1
    dialect: int = 0

    def __post_init__(self):
        if any(s in self.mask for s in self.codebook):
            raise ConfigError("speaker codebook uses a masked symbol")

    @property
    def allowed(self) -> tuple[int, ...]:
        return tuple(s for s in range(N_SYMBOLS) if s not in self.mask)


@dataclass(frozen=True)
class ListenerSpec:
    decode: tuple[int, ...]  # symbol -> landmark guess, one entry per symbol
    obedience: float = 1.0
    temperature: float = 0.0  # 0: greedy; >0 softmax over progress scores
    dialect: int = 0

    def __post_init__(self):
        if len(self.decode) != N_SYMBOLS or any(not 0 <= g < N_TARGETS for g in self.decode):
            raise ConfigError("listener decode table must map all 7 symbols to a landmark")
        if not 0.5 <= self.obedience <= 1.0:
            raise ConfigError("obedience must lie in [0.5, 1]")


def all_masks() -> list[tuple[int, ...]]:
    """The 7 single-symbol and 21 two-symbol masks, in canonical order."""
    return [m for r in (1, 2) for m in itertools.combinations(range(N_SYMBOLS), r)]


def dialect_decode(dialect: int, symbol: int) -> int:
    """Base convention: dialect 0 reads symbol s as landmark s mod 3, dialect 1 as (s+1) mod 3."""
    return (symbol + dialect) % N_TARGETS


def _speaker_codebook(mask, dialect, rng) -> tuple[int, int, int]:
    allowed = [s for s in range(N_SYMBOLS) if s not in mask]
    book = []
    for target in range(N_TARGETS):
        native = [s for s in allowed if dialect_decode(dialect, s) == target and s not in book]
        pool = native or [s for s in allowed if s not in book]
        book.append(int(rng.choice(pool)))
    return tuple(book)


def speaker_partners(i: int, m: int) -> tuple[int, int]:
    """Listeners paired with speaker ``i`` on the ring: ``i`` and ``i - 1``."""
    return i % m, (i - 1) % m


def listener_partners(j: int, m: int) -> tuple[int, int]:
    """Speakers paired with listener ``j``: ``j`` and ``j + 1``."""
    return j % m, (j + 1) % m


def make_signal_population(seed: int, n_listeners: int = 28) -> tuple[list[SpeakerSpec], list[ListenerSpec]]:
    rng = np.random.default_rng(seed)
    masks = all_masks()
    n = len(masks)
    dialects = rng.permutation([0] * (n // 2) + [1] * (n - n // 2))
    speakers = [
        SpeakerSpec(mask, _speaker_codebook(mask, int(dialects[i]), rng), float(rng.uniform(0.0, 0.3)), int(dialects[i]))
        for i, mask in enumerate(masks)
    ]
    listeners = []
    for j in range(n_listeners):
        first, second = listener_partners(j, n)
        dialect = speakers[first].dialect
        decode = [dialect_decode(dialect, s) for s in range(N_SYMBOLS)]
        assigned = set()
        for spk in (speakers[first], speakers[second]):
            if spk.dialect != dialect:
                continue  # a partner with a foreign convention is misread, not learned
            for target, sym in enumerate(spk.codebook):
                if sym not in assigned:
                    decode[sym] = target
                    assigned.add(sym)
        listeners.append(ListenerSpec(tuple(decode), float(rng.uniform(0.5, 1.0)), 0.0, dialect))
    return speakers, listeners


def _check_one_hot(v: np.ndarray, allow_zero: bool) -> int:
    """Index of the hot entry, -1 for an all-zero vector when allowed."""
    nz = np.flatnonzero(v)
    if len(nz) == 0 and allow_zero:
        return -1
    if len(nz) != 1 or v[nz[0]] != 1.0:
        raise ObservationError(f"malformed one-hot vector {v!r}")
    return int(nz[0])


def speaker_probs(spec: SpeakerSpec, obs: np.ndarray) -> np.ndarray:
    target = _check_one_hot(np.asarray(obs, dtype=np.float64), allow_zero=False)
    allowed = spec.allowed
    p = np.zeros(N_SYMBOLS)
    p[list(allowed)] = spec.temperature / len(allowed)
    p[spec.codebook[target]] += 1.0 - spec.temperature
    return p


def speaker_act(spec: SpeakerSpec, obs: np.ndarray, rng: np.random.Generator) -> int:
    target = _check_one_hot(np.asarray(obs, dtype=np.float64), allow_zero=False)
    if rng.random() < 1.0 - spec.temperature:
        return spec.codebook[target]
    allowed = spec.allowed
    return int(allowed[rng.integers(len(allowed))])


def _greedy_move(pos: np.ndarray, goal: np.ndarray, step: float = 0.05) -> np.ndarray:
    cand = np.clip(pos + step * LISTENER_MOVES, 0.0, 1.0)
    return -np.hypot(*(cand - goal).T)  # progress score per move


def listener_act(spec: ListenerSpec, obs: np.ndarray, rng: np.random.Generator, step: float = 0.05) -> int:
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape != (15,):
        raise ObservationError("listener observation must be a 15-vector")
    symbol = _check_one_hot(obs[8:15], allow_zero=True)
    guess = int(rng.integers(N_TARGETS)) if symbol < 0 else spec.decode[symbol]
    if rng.random() >= spec.obedience:
        return int(rng.integers(len(LISTENER_MOVES)))
    pos = obs[0:2]
    goal = obs[2 + 2 * guess : 4 + 2 * guess]
    scores = _greedy_move(pos, goal, step)
    if spec.temperature > 0:
        return int(rng.choice(len(scores), p=softmax(scores / spec.temperature)))
    return int(np.argmax(scores))


@dataclass
class SpeakerPolicy:
    agent_id: int
    spec: SpeakerSpec
    role: str = "speaker"

    def __call__(self, obs, rng, t=0):
        return speaker_act(self.spec, obs, rng)


@dataclass
class ListenerPolicy:
    agent_id: int
    spec: ListenerSpec
    role: str = "listener"

    def __call__(self, obs, rng, t=0):
        return listener_act(self.spec, obs, rng)


# --- populations as id -> policy maps -----------------------------------------


@dataclass
class Population:
    env_kind: str
    policies: dict[int, object]

    @property
    def ids(self) -> list[int]:
        return sorted(self.policies)

    def role_of(self, agent_id: int) -> str:
        return self.policies[agent_id].role

    def ids_with_role(self, role: str) -> list[int]:
        return [i for i in self.ids if self.policies[i].role == role]


def arena_population(n: int, seed: int) -> Population:
    styles = make_arena_population(n, seed)
    return Population("arena", {i: ArenaPolicy(i, s) for i, s in enumerate(styles)})


def signal_population(seed: int) -> Population:
    """Speakers get ids 0..27, listeners 28..55."""
    speakers, listeners = make_signal_population(seed)
    pols: dict[int, object] = {i: SpeakerPolicy(i, s) for i, s in enumerate(speakers)}
    off = len(speakers)
    pols.update({off + j: ListenerPolicy(off + j, s) for j, s in enumerate(listeners)})
    return Population("signal", pols)


def population_manifest(pop: Population) -> dict:
    rows = []
    for i in pop.ids:
        pol = pop.policies[i]
        body = asdict(pol.style) if hasattr(pol, "style") else asdict(pol.spec)
        rows.append({"agent_id": i, "role": pol.role, "kind": type(pol).__name__, "params": body})
    return {"env_kind": pop.env_kind, "agents": rows}


def population_from_manifest(man: dict) -> Population:
    pols = {}
    for row in man["agents"]:
        p = row["params"]
        i = row["agent_id"]
        if row["kind"] == "ArenaPolicy":
            pols[i] = ArenaPolicy(i, ArenaStyle(**p))
        elif row["kind"] == "SpeakerPolicy":
            pols[i] = SpeakerPolicy(i, SpeakerSpec(tuple(p["mask"]), tuple(p["codebook"]), p["temperature"], p["dialect"]))
        elif row["kind"] == "ListenerPolicy":
            pols[i] = ListenerPolicy(i, ListenerSpec(tuple(p["decode"]), p["obedience"], p["temperature"], p["dialect"]))
        else:
            raise ConfigError(f"unknown policy kind {row['kind']!r}")
    return Population(man["env_kind"], pols)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def mean_style_tv(a: ArenaStyle, b: ArenaStyle, observations: Sequence[np.ndarray], times: Sequence[int]) -> float:
    return float(np.mean([total_variation(arena_action_probs(a, o, t), arena_action_probs(b, o, t))
                          for o, t in zip(observations, times)]))
