"""Two-participant Markov games: an arena duel and a speaker-listener world.

Arena: two discs on a friction plane inside a unit-radius ring. Each agent
picks one of eight compass thrusts or no thrust (action 8). Leaving the
ring loses; surviving the horizon is a draw.

Signal: a speaker sees the one-hot colour of a target landmark and emits one
of 7 symbols per step; a listener sees its position, the three landmarks and
the last symbol, and moves by a fixed step in a compass direction or stays.
The shared reward is the negative final listener-target distance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Protocol

import numpy as np

from .errors import ConfigError, EnvStateError, MembershipError

ARENA = "arena"
SIGNAL = "signal"

WIN_FIRST = "win_first"
WIN_SECOND = "win_second"
DRAW = "draw"
OUTCOMES = (WIN_FIRST, WIN_SECOND, DRAW)

ARENA_ACTIONS = 9
NO_THRUST = 8
# action k < 8 thrusts along angle k * 45 degrees, counter-clockwise from east
THRUST_DIRS = np.array([[np.cos(k * np.pi / 4), np.sin(k * np.pi / 4)] for k in range(8)])
THRUST_DIRS[np.abs(THRUST_DIRS) < 1e-15] = 0.0

# listener moves: east, north, west, south, stay
LISTENER_MOVES = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0], [0.0, 0.0]])
STAY = 4


@dataclass(frozen=True)
class MarkovGameSpec:
    env_kind: str
    horizon: int
    # arena constants
    disc_radius: float = 1.0
    friction: float = 0.85
    thrust: float = 0.05
    agent_radius: float = 0.07
    restitution: float = 1.0
    start_offset: float = 0.5
    jitter: float = 0.1
    # signal constants
    n_landmarks: int = 3
    message_arity: int = 7
    listener_arity: int = 5
    move_step: float = 0.05
    min_landmark_separation: float = 0.2

    def __post_init__(self):
        if self.env_kind not in (ARENA, SIGNAL):
            raise ConfigError(f"unknown env_kind {self.env_kind!r}")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")

    @property
    def roles(self) -> tuple[str, str]:
        return ("arena", "arena") if self.env_kind == ARENA else ("speaker", "listener")

    @property
    def obs_dims(self) -> tuple[int, int]:
        if self.env_kind == ARENA:
            return (8, 8)
        return (self.n_landmarks, 2 + 2 * self.n_landmarks + self.message_arity)

    @property
    def action_arities(self) -> tuple[int, int]:
        if self.env_kind == ARENA:
            return (ARENA_ACTIONS, ARENA_ACTIONS)
        return (self.message_arity, self.listener_arity)


def arena_spec(horizon: int = 50, **kw) -> MarkovGameSpec:
    return MarkovGameSpec(ARENA, horizon, **kw)


def signal_spec(horizon: int = 25, **kw) -> MarkovGameSpec:
    return MarkovGameSpec(SIGNAL, horizon, **kw)


def spec_from_dict(d: dict) -> MarkovGameSpec:
    return MarkovGameSpec(**d)


def spec_to_dict(spec: MarkovGameSpec) -> dict:
    return dict(spec.__dict__)


# --- arena -----------------------------------------------------------------


@dataclass
class ArenaState:
    spec: MarkovGameSpec
    pos: np.ndarray  # (2, 2)
    vel: np.ndarray  # (2, 2)
    t: int = 0
    done: bool = False
    outcome: str | None = None


def arena_observations(state: ArenaState) -> tuple[np.ndarray, np.ndarray]:
    p, v = state.pos, state.vel
    o0 = np.concatenate([p[0], v[0], p[1], v[1]])
    o1 = np.concatenate([p[1], v[1], p[0], v[0]])
    return o0, o1


def arena_reset(spec: MarkovGameSpec, seed, jitter: float | None = None):
    """Agents start at (-offset, 0) and (+offset, 0) plus uniform jitter, at rest."""
    if spec.env_kind != ARENA:
        raise ConfigError("arena_reset needs an arena spec")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    j = spec.jitter if jitter is None else jitter
    pos = np.array([[-spec.start_offset, 0.0], [spec.start_offset, 0.0]])
    noise = rng.uniform(-1.0, 1.0, size=(2, 2))
    if j > 0:
        pos = pos + j * noise / np.sqrt(2.0)  # |jitter| <= j
    state = ArenaState(spec, pos, np.zeros((2, 2)))
    return state, arena_observations(state)


def _contact_time(p0: np.ndarray, dp: np.ndarray, min_sep: float) -> float | None:
    """Earliest tau in [0, 1] with |p0 + tau * dp| = min_sep, for approaching agents."""
    a = float(dp @ dp)
    b = 2.0 * float(p0 @ dp)
    c = float(p0 @ p0) - min_sep * min_sep
    if c <= 0.0:
        return 0.0
    if a == 0.0 or b >= 0.0:
        return None
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return None
    tau = (-b - np.sqrt(disc)) / (2.0 * a)
    return tau if tau <= 1.0 else None


def _collide(spec: MarkovGameSpec, start: np.ndarray, pos: np.ndarray, vel: np.ndarray) -> None:
    """Resolve a contact during the step from ``start`` to ``pos`` (swept, so fast agents cannot pass through)."""
    min_sep = 2.0 * spec.agent_radius
    tau = _contact_time(start[1] - start[0], (pos[1] - start[1]) - (pos[0] - start[0]), min_sep)
    if tau is None:
        return
    at = start + tau * (pos - start)
    delta = at[1] - at[0]
    dist = float(np.hypot(*delta))
    n = delta / dist if dist > 0 else np.array([1.0, 0.0])
    v0n, v1n = vel[0] @ n, vel[1] @ n
    if v0n > v1n:
        # equal masses; restitution 1 exchanges the normal components, 0 merges them
        e = spec.restitution
        mean = 0.5 * (v0n + v1n)
        half = 0.5 * (v0n - v1n)
        vel[0] += (mean - e * half - v0n) * n
        vel[1] += (mean + e * half - v1n) * n
    pos[:] = at + (1.0 - tau) * vel
    delta = pos[1] - pos[0]
    dist = float(np.hypot(*delta))
    if dist < min_sep:
        n = delta / dist if dist > 0 else n
        overlap = min_sep - dist
        pos[0] -= 0.5 * overlap * n
        pos[1] += 0.5 * overlap * n


def arena_step(state: ArenaState, actions):
    """Advance one tick. Returns ``(state', observations, done, outcome)``."""
    if state.done:
        raise EnvStateError("episode already finished")
    spec = state.spec
    a0, a1 = int(actions[0]), int(actions[1])
    for a in (a0, a1):
        if not 0 <= a < ARENA_ACTIONS:
            raise ConfigError(f"arena action {a} out of range")
    thrust = np.zeros((2, 2))
    for k, a in enumerate((a0, a1)):
        if a != NO_THRUST:
            thrust[k] = spec.thrust * THRUST_DIRS[a]
    vel = spec.friction * state.vel + thrust
    pos = state.pos + vel
    _collide(spec, state.pos, pos, vel)
    t = state.t + 1
    out = np.hypot(pos[:, 0], pos[:, 1]) > spec.disc_radius
    outcome = None
    if out[0] and out[1]:
        outcome = DRAW
    elif out[0]:
        outcome = WIN_SECOND
    elif out[1]:
        outcome = WIN_FIRST
    elif t >= spec.horizon:
        outcome = DRAW
    new = ArenaState(spec, pos, vel, t, outcome is not None, outcome)
    return new, arena_observations(new), new.done, outcome


def arena_rewards(outcome: str | None) -> tuple[float, float]:
    if outcome == WIN_FIRST:
        return 1.0, -1.0
    if outcome == WIN_SECOND:
        return -1.0, 1.0
    return 0.0, 0.0


# --- signal ----------------------------------------------------------------


@dataclass
class SignalState:
    spec: MarkovGameSpec
    landmarks: np.ndarray  # (n_landmarks, 2)
    target: int
    listener_pos: np.ndarray
    message: int = -1  # -1 before the first symbol arrives
    t: int = 0
    done: bool = False


def signal_observations(state: SignalState) -> tuple[np.ndarray, np.ndarray]:
    spec = state.spec
    speaker = np.zeros(spec.n_landmarks)
    speaker[state.target] = 1.0
    msg = np.zeros(spec.message_arity)
    if state.message >= 0:
        msg[state.message] = 1.0
    listener = np.concatenate([state.listener_pos, state.landmarks.ravel(), msg])
    return speaker, listener


def signal_reset(spec: MarkovGameSpec, seed):
    if spec.env_kind != SIGNAL:
        raise ConfigError("signal_reset needs a signal spec")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    while True:
        lm = rng.uniform(0.0, 1.0, size=(spec.n_landmarks, 2))
        d = np.hypot(*(lm[:, None, :] - lm[None, :, :]).transpose(2, 0, 1))
        if np.all(d[np.triu_indices(spec.n_landmarks, 1)] >= spec.min_landmark_separation):
            break
    target = int(rng.integers(spec.n_landmarks))
    state = SignalState(spec, lm, target, np.array([0.5, 0.5]))
    return state, signal_observations(state)


def signal_reward(state: SignalState) -> float:
    return -float(np.hypot(*(state.listener_pos - state.landmarks[state.target])))


def signal_step(state: SignalState, speaker_action: int, listener_action: int):
    """Returns ``(state', observations, done, reward)``; reward is 0 before the horizon."""
    if state.done:
        raise EnvStateError("episode already finished")
    spec = state.spec
    if not 0 <= speaker_action < spec.message_arity:
        raise ConfigError(f"speaker symbol {speaker_action} out of range")
    if not 0 <= listener_action < spec.listener_arity:
        raise ConfigError(f"listener move {listener_action} out of range")
    pos = np.clip(state.listener_pos + spec.move_step * LISTENER_MOVES[listener_action], 0.0, 1.0)
    t = state.t + 1
    new = replace(state, listener_pos=pos, message=int(speaker_action), t=t, done=t >= spec.horizon)
    reward = signal_reward(new) if new.done else 0.0
    return new, signal_observations(new), new.done, reward


# --- episodes ----------------------------------------------------------------


class Policy(Protocol):
    role: str
    agent_id: int

    def __call__(self, obs: np.ndarray, rng: np.random.Generator, t: int) -> int: ...


@dataclass
class Episode:
    env_kind: str
    participants: tuple[int, int]
    seed: int
    observations: tuple[np.ndarray, np.ndarray]  # each (T, obs_dim)
    actions: tuple[np.ndarray, np.ndarray]  # each (T,) int
    rewards: tuple[np.ndarray, np.ndarray]  # each (T,)
    outcome: str | float  # arena outcome label or signal terminal reward
    episode_id: str = ""

    def __post_init__(self):
        self.participants = tuple(int(p) for p in self.participants)
        if not self.episode_id:
            self.episode_id = f"{self.participants[0]}-{self.participants[1]}@{self.seed}"

    def __len__(self):
        return len(self.actions[0])

    def seat(self, agent_id: int) -> int:
        if agent_id not in self.participants:
            raise MembershipError(f"agent {agent_id} did not take part in episode {self.episode_id}")
        return self.participants.index(agent_id)

    def total_reward(self, agent_id: int) -> float:
        return float(self.rewards[self.seat(agent_id)].sum())


@dataclass(frozen=True)
class AgentEpisode:
    agent_id: int
    episode_id: str
    observations: np.ndarray  # (T, obs_dim)
    actions: np.ndarray  # (T,)

    def __len__(self):
        return len(self.actions)

    @property
    def pairs(self):
        return list(zip(self.observations, self.actions.tolist()))


def agent_view(episode: Episode, agent_id: int) -> AgentEpisode:
    k = episode.seat(agent_id)
    return AgentEpisode(agent_id, episode.episode_id, episode.observations[k], episode.actions[k])


def rollout(spec: MarkovGameSpec, policy_a, policy_b, seed: int, episode_id: str = "",
            jitter: float | None = None) -> Episode:
    """Play one episode. Randomness for the environment and both policies derives from ``seed``."""
    roles = spec.roles
    for pol, role in zip((policy_a, policy_b), roles):
        if getattr(pol, "role", None) != role:
            raise ConfigError(f"{spec.env_kind} needs a {role} policy, got {getattr(pol, 'role', None)!r}")
    env_ss, a_ss, b_ss = np.random.SeedSequence(seed).spawn(3)
    rng_a, rng_b = np.random.default_rng(a_ss), np.random.default_rng(b_ss)
    env_rng = np.random.default_rng(env_ss)
    if spec.env_kind == ARENA:
        state, obs = arena_reset(spec, env_rng, jitter)
    else:
        state, obs = signal_reset(spec, env_rng)
    obs_log = ([], [])
    act_log = ([], [])
    rew_log = ([], [])
    done = False
    result = None
    while not done:
        t = state.t
        a = int(policy_a(obs[0], rng_a, t))
        b = int(policy_b(obs[1], rng_b, t))
        obs_log[0].append(obs[0])
        obs_log[1].append(obs[1])
        act_log[0].append(a)
        act_log[1].append(b)
        if spec.env_kind == ARENA:
            state, obs, done, result = arena_step(state, (a, b))
            r = arena_rewards(result) if done else (0.0, 0.0)
        else:
            state, obs, done, rew = signal_step(state, a, b)
            r = (rew, rew)
            result = rew
        rew_log[0].append(r[0])
        rew_log[1].append(r[1])
    return Episode(
        spec.env_kind,
        (policy_a.agent_id, policy_b.agent_id),
        int(seed),
        tuple(np.array(o, dtype=np.float64) for o in obs_log),
        tuple(np.array(x, dtype=np.int64) for x in act_log),
        tuple(np.array(x, dtype=np.float64) for x in rew_log),
        result,
        episode_id,
    )


# --- episode stores ----------------------------------------------------------

STORE_VERSION = 1


def episode_to_record(ep: Episode) -> dict:
    return {
        "version": STORE_VERSION,
        "episode_id": ep.episode_id,
        "env_kind": ep.env_kind,
        "participants": list(ep.participants),
        "seed": ep.seed,
        "length": len(ep),
        "obs_dims": [int(o.shape[1]) for o in ep.observations],
        "observations": [o.ravel().tolist() for o in ep.observations],
        "actions": [a.tolist() for a in ep.actions],
        "rewards": [r.tolist() for r in ep.rewards],
        "outcome": ep.outcome,
    }


def episode_from_record(rec: dict) -> Episode:
    T = rec["length"]
    obs = tuple(np.array(o, dtype=np.float64).reshape(T, d) for o, d in zip(rec["observations"], rec["obs_dims"]))
    return Episode(
        rec["env_kind"],
        tuple(rec["participants"]),
        rec["seed"],
        obs,
        tuple(np.array(a, dtype=np.int64) for a in rec["actions"]),
        tuple(np.array(r, dtype=np.float64) for r in rec["rewards"]),
        rec["outcome"],
        rec["episode_id"],
    )


def write_episodes_jsonl(path, episodes: Iterable[Episode]) -> None:
    with open(path, "w") as fh:
        for ep in episodes:
            fh.write(json.dumps(episode_to_record(ep)) + "\n")


def read_episodes_jsonl(path) -> list[Episode]:
    with open(path) as fh:
        return [episode_from_record(json.loads(line)) for line in fh if line.strip()]


def write_episodes_npz(path, episodes: list[Episode]) -> None:
    """Binary store: same fields as the text records, concatenated per seat with offsets."""
    if len({(e.env_kind, *(o.shape[1] for o in e.observations)) for e in episodes}) > 1:
        raise ConfigError("a binary store holds episodes of one environment kind")
    lengths = np.array([len(e) for e in episodes], dtype=np.int64)
    meta = [
        {k: v for k, v in episode_to_record(e).items() if k not in ("observations", "actions", "rewards")}
        for e in episodes
    ]
    arrays = {"lengths": lengths, "meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for k in (0, 1):
        if episodes:
            arrays[f"obs{k}"] = np.concatenate([e.observations[k] for e in episodes])
            arrays[f"act{k}"] = np.concatenate([e.actions[k] for e in episodes])
            arrays[f"rew{k}"] = np.concatenate([e.rewards[k] for e in episodes])
    np.savez(path, **arrays)


def read_episodes_npz(path) -> list[Episode]:
    with np.load(path) as z:
        meta = json.loads(z["meta"].tobytes().decode())
        if not meta:
            return []
        bounds = np.concatenate([[0], np.cumsum(z["lengths"])])
        cols = {k: z[k] for k in ("obs0", "obs1", "act0", "act1", "rew0", "rew1")}
    out = []
    for i, m in enumerate(meta):
        s, e = bounds[i], bounds[i + 1]
        out.append(
            Episode(
                m["env_kind"],
                tuple(m["participants"]),
                m["seed"],
                (cols["obs0"][s:e].copy(), cols["obs1"][s:e].copy()),
                (cols["act0"][s:e].copy(), cols["act1"][s:e].copy()),
                (cols["rew0"][s:e].copy(), cols["rew1"][s:e].copy()),
                m["outcome"],
                m["episode_id"],
            )
        )
    return out
