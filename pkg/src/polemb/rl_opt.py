"""Embedding-conditioned policy optimisation with REINFORCE.

A new agent's policy sees its observation concatenated with an embedding of
the partner it is playing. Embeddings come from a frozen encoder, either
precomputed from partner-vs-partner episodes (offline) or from the learner's
previous episode with that partner (online). The unconditioned baseline has
the same network with the embedding slot fed zeros, so parameter counts match.
"""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .embed import VARIANT_NAMES, Encoder, TrainConfig, embed_episode, embed_episodes, train_embedding
from .env import ARENA, DRAW, WIN_FIRST, WIN_SECOND, MarkovGameSpec, agent_view, rollout
from .errors import ConfigError, NumericError
from .graph import InteractionGraph, split_nodes
from .nn_core import AdamState, DenseNet, adam_step, log_softmax, mlp_backward, mlp_forward, mlp_init

MODES = ("none", "online", "offline", "zero", "rand")
LEARNER_ID = -1


# --- policy ------------------------------------------------------------------


@dataclass
class ConditionedRLPolicy:
    net: DenseNet
    obs_dim: int
    d: int
    mode: str = "offline"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown embedding mode {self.mode!r}")

    @classmethod
    def create(cls, obs_dim: int, n_actions: int, d: int, mode: str, hidden=(64, 64), seed: int = 0):
        return cls(mlp_init([obs_dim + d, *hidden, n_actions], seed), obs_dim, d, mode)

    @property
    def n_params(self) -> int:
        return self.net.n_params

    def inputs(self, obs: np.ndarray, z: np.ndarray | None) -> np.ndarray:
        obs = np.atleast_2d(obs)
        slot = np.zeros((obs.shape[0], self.d))
        if self.mode != "none" and z is not None:
            slot[:] = z
        return np.concatenate([obs, slot], axis=1)

    def probs(self, obs: np.ndarray, z: np.ndarray | None) -> np.ndarray:
        logits, _ = mlp_forward(self.net, self.inputs(obs, z))
        return np.exp(log_softmax(logits))

    def act(self, obs: np.ndarray, z: np.ndarray | None, rng: np.random.Generator) -> int:
        p = self.probs(obs, z)[0]
        return int(rng.choice(len(p), p=p / p.sum()))


@dataclass
class BoundPolicy:
    """A conditioned policy with a fixed embedding, usable by ``rollout``."""

    policy: ConditionedRLPolicy
    z: np.ndarray | None
    role: str
    agent_id: int = LEARNER_ID

    def __call__(self, obs, rng, t=0):
        return self.policy.act(obs, self.z, rng)


@dataclass
class Trajectory:
    observations: np.ndarray  # (T, obs_dim)
    actions: np.ndarray  # (T,)
    z: np.ndarray | None
    ret: float


def reinforce_gradient(policy: ConditionedRLPolicy, batch: Sequence[Trajectory]) -> tuple[np.ndarray, float]:
    """Gradient of the negated surrogate -sum_t (R - mean R) log pi(a_t | o_t, z), and the surrogate value."""
    if not batch:
        raise ConfigError("empty REINFORCE batch")
    rets = np.array([tr.ret for tr in batch], dtype=np.float64)
    if not np.all(np.isfinite(rets)):
        raise NumericError("non-finite returns in REINFORCE batch")
    adv = rets - rets.mean()
    x = np.concatenate([policy.inputs(tr.observations, tr.z) for tr in batch])
    acts = np.concatenate([tr.actions for tr in batch])
    w = np.repeat(adv, [len(tr.actions) for tr in batch])
    logits, cache = mlp_forward(policy.net, x)
    lp = log_softmax(logits)
    idx = np.arange(len(acts))
    surrogate = float((w * lp[idx, acts]).sum())
    g = np.exp(lp)
    g[idx, acts] -= 1.0
    g *= w[:, None]  # d(-surrogate)/dlogits
    return mlp_backward(policy.net, cache, g).params, surrogate


def reinforce_update(policy: ConditionedRLPolicy, batch: Sequence[Trajectory], opt: AdamState):
    grad, _ = reinforce_gradient(policy, batch)
    if not np.any(grad):
        return policy, opt
    adam_step(policy.net, grad, opt)
    return policy, opt


# --- embedding providers --------------------------------------------------------


class EmbeddingProvider:
    """Per-partner embeddings for a given mode.

    ``offline`` and ``rand`` read a fixed table; ``online`` keeps the last
    completed episode per partner and starts from zeros; ``none``/``zero``
    return zeros.
    """

    def __init__(self, mode: str, d: int, encoder: Encoder | None = None,
                 table: Mapping[int, np.ndarray] | None = None, seed: int = 0):
        if mode not in MODES:
            raise ConfigError(f"unknown embedding mode {mode!r}")
        if mode == "online" and encoder is None:
            raise ConfigError("online embeddings need an encoder")
        if mode in ("offline", "rand") and not table:
            raise ConfigError(f"{mode} embeddings need a precomputed table")
        if mode == "rand" and len(table) < 2:
            raise ConfigError("rand embeddings need at least two known partners")
        self.mode, self.d, self.encoder = mode, d, encoder
        self.table = {k: np.asarray(v, dtype=np.float64) for k, v in (table or {}).items()}
        self.rng = np.random.default_rng(seed)
        self.current: dict[int, np.ndarray] = {}
        self.history: dict[int, str] = {}  # partner -> id of the episode the embedding came from

    def embedding(self, partner: int) -> np.ndarray:
        if self.mode in ("none", "zero"):
            return np.zeros(self.d)
        if self.mode == "offline":
            return self.table[partner]
        if self.mode == "rand":
            others = [a for a in sorted(self.table) if a != partner]
            return self.table[others[int(self.rng.integers(len(others)))]]
        return self.current.get(partner, np.zeros(self.d))

    def observe(self, partner: int, episode) -> None:
        """Record a completed episode; only online mode uses it."""
        if self.mode == "online":
            self.current[partner] = embed_episode(self.encoder, agent_view(episode, partner))
            self.history[partner] = episode.episode_id

    def fresh(self) -> "EmbeddingProvider":
        """Same mode and table with an empty online history."""
        p = copy.copy(self)
        p.current, p.history = {}, {}
        p.rng = np.random.default_rng(self.rng.integers(2**32))
        return p


def offline_table(encoder: Encoder, graph: InteractionGraph, agents: Sequence[int]) -> dict[int, np.ndarray]:
    """Mean embedding of each agent over all its episodes in the (pre-trained agents only) graph."""
    out = {}
    for a in agents:
        views = [agent_view(ep, a) for e in graph.edge_list() if a in e for ep in graph.edges[e]]
        if not views:
            raise ConfigError(f"agent {a} has no episodes for an offline embedding")
        out[a] = embed_episodes(encoder, views).mean(axis=0)
    return out


# --- match statistics ---------------------------------------------------------


def wilson_half_width(p: float, n: int, z: float = 1.959963984540054) -> float:
    if n <= 0:
        return float("nan")
    return z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / (1 + z * z / n)


@dataclass
class MatchStats:
    wins: int = 0
    losses: int = 0
    draws: int = 0
    reward_sum: float = 0.0

    @property
    def n(self) -> int:
        return self.wins + self.losses + self.draws

    @property
    def win_rate(self) -> float:
        return self.wins / self.n if self.n else float("nan")

    @property
    def loss_rate(self) -> float:
        return self.losses / self.n if self.n else float("nan")

    @property
    def draw_rate(self) -> float:
        return 1.0 - (self.win_rate + self.loss_rate) if self.n else float("nan")

    @property
    def mean_reward(self) -> float:
        return self.reward_sum / self.n if self.n else float("nan")

    def half_widths(self) -> dict[str, float]:
        return {k: wilson_half_width(getattr(self, f"{k}_rate"), self.n) for k in ("win", "loss", "draw")}

    def add(self, reward: float, outcome=None) -> None:
        self.reward_sum += reward
        if outcome is None or not isinstance(outcome, str):
            outcome = "win" if reward > 0 else "loss" if reward < 0 else "draw"
        if outcome == "win":
            self.wins += 1
        elif outcome == "loss":
            self.losses += 1
        else:
            self.draws += 1

    def merge(self, other: "MatchStats") -> "MatchStats":
        return MatchStats(self.wins + other.wins, self.losses + other.losses, self.draws + other.draws,
                          self.reward_sum + other.reward_sum)

    def row(self) -> dict:
        hw = self.half_widths()
        return {"n": self.n, "win_rate": self.win_rate, "loss_rate": self.loss_rate, "draw_rate": self.draw_rate,
                "mean_reward": self.mean_reward, "win_hw": hw["win"]}


def _seat_result(ep, seat: int) -> tuple[float, str]:
    r = float(ep.rewards[seat].sum())
    if ep.env_kind == ARENA:
        mine = WIN_FIRST if seat == 0 else WIN_SECOND
        if ep.outcome == DRAW:
            return r, "draw"
        return r, "win" if ep.outcome == mine else "loss"
    return r, "draw"


def _game_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint32)[0])


def head_to_head(spec: MarkovGameSpec, policy_a, policy_b, n_games: int, seed: int,
                 provider_a: EmbeddingProvider | None = None, provider_b: EmbeddingProvider | None = None,
                 jitter: float | None = None) -> tuple[MatchStats, MatchStats]:
    """``n_games`` seeded games, A in the first seat. Conditioned sides get embeddings from their providers.

    Online histories are private to this pairing; returns stats from each side's perspective.
    """
    if n_games < 1:
        raise ConfigError("n_games must be >= 1")
    id_a, id_b = getattr(policy_a, "agent_id", LEARNER_ID), getattr(policy_b, "agent_id", LEARNER_ID)
    if id_a == id_b:
        id_a, id_b = -1, -2
    prov_a = provider_a.fresh() if provider_a else None
    prov_b = provider_b.fresh() if provider_b else None
    roles = spec.roles

    def bind(pol, prov, opp, role, aid):
        if isinstance(pol, ConditionedRLPolicy):
            z = prov.embedding(opp) if prov else None
            return BoundPolicy(pol, z, role, aid)
        return _Renamed(pol, aid) if getattr(pol, "agent_id", None) != aid else pol

    sa, sb = MatchStats(), MatchStats()
    for g in range(n_games):
        pa = bind(policy_a, prov_a, id_b, roles[0], id_a)
        pb = bind(policy_b, prov_b, id_a, roles[1], id_b)
        ep = rollout(spec, pa, pb, _game_seed(seed, g), f"h2h#{g}", jitter)
        sa.add(*_seat_result(ep, 0))
        sb.add(*_seat_result(ep, 1))
        if prov_a:
            prov_a.observe(id_b, ep)
        if prov_b:
            prov_b.observe(id_a, ep)
    return sa, sb


@dataclass
class _Renamed:
    inner: object
    agent_id: int

    @property
    def role(self):
        return self.inner.role

    def __call__(self, obs, rng, t=0):
        return self.inner(obs, rng, t)


# --- training -------------------------------------------------------------------


@dataclass
class RLConfig:
    iterations: int = 300
    batch_episodes: int = 8
    learning_rate: float = 1e-3
    hidden: tuple[int, ...] = (64, 64)
    eval_every: int = 50
    eval_games: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1 or self.batch_episodes < 1 or self.eval_games < 1:
            raise ConfigError("iterations, batch_episodes and eval_games must be positive")
        self.hidden = tuple(self.hidden)


@dataclass
class TrainLog:
    curves: list[dict] = field(default_factory=list)
    schedule: list[tuple[int, int]] = field(default_factory=list)  # (iteration, partner)
    env_seeds: list[int] = field(default_factory=list)
    online_sources: list[tuple[int, str | None, str]] = field(default_factory=list)  # (partner, source id, episode id)
    snapshots: dict[int, DenseNet] = field(default_factory=dict)  # iteration -> parameters at that checkpoint


def evaluate(spec: MarkovGameSpec, policy: ConditionedRLPolicy, partners: Mapping[int, object],
             provider: EmbeddingProvider, n_games: int, seed: int) -> dict[int, MatchStats]:
    """Frozen-policy games against each partner, the learner in the first seat."""
    return {j: head_to_head(spec, policy, partners[j], n_games, _game_seed(seed, j), provider)[0]
            for j in sorted(partners)}


def _pooled(stats: Mapping[int, MatchStats]) -> MatchStats:
    out = MatchStats()
    for s in stats.values():
        out = out.merge(s)
    return out


def train_conditioned_agent(spec: MarkovGameSpec, train_partners: Mapping[int, object],
                            eval_partners: Mapping[int, object], provider: EmbeddingProvider, cfg: RLConfig,
                            valid_partners: Mapping[int, object] | None = None):
    """Round-robin REINFORCE over training partners with periodic frozen evaluation.

    With ``valid_partners`` the returned policy is the checkpoint with the best
    validation mean reward; otherwise it is the final one.
    """
    overlap = set(train_partners) & set(eval_partners)
    if overlap:
        raise ConfigError(f"train and eval partners overlap: {sorted(overlap)}")
    if not train_partners:
        raise ConfigError("no training partners")
    role = spec.roles[0]
    obs_dim, n_actions = spec.obs_dims[0], spec.action_arities[0]
    policy = ConditionedRLPolicy.create(obs_dim, n_actions, provider.d, provider.mode, cfg.hidden,
                                        _game_seed(cfg.seed, 1))
    opt = AdamState.for_net(policy.net, cfg.learning_rate)
    order = sorted(train_partners)
    log = TrainLog()
    best = (-math.inf, policy.net.copy())

    def checkpoint(it):
        row = {"iteration": it}
        tr = _pooled(evaluate(spec, policy, train_partners, provider, cfg.eval_games, _game_seed(cfg.seed, 2, it)))
        te = _pooled(evaluate(spec, policy, eval_partners, provider, cfg.eval_games, _game_seed(cfg.seed, 3, it)))
        row.update({f"train_{k}": v for k, v in tr.row().items()})
        row.update({f"test_{k}": v for k, v in te.row().items()})
        nonlocal best
        if valid_partners:
            va = _pooled(evaluate(spec, policy, valid_partners, provider, cfg.eval_games, _game_seed(cfg.seed, 4, it)))
            row.update({f"valid_{k}": v for k, v in va.row().items()})
            if va.mean_reward > best[0]:
                best = (va.mean_reward, policy.net.copy())
        log.curves.append(row)
        log.snapshots[it] = policy.net.copy()

    for it in range(cfg.iterations):
        j = order[it % len(order)]
        partner = train_partners[j]
        log.schedule.append((it, j))
        z = provider.embedding(j)
        source = provider.history.get(j)
        batch, last = [], None
        for k in range(cfg.batch_episodes):
            s = _game_seed(cfg.seed, 0, it, k)
            log.env_seeds.append(s)
            ep = rollout(spec, BoundPolicy(policy, z, role), _Renamed(partner, j) if partner.agent_id != j else partner,
                         s, f"rl{it}#{k}")
            v = agent_view(ep, LEARNER_ID)
            batch.append(Trajectory(v.observations, v.actions, z, ep.total_reward(LEARNER_ID)))
            last = ep
        reinforce_update(policy, batch, opt)
        provider.observe(j, last)  # refresh once per iteration from the last completed episode
        log.online_sources.append((j, source, last.episode_id))
        if cfg.eval_every and (it + 1) % cfg.eval_every == 0 and it + 1 < cfg.iterations:
            checkpoint(it + 1)
    checkpoint(cfg.iterations)
    if valid_partners:
        policy.net = best[1]
    return policy, log


def write_curves(path, curves: Sequence[dict]) -> None:
    if not curves:
        return
    keys = list(curves[0])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for row in curves:
            w.writerow({k: (f"{row[k]:.10g}" if isinstance(row[k], float) else row[k]) for k in keys})


# --- experiment drivers ------------------------------------------------------


@dataclass
class ArenaRLResult:
    test_win_rate: dict[str, float]  # variant -> pooled win rate against test opponents
    curves: dict[str, list[dict]]


def arena_rl_experiment(graph: InteractionGraph, train_ids: Sequence[int], test_ids: Sequence[int],
                        population, encoder: Encoder, cfg: RLConfig) -> ArenaRLResult:
    """Baseline vs offline-embedding learner; the conditioned learner is also evaluated with zero/rand ablations."""
    spec = graph.spec
    table = offline_table(encoder, graph, list(train_ids) + list(test_ids))
    train_p = {j: population.policies[j] for j in train_ids}
    test_p = {j: population.policies[j] for j in test_ids}
    d = encoder.d
    res = ArenaRLResult({}, {})
    base, blog = train_conditioned_agent(spec, train_p, test_p, EmbeddingProvider("none", d), cfg)
    emb, elog = train_conditioned_agent(spec, train_p, test_p, EmbeddingProvider("offline", d, table=table), cfg)
    res.curves = {"baseline": blog.curves, "Emb-Hyb": elog.curves}
    seed = _game_seed(cfg.seed, 9)
    for name, pol, prov in (
        ("baseline", base, EmbeddingProvider("none", d)),
        ("Emb-Hyb", emb, EmbeddingProvider("offline", d, table=table)),
        ("Emb-zero", emb, EmbeddingProvider("zero", d)),
        ("Emb-rand", emb, EmbeddingProvider("rand", d, table=table, seed=cfg.seed)),
    ):
        res.test_win_rate[name] = _pooled(evaluate(spec, pol, test_p, prov, cfg.eval_games, seed)).win_rate
    return res


def best_listeners(graph: InteractionGraph, k: int) -> list[int]:
    """The ``k`` listeners with the highest mean episode reward in the interaction graph (ties by id)."""
    scores = {}
    for a in graph.agents_with_role("listener"):
        rs = [ep.total_reward(a) for e in graph.edge_list() if a in e for ep in graph.edges[e]]
        scores[a] = float(np.mean(rs))
    return sorted(scores, key=lambda a: (-scores[a], a))[:k]


@dataclass
class SpeakerResult:
    train_reward: dict[str, float]  # row name -> mean over seeds
    test_reward: dict[str, float]
    per_seed_test: dict[str, list[float]]
    groups: dict[str, list[int]]


def speaker_groups(graph: InteractionGraph, counts=(6, 4, 4), seed: int = 0) -> dict[str, list[int]]:
    """The best ``sum(counts)`` listeners split uniformly into train/valid/test groups."""
    chosen = best_listeners(graph, sum(counts))
    perm = [chosen[k] for k in np.random.default_rng(seed).permutation(len(chosen))]
    a, b, _ = counts
    return {"train": sorted(perm[:a]), "valid": sorted(perm[a : a + b]), "test": sorted(perm[a + b :])}


def speaker_encoder_split(graph: InteractionGraph, groups: dict[str, list[int]], seed: int = 0):
    """Encoder split that keeps the RL valid/test listeners unseen during embedding training."""
    held = set(groups["valid"]) | set(groups["test"])
    others = [x for x in graph.agents_with_role("listener") if x not in held]
    return split_nodes(graph, {"train": others, "valid": groups["valid"], "test": groups["test"]}, seed,
                       role="listener")


def train_speaker(graph: InteractionGraph, parts: dict[str, dict], provider: EmbeddingProvider, cfg: RLConfig,
                  episodes_per_listener: int = 100) -> tuple[float, float]:
    """One seed: train with validation model selection, then score on train and test listeners."""
    pol, _ = train_conditioned_agent(graph.spec, parts["train"], parts["test"], provider, cfg, parts["valid"])
    eseed = _game_seed(cfg.seed, 77)
    tr = _pooled(evaluate(graph.spec, pol, parts["train"], provider, episodes_per_listener, eseed)).mean_reward
    te = _pooled(evaluate(graph.spec, pol, parts["test"], provider, episodes_per_listener, eseed)).mean_reward
    return tr, te


def conditioned_speaker_training(graph: InteractionGraph, population, embed_cfg: TrainConfig, cfg: RLConfig,
                                 n_seeds: int = 5, episodes_per_listener: int = 100, counts=(6, 4, 4),
                                 split_seed: int = 0, variants=("hyb",), lam: float | None = None,
                                 mode: str = "offline") -> SpeakerResult:
    """Train a new speaker conditioned on listener embeddings and compare with the zero-padded baseline.

    One encoder per variant is trained on listeners outside the RL valid/test
    groups. With ``mode="offline"`` listener embeddings are means over each
    listener's graph episodes; with ``"online"`` the speaker embeds its own last
    episode with that listener. Each seed keeps the checkpoint with the best
    validation reward.
    """
    if mode not in ("offline", "online"):
        raise ConfigError(f"speaker conditioning mode must be offline or online, got {mode!r}")
    groups = speaker_groups(graph, counts, split_seed)
    split = speaker_encoder_split(graph, groups, split_seed)
    parts = {g: {j: population.policies[j] for j in ids} for g, ids in groups.items()}
    chosen = sorted(a for ids in groups.values() for a in ids)
    rows: list[tuple[str, str, Encoder | None]] = [("baseline", "none", None)]
    for v in variants:
        over = {"variant": v} if lam is None else {"variant": v, "lam": lam}
        enc = train_embedding(graph, split, TrainConfig(**{**embed_cfg.__dict__, **over})).model.encoder
        rows.append((f"+{VARIANT_NAMES[v]}", mode, enc))
    out = SpeakerResult({}, {}, {}, groups)
    for name, m, enc in rows:
        table = offline_table(enc, graph, chosen) if m == "offline" else None
        trs, tes = [], []
        for s in range(n_seeds):
            c = RLConfig(**{**cfg.__dict__, "seed": _game_seed(cfg.seed, s)})
            prov = EmbeddingProvider(m, embed_cfg.d, enc, table, s)
            tr, te = train_speaker(graph, parts, prov, c, episodes_per_listener)
            trs.append(tr)
            tes.append(te)
        out.train_reward[name] = float(np.mean(trs))
        out.test_reward[name] = float(np.mean(tes))
        out.per_seed_test[name] = tes
    return out
