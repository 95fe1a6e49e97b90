"""Policy embeddings: encoder, conditional decoder and the training loop.

The encoder maps each (observation, one-hot action) pair of an agent's episode
to an intermediate vector and averages them. The decoder predicts actions from
the observation concatenated with an embedding of a *different* episode of
the same agent (imitation term). The identification term is a triplet loss
``(1 + exp(|r - n| - |r - p|))^-2`` over reference, positive and negative
episode embeddings. Variants: ``im`` (imitation only), ``id``
(identification only) and ``hyb`` (imitation + lambda * identification).
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .env import AgentEpisode
from .errors import ConfigError, EmptyInputError, SamplingError, TrainingError
from .graph import InteractionGraph, SplitSpec, phase_episodes
from .nn_core import (AdamState, DenseNet, adam_step, load_net, log_softmax, mlp_backward,
                      mlp_forward, mlp_init, save_net)

VARIANTS = ("im", "id", "hyb")
VARIANT_NAMES = {"im": "Emb-Im", "id": "Emb-Id", "hyb": "Emb-Hyb"}
DEFAULT_LAMBDA_GRID = (0.01, 0.05, 0.1, 0.5)


@dataclass
class Encoder:
    pair_net: DenseNet
    obs_dim: int
    n_actions: int

    @property
    def d(self) -> int:
        return self.pair_net.n_out


@dataclass
class ConditionalPolicy:
    decoder_net: DenseNet
    obs_dim: int
    n_actions: int

    @property
    def d(self) -> int:
        return self.decoder_net.n_in - self.obs_dim


def make_encoder(obs_dim: int, n_actions: int, d: int = 16, hidden=(100, 100), seed: int = 0) -> Encoder:
    return Encoder(mlp_init([obs_dim + n_actions, *hidden, d], seed), obs_dim, n_actions)


def make_policy(obs_dim: int, n_actions: int, d: int = 16, hidden=(64, 64), seed: int = 1) -> ConditionalPolicy:
    return ConditionalPolicy(mlp_init([obs_dim + d, *hidden, n_actions], seed), obs_dim, n_actions)


def pair_inputs(encoder: Encoder, ep: AgentEpisode) -> np.ndarray:
    T = len(ep)
    if T == 0:
        raise EmptyInputError(f"episode {ep.episode_id} has no (observation, action) pairs")
    x = np.zeros((T, encoder.obs_dim + encoder.n_actions))
    x[:, : encoder.obs_dim] = ep.observations
    x[np.arange(T), encoder.obs_dim + ep.actions] = 1.0
    return x


def embed_episode(encoder: Encoder, ep: AgentEpisode) -> np.ndarray:
    h, _ = mlp_forward(encoder.pair_net, pair_inputs(encoder, ep))
    return h.mean(axis=0)


def embed_episodes(encoder: Encoder, eps: Sequence[AgentEpisode]) -> np.ndarray:
    """Embeddings of many episodes with one batched forward pass."""
    if not eps:
        return np.zeros((0, encoder.d))
    x = np.concatenate([pair_inputs(encoder, e) for e in eps])
    h, _ = mlp_forward(encoder.pair_net, x)
    bounds = np.cumsum([0] + [len(e) for e in eps])
    return np.add.reduceat(h, bounds[:-1], axis=0) / np.diff(bounds)[:, None]


class _EncoderBatch:
    """Forward several episodes through the encoder at once and backprop per-episode gradients."""

    def __init__(self, encoder: Encoder, eps: Sequence[AgentEpisode]):
        self.encoder = encoder
        self.lengths = np.array([len(e) for e in eps])
        x = np.concatenate([pair_inputs(encoder, e) for e in eps])
        h, self.cache = mlp_forward(encoder.pair_net, x)
        self.bounds = np.concatenate([[0], np.cumsum(self.lengths)])
        self.z = np.add.reduceat(h, self.bounds[:-1], axis=0) / self.lengths[:, None]

    def backward(self, dz: np.ndarray) -> np.ndarray:
        rows = np.repeat(dz / self.lengths[:, None], self.lengths, axis=0)
        return mlp_backward(self.encoder.pair_net, self.cache, rows).params


def _decoder_nll(policy: ConditionalPolicy, ep: AgentEpisode, z: np.ndarray, need_grad: bool):
    T = len(ep)
    if T == 0:
        raise EmptyInputError(f"episode {ep.episode_id} has no (observation, action) pairs")
    x = np.concatenate([ep.observations, np.broadcast_to(z, (T, z.size))], axis=1)
    logits, cache = mlp_forward(policy.decoder_net, x)
    lp = log_softmax(logits)
    loss = -float(lp[np.arange(T), ep.actions].sum())
    if not need_grad:
        return loss, None, None
    dlogits = np.exp(lp)
    dlogits[np.arange(T), ep.actions] -= 1.0
    g = mlp_backward(policy.decoder_net, cache, dlogits)
    dz = g.input[:, policy.obs_dim :].sum(axis=0)
    return loss, g.params, dz


def _check_distinct(a: AgentEpisode, b: AgentEpisode, what: str) -> None:
    if a.episode_id == b.episode_id:
        raise SamplingError(f"{what}: episodes must be distinct, got {a.episode_id} twice")
    if a.agent_id != b.agent_id:
        raise SamplingError(f"{what}: episodes must come from the same agent")


@dataclass
class TermResult:
    loss: float
    encoder_grad: np.ndarray
    decoder_grad: np.ndarray | None = None


def imitation_term(encoder: Encoder, policy: ConditionalPolicy, e1: AgentEpisode, e2: AgentEpisode) -> TermResult:
    """-sum over (o, a) in e1 of log pi(a | o, f(e2)), with gradients for encoder and decoder."""
    _check_distinct(e1, e2, "imitation")
    enc = _EncoderBatch(encoder, [e2])
    loss, dec_grad, dz = _decoder_nll(policy, e1, enc.z[0], need_grad=True)
    return TermResult(loss, enc.backward(dz[None, :]), dec_grad)


def imitation_loss(encoder: Encoder, policy: ConditionalPolicy, e1: AgentEpisode, e2: AgentEpisode) -> float:
    _check_distinct(e1, e2, "imitation")
    return _decoder_nll(policy, e1, embed_episode(encoder, e2), need_grad=False)[0]


def triplet_value(p: np.ndarray, n: np.ndarray, r: np.ndarray) -> float:
    x = float(np.linalg.norm(r - n) - np.linalg.norm(r - p))
    return _sq_sigmoid(x)[0]


def _sq_sigmoid(x: float) -> tuple[float, float]:
    """(1 + e^x)^-2 and its derivative, stable for large |x|."""
    if x >= 0:
        ex = math.exp(-x)
        s = ex / (1.0 + ex)  # = 1 / (1 + e^x)
    else:
        s = 1.0 / (1.0 + math.exp(x))
    return s * s, -2.0 * s * s * (1.0 - s)


def triplet_grads(p: np.ndarray, n: np.ndarray, r: np.ndarray):
    """Loss and gradients with respect to the positive, negative and reference embeddings."""
    rn, rp = r - n, r - p
    dn, dp = float(np.linalg.norm(rn)), float(np.linalg.norm(rp))
    loss, g = _sq_sigmoid(dn - dp)
    un = rn / dn if dn > 0 else np.zeros_like(rn)
    up = rp / dp if dp > 0 else np.zeros_like(rp)
    return loss, g * up, -g * un, g * (un - up)


def triplet_term(encoder: Encoder, e_pos: AgentEpisode, e_neg: AgentEpisode, e_ref: AgentEpisode) -> TermResult:
    _check_distinct(e_pos, e_ref, "identification")
    if e_neg.agent_id == e_pos.agent_id:
        raise SamplingError("identification: the negative episode must come from another agent")
    enc = _EncoderBatch(encoder, [e_pos, e_neg, e_ref])
    loss, gp, gn, gr = triplet_grads(*enc.z)
    return TermResult(loss, enc.backward(np.stack([gp, gn, gr])))


# --- training ------------------------------------------------------------------


@dataclass
class TrainConfig:
    variant: str = "hyb"
    lam: float = 0.1
    learning_rate: float = 1e-3
    epochs: int = 50
    d: int = 16
    seed: int = 0
    encoder_hidden: tuple[int, ...] = (100, 100)
    decoder_hidden: tuple[int, ...] = (64, 64)
    update_mode: str = "per_negative"  # or "batched"
    lambda_grid: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    imitation: bool = True  # False drops the imitation term from the hybrid loss

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.update_mode not in ("per_negative", "batched"):
            raise ConfigError(f"unknown update mode {self.update_mode!r}")
        self.encoder_hidden = tuple(self.encoder_hidden)
        self.decoder_hidden = tuple(self.decoder_hidden)
        self.lambda_grid = tuple(self.lambda_grid)

    @property
    def weights(self) -> tuple[float, float]:
        """(imitation weight, identification weight)."""
        w_im, w_id = {"im": (1.0, 0.0), "id": (0.0, 1.0), "hyb": (1.0, self.lam)}[self.variant]
        return (w_im if self.imitation else 0.0), w_id


@dataclass
class EmbeddingModel:
    encoder: Encoder
    policy: ConditionalPolicy
    enc_opt: AdamState
    dec_opt: AdamState

    @classmethod
    def create(cls, obs_dim: int, n_actions: int, cfg: TrainConfig) -> "EmbeddingModel":
        ss = np.random.SeedSequence(cfg.seed).generate_state(2)
        enc = make_encoder(obs_dim, n_actions, cfg.d, cfg.encoder_hidden, int(ss[0]))
        pol = make_policy(obs_dim, n_actions, cfg.d, cfg.decoder_hidden, int(ss[1]))
        return cls(enc, pol, AdamState.for_net(enc.pair_net, cfg.learning_rate),
                   AdamState.for_net(pol.decoder_net, cfg.learning_rate))

    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        save_net(self.encoder.pair_net, os.path.join(directory, "encoder.bin"))
        save_net(self.policy.decoder_net, os.path.join(directory, "decoder.bin"))
        with open(os.path.join(directory, "shapes.json"), "w") as fh:
            json.dump({"obs_dim": self.encoder.obs_dim, "n_actions": self.encoder.n_actions}, fh)

    @classmethod
    def load(cls, directory, learning_rate: float = 1e-3) -> "EmbeddingModel":
        with open(os.path.join(directory, "shapes.json")) as fh:
            shapes = json.load(fh)
        enc = Encoder(load_net(os.path.join(directory, "encoder.bin")), shapes["obs_dim"], shapes["n_actions"])
        pol = ConditionalPolicy(load_net(os.path.join(directory, "decoder.bin")), shapes["obs_dim"], shapes["n_actions"])
        return cls(enc, pol, AdamState.for_net(enc.pair_net, learning_rate), AdamState.for_net(pol.decoder_net, learning_rate))


@dataclass
class HybridResult:
    losses: list[float]  # one per optimizer update
    imitation: list[float]
    identification: list[float]
    updates: int


def _hybrid_losses_and_grads(model: EmbeddingModel, e_pos, e_ref, e_negs, w_im: float, w_id: float):
    """Loss = w_im * Im(e_pos | e_ref) + w_id * sum_j Id(e_pos, e_neg_j, e_ref) and its gradients."""
    enc, pol = model.encoder, model.policy
    batch = _EncoderBatch(enc, [e_ref, e_pos, *e_negs] if w_id else [e_ref])
    z_ref = batch.z[0]
    dz = np.zeros_like(batch.z)
    im = 0.0
    dec_grad = None
    if w_im:
        im, dec_grad, dz_ref = _decoder_nll(pol, e_pos, z_ref, need_grad=True)
        dz[0] += w_im * dz_ref
    ids = []
    if w_id:
        z_pos = batch.z[1]
        for k in range(len(e_negs)):
            l, gp, gn, gr = triplet_grads(z_pos, batch.z[2 + k], z_ref)
            ids.append(l)
            dz[0] += w_id * gr
            dz[1] += w_id * gp
            dz[2 + k] += w_id * gn
    total = w_im * im + w_id * float(np.sum(ids))
    return total, im, ids, batch.backward(dz), dec_grad


def hybrid_step(model: EmbeddingModel, e_pos: AgentEpisode, e_ref: AgentEpisode,
                negatives: Sequence[tuple[int, AgentEpisode]], lam: float = 0.1,
                mode: str = "per_negative", w_im: float = 1.0) -> HybridResult:
    """One anchor step. ``per_negative`` applies an update per negative agent; ``batched`` sums them."""
    if lam < 0:
        raise ConfigError("lambda must be >= 0")
    if not negatives:
        raise ConfigError("hybrid step needs at least one negative agent")
    _check_distinct(e_pos, e_ref, "hybrid")
    for j, e_neg in negatives:
        if j == e_pos.agent_id or e_neg.agent_id == e_pos.agent_id:
            raise SamplingError("negative episodes must come from other agents")
    groups = [[e] for _, e in negatives] if mode == "per_negative" else [[e for _, e in negatives]]
    if mode not in ("per_negative", "batched"):
        raise ConfigError(f"unknown update mode {mode!r}")
    res = HybridResult([], [], [], 0)
    for negs in groups:
        total, im, ids, enc_grad, dec_grad = _hybrid_losses_and_grads(model, e_pos, e_ref, negs, w_im, lam)
        if not math.isfinite(total):
            raise TrainingError(f"non-finite loss {total} at anchor {e_pos.episode_id}")
        adam_step(model.encoder.pair_net, enc_grad, model.enc_opt)
        if dec_grad is not None:
            adam_step(model.policy.decoder_net, dec_grad, model.dec_opt)
        res.losses.append(total)
        res.imitation.append(im)
        res.identification.extend(ids)
        res.updates += 1
    return res


def mean_imitation_loss(model: EmbeddingModel, episodes: dict[int, list[AgentEpisode]]) -> float:
    """Per-step imitation NLL, each episode conditioned on the next episode of the same agent."""
    total, steps = 0.0, 0
    for a in sorted(episodes):
        eps = episodes[a]
        if len(eps) < 2:
            continue
        z = embed_episodes(model.encoder, eps)
        for k, e in enumerate(eps):
            total += _decoder_nll(model.policy, e, z[(k + 1) % len(eps)], need_grad=False)[0]
            steps += len(e)
    return total / steps if steps else float("nan")


def mean_triplet_loss(encoder: Encoder, episodes: dict[int, list[AgentEpisode]], n_samples: int = 500,
                      seed: int = 0) -> float:
    agents = [a for a in sorted(episodes) if len(episodes[a]) >= 2]
    if len(agents) < 2:
        return float("nan")
    z = {a: embed_episodes(encoder, episodes[a]) for a in agents}
    rng = np.random.default_rng(seed)
    vals = []
    for _ in range(n_samples):
        i, j = rng.choice(len(agents), 2, replace=False)
        zi, zj = z[agents[i]], z[agents[j]]
        p, r = rng.choice(len(zi), 2, replace=False)
        vals.append(triplet_value(zi[p], zj[rng.integers(len(zj))], zi[r]))
    return float(np.mean(vals))


@dataclass
class TrainResult:
    model: EmbeddingModel
    config: TrainConfig
    curves: list[dict] = field(default_factory=list)
    touched: set = field(default_factory=set)  # episode ids used by the optimizer

    @property
    def final_valid_loss(self) -> float:
        return self.curves[-1]["valid_imitation"]


def _shapes(graph: InteractionGraph, role) -> tuple[int, int]:
    kinds = graph.spec.roles
    seat = kinds.index(role) if role in kinds else 0
    return graph.spec.obs_dims[seat], graph.spec.action_arities[seat]


def train_embedding(graph: InteractionGraph, split: SplitSpec, cfg: TrainConfig, log=None) -> TrainResult:
    """Epochs of: for each agent i (shuffled) sample e+, e* from E_i; for each j != i sample e- from E_j."""
    train = {a: v for a, v in phase_episodes(graph, split, "train").items()}
    valid = phase_episodes(graph, split, "valid")
    agents = sorted(train)
    if len(agents) < 2:
        raise ConfigError("training needs at least two agents")
    for a in agents:
        if len(train[a]) < 2:
            raise SamplingError(f"agent {a} has fewer than 2 training episodes")
    obs_dim, n_actions = _shapes(graph, split.role)
    model = EmbeddingModel.create(obs_dim, n_actions, cfg)
    w_im, w_id = cfg.weights
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))
    result = TrainResult(model, cfg)

    def record(epoch, im_vals, id_vals):
        row = {
            "epoch": epoch,
            "train_step_imitation": float(np.mean(im_vals)) if im_vals else float("nan"),
            "train_step_identification": float(np.mean(id_vals)) if id_vals else float("nan"),
            "train_imitation": mean_imitation_loss(model, train),
            "valid_imitation": mean_imitation_loss(model, valid),
        }
        if not all(math.isfinite(row[k]) for k in ("train_imitation",)):
            raise TrainingError(f"non-finite training loss at epoch {epoch}")
        result.curves.append(row)
        if log:
            log(row)

    record(0, [], [])
    for epoch in range(1, cfg.epochs + 1):
        im_vals, id_vals = [], []
        for i in rng.permutation(agents):
            eps_i = train[i]
            a, b = rng.choice(len(eps_i), 2, replace=False)
            e_pos, e_ref = eps_i[a], eps_i[b]
            negatives = []
            for j in agents:
                if j != i:
                    negatives.append((j, train[j][rng.integers(len(train[j]))]))
            res = hybrid_step(model, e_pos, e_ref, negatives, w_id, cfg.update_mode, w_im)
            result.touched.update([e_pos.episode_id, e_ref.episode_id])
            result.touched.update(e.episode_id for _, e in negatives)
            if w_im:
                im_vals.extend(v / len(e_pos) for v in res.imitation)
            id_vals.extend(res.identification)
        record(epoch, im_vals, id_vals)
    return result


def select_lambda(graph: InteractionGraph, split: SplitSpec, cfg: TrainConfig, grid=None, log=None):
    """Train one hybrid model per lambda; pick the lowest final validation imitation loss (ties -> smaller lambda)."""
    grid = tuple(cfg.lambda_grid if grid is None else grid)
    if not grid:
        raise ConfigError("empty lambda grid")
    if not split.edges.get("valid"):
        raise ConfigError("lambda selection needs validation edges")
    results = {}
    for lam in sorted(grid):
        c = TrainConfig(**{**asdict(cfg), "variant": "hyb", "lam": lam})
        results[lam] = train_embedding(graph, split, c, log)
    table = [(lam, results[lam].final_valid_loss) for lam in sorted(grid)]
    best = min(table, key=lambda r: (r[1], r[0]))[0]
    return best, table, results


def write_curves(path, curves: list[dict]) -> None:
    if not curves:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(curves[0]))
        w.writeheader()
        for row in curves:
            w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})
