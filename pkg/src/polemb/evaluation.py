"""Downstream evaluation: clustering ratio, outcome prediction, PCA and ablation embeddings."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .embed import Encoder, embed_episodes
from .env import DRAW, WIN_FIRST, WIN_SECOND, agent_view
from .errors import ConfigError, DegenerateError
from .graph import InteractionGraph, SplitSpec
from .nn_core import AdamState, adam_step, log_softmax, mlp_backward, mlp_forward, mlp_init

EmbeddingSet = Mapping[int, np.ndarray]  # agent -> (n_i, d)

# --- IICR --------------------------------------------------------------------


def _mean_dist(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1).mean())


def iicr(sets: EmbeddingSet) -> float:
    """Mean intra-agent distance (self-pairs included) over mean inter-agent distance."""
    agents = sorted(sets)
    if len(agents) < 2:
        raise ConfigError("IICR needs at least two agents")
    T = [np.atleast_2d(np.asarray(sets[a], dtype=np.float64)) for a in agents]
    if any(t.shape[0] == 0 for t in T):
        raise ConfigError("every agent needs at least one embedding")
    n = len(T)
    intra = sum(_mean_dist(t, t) for t in T) / n
    inter = sum(_mean_dist(T[i], T[j]) for i in range(n) for j in range(n) if i != j) / (n * (n - 1))
    if inter <= 0.0:
        raise DegenerateError("all embeddings coincide; inter-agent distance is zero")
    return intra / inter


def phase_embeddings(encoder: Encoder, episodes: Mapping[int, Sequence]) -> dict[int, np.ndarray]:
    return {a: embed_episodes(encoder, eps) for a, eps in sorted(episodes.items()) if eps}


# --- outcome prediction ---------------------------------------------------------

LABELS = ("win_A", "win_B", "draw")
_OUTCOME_TO_LABEL = {WIN_FIRST: 0, WIN_SECOND: 1, DRAW: 2}
_SWAP = np.array([1, 0, 2])


@dataclass
class OutcomeDataset:
    x: np.ndarray  # (n, 2d): [embedding of A, embedding of B]
    y: np.ndarray  # (n,) index into LABELS
    labeled_ids: list[str] = field(default_factory=list)
    source_ids: list[str] = field(default_factory=list)  # episodes the embeddings came from

    def __len__(self):
        return len(self.y)

    def swapped(self) -> "OutcomeDataset":
        d = self.x.shape[1] // 2
        x = np.concatenate([self.x[:, d:], self.x[:, :d]], axis=1)
        return OutcomeDataset(x, _SWAP[self.y], list(self.labeled_ids), list(self.source_ids))

    def augmented(self) -> "OutcomeDataset":
        s = self.swapped()
        return OutcomeDataset(np.concatenate([self.x, s.x]), np.concatenate([self.y, s.y]),
                              self.labeled_ids + s.labeled_ids, self.source_ids + s.source_ids)

    def majority_rate(self) -> float:
        return float(np.bincount(self.y, minlength=3).max() / len(self.y)) if len(self.y) else float("nan")

    def class_balance(self) -> dict[str, float]:
        c = np.bincount(self.y, minlength=3) / max(len(self.y), 1)
        return dict(zip(LABELS, map(float, c)))


def build_outcome_dataset(graph: InteractionGraph, edges: Sequence[tuple[int, int]], encoder: Encoder) -> OutcomeDataset:
    """Label every episode on ``edges``; embed both agents from the next episode on the same edge."""
    xs, ys, lab, src = [], [], [], []
    for e in edges:
        eps = graph.edges[e]
        if len(eps) < 2:
            continue
        za = embed_episodes(encoder, [agent_view(ep, e[0]) for ep in eps])
        zb = embed_episodes(encoder, [agent_view(ep, e[1]) for ep in eps])
        for k, ep in enumerate(eps):
            s = (k + 1) % len(eps)
            xs.append(np.concatenate([za[s], zb[s]]))
            ys.append(_OUTCOME_TO_LABEL[ep.outcome])
            lab.append(ep.episode_id)
            src.append(eps[s].episode_id)
    if not xs:
        return OutcomeDataset(np.zeros((0, 2 * encoder.d)), np.zeros(0, dtype=int))
    return OutcomeDataset(np.array(xs), np.array(ys, dtype=int), lab, src)


@dataclass
class OutcomeClassifier:
    net: object
    mean: np.ndarray
    scale: np.ndarray

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        logits, _ = mlp_forward(self.net, (np.atleast_2d(x) - self.mean) / self.scale)
        return np.exp(log_softmax(logits))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.predict_proba(x).argmax(axis=1)

    def accuracy(self, data: OutcomeDataset) -> float:
        return float((self.predict(data.x) == data.y).mean()) if len(data) else float("nan")


def train_outcome_classifier(data: OutcomeDataset, seed: int = 0, hidden=(100, 100, 100), epochs: int = 50,
                             batch_size: int = 32, learning_rate: float = 1e-3, augment: bool = True) -> OutcomeClassifier:
    """3-class MLP on concatenated pair embeddings, cross-entropy, Adam."""
    if len(np.unique(data.y)) < 2:
        raise DegenerateError("outcome data holds a single class")
    if augment:
        data = data.augmented()
    x, y = data.x, data.y
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale < 1e-12] = 1.0
    xn = (x - mean) / scale
    net = mlp_init([x.shape[1], *hidden, 3], seed)
    opt = AdamState.for_net(net, learning_rate)
    rng = np.random.default_rng(seed)
    n = len(y)
    for _ in range(epochs):
        perm = rng.permutation(n)
        for k in range(0, n, batch_size):
            idx = perm[k : k + batch_size]
            logits, cache = mlp_forward(net, xn[idx])
            g = np.exp(log_softmax(logits))
            g[np.arange(len(idx)), y[idx]] -= 1.0
            adam_step(net, mlp_backward(net, cache, g / len(idx)).params, opt)
    return OutcomeClassifier(net, mean, scale)


# --- PCA -----------------------------------------------------------------------


def jacobi_eigh(a: np.ndarray, tol: float = 1e-10, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigen-decomposition of a symmetric matrix; eigenvalues in descending order."""
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigError("jacobi_eigh needs a square matrix")
    n = a.shape[0]
    v = np.eye(n)
    scale = max(float(np.abs(a).max()), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p], a[:, q] = c * ap - s * aq, s * ap + c * aq
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :], a[q, :] = c * ap - s * aq, s * ap + c * aq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p], v[:, q] = c * vp - s * vq, s * vp + c * vq
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


@dataclass
class PCAResult:
    coords: np.ndarray
    eigenvalues: np.ndarray  # all covariance eigenvalues, descending
    components: np.ndarray  # (d, k)
    mean: np.ndarray

    @property
    def retained_variance(self) -> float:
        return float(self.eigenvalues[: self.components.shape[1]].sum())

    def reconstruct(self) -> np.ndarray:
        return self.coords @ self.components.T + self.mean


def pca_project(x: np.ndarray, k: int) -> PCAResult:
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if k > d:
        raise ConfigError(f"k={k} exceeds dimension {d}")
    if n < k + 1:
        raise ConfigError(f"need at least {k + 1} points for {k} components")
    mean = x.mean(axis=0)
    xc = x - mean
    w, v = jacobi_eigh(xc.T @ xc / (n - 1))
    comps = v[:, :k]
    return PCAResult(xc @ comps, w, comps, mean)


def write_pca_csv(path, coords: np.ndarray, labels: Sequence) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["agent", *[f"pc{i + 1}" for i in range(coords.shape[1])]])
        for lab, row in zip(labels, coords):
            w.writerow([lab, *[f"{v:.10g}" for v in row]])


# --- ablations -----------------------------------------------------------------


def ablate_embedding(mode: str, agent_id: int, table: Mapping[int, np.ndarray], rng: np.random.Generator,
                     d: int | None = None) -> np.ndarray:
    """``zero``: a zero vector; ``rand``: the true embedding of a uniformly chosen different agent."""
    if mode == "zero":
        if d is None:
            d = len(next(iter(table.values())))
        return np.zeros(d)
    if mode == "rand":
        others = [a for a in sorted(table) if a != agent_id]
        if not others:
            raise ConfigError("rand ablation needs at least two known agents")
        return np.asarray(table[others[int(rng.integers(len(others)))]], dtype=np.float64)
    raise ConfigError(f"unknown ablation mode {mode!r}")
