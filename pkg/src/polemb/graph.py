"""Agent-interaction graphs and weak/strong generalisation splits.

Nodes are agents, edges hold the episodes two agents played together. A weak
split partitions edges (test adds only unseen interactions between known
agents); a strong split partitions the embedded agents (test adds unseen
agents together with their interactions).
"""

from __future__ import annotations

import itertools
import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .agents import Population, listener_partners
from .env import AgentEpisode, Episode, MarkovGameSpec, agent_view, rollout
from .errors import ConfigError, SamplingError, SplitError

CLIQUE = "clique"
BIPARTITE = "bipartite"
PHASES = ("train", "valid", "test")
MAX_SPLIT_RETRIES = 1000

Edge = tuple[int, int]


@dataclass
class InteractionGraph:
    spec: MarkovGameSpec
    topology: str
    roles: dict[int, str]
    edges: dict[Edge, list[Episode]]
    seed: int = 0

    @property
    def agents(self) -> list[int]:
        return sorted(self.roles)

    def agents_with_role(self, role: str | None) -> list[int]:
        return [a for a in self.agents if role is None or self.roles[a] == role]

    def edge_list(self) -> list[Edge]:
        return sorted(self.edges)

    def n_episodes(self) -> int:
        return sum(len(v) for v in self.edges.values())

    def episodes(self):
        for e in self.edge_list():
            yield from self.edges[e]

    def to_nx(self, edges=None) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(self.agents)
        g.add_edges_from(self.edge_list() if edges is None else edges)
        return g

    def manifest(self) -> dict:
        return {
            "topology": self.topology,
            "seed": self.seed,
            "roles": {str(a): r for a, r in sorted(self.roles.items())},
            "edges": [{"edge": list(e), "episodes": [ep.episode_id for ep in self.edges[e]]} for e in self.edge_list()],
        }


def edge_seed(seed: int, edge: Edge, k: int) -> int:
    return int(np.random.SeedSequence([seed, edge[0], edge[1], k]).generate_state(1, np.uint32)[0])


def graph_edges(population: Population, topology: str) -> list[Edge]:
    if topology == CLIQUE:
        return list(itertools.combinations(population.ids, 2))
    if topology == BIPARTITE:
        speakers = population.ids_with_role("speaker")
        listeners = population.ids_with_role("listener")
        m = len(listeners)
        edges = []
        for j, lid in enumerate(listeners):
            for s in listener_partners(j, len(speakers)):
                edges.append((speakers[s], lid))
        if len(set(edges)) != len(edges) or m != len(speakers):
            raise ConfigError("bipartite pairing needs equally many speakers and listeners")
        return sorted(edges)
    raise ConfigError(f"unknown topology {topology!r}")


def _play(args):
    spec, pa, pb, seed, eid = args
    return rollout(spec, pa, pb, seed, eid)


def build_graph(population: Population, spec: MarkovGameSpec, episodes_per_edge: int, topology: str,
                seed: int, workers: int = 1) -> InteractionGraph:
    """Roll out ``episodes_per_edge`` seeded episodes on every edge of the chosen topology."""
    if episodes_per_edge < 2:
        raise ConfigError("each edge needs at least 2 episodes")
    edges = graph_edges(population, topology)
    jobs = []
    for e in edges:
        seeds = [edge_seed(seed, e, k) for k in range(episodes_per_edge)]
        if len(set(seeds)) != len(seeds):
            raise ConfigError(f"episode seed collision on edge {e}")
        for k, s in enumerate(seeds):
            jobs.append((spec, population.policies[e[0]], population.policies[e[1]], s, f"{e[0]}-{e[1]}#{k}"))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            eps = list(pool.map(_play, jobs, chunksize=16))
    else:
        eps = [_play(j) for j in jobs]
    table: dict[Edge, list[Episode]] = {e: [] for e in edges}
    for ep in eps:
        table[ep.participants].append(ep)
    roles = {a: population.role_of(a) for a in population.ids}
    return InteractionGraph(spec, topology, roles, table, seed)


# --- splits ------------------------------------------------------------------


@dataclass
class SplitSpec:
    mode: str  # "weak" | "strong"
    seed: int
    edges: dict[str, list[Edge]]  # phase -> edges
    nodes: dict[str, list[int]] = field(default_factory=dict)  # strong only
    adaptation: dict[str, list[Edge]] = field(default_factory=dict)  # cross-group few-shot edges
    role: str | None = None  # embedded role; None means every agent

    def phase_edges(self, phase: str) -> list[Edge]:
        if phase not in PHASES:
            raise ConfigError(f"unknown phase {phase!r}")
        return self.edges[phase]

    def manifest(self) -> dict:
        return {
            "mode": self.mode,
            "seed": self.seed,
            "role": self.role,
            "edges": {p: [list(e) for e in v] for p, v in self.edges.items()},
            "nodes": self.nodes,
            "adaptation": {k: [list(e) for e in v] for k, v in self.adaptation.items()},
        }

    @classmethod
    def from_manifest(cls, d: dict) -> "SplitSpec":
        return cls(
            d["mode"],
            d["seed"],
            {p: [tuple(e) for e in v] for p, v in d["edges"].items()},
            {p: list(v) for p, v in d.get("nodes", {}).items()},
            {k: [tuple(e) for e in v] for k, v in d.get("adaptation", {}).items()},
            d.get("role"),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.manifest(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path) -> "SplitSpec":
        with open(path) as fh:
            return cls.from_manifest(json.load(fh))


def split_weak(graph: InteractionGraph, train_fraction: float, seed: int) -> SplitSpec:
    """Random edge partition whose train part spans a connected graph; the rest is halved valid/test."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError("train_fraction must lie in (0, 1)")
    edges = graph.edge_list()
    if not nx.is_connected(graph.to_nx()):
        raise SplitError("interaction graph is not connected")
    n_train = int(round(train_fraction * len(edges)))
    n_hold = len(edges) - n_train
    if n_hold <= 1:
        warnings.warn(f"weak split holds out only {n_hold} edge(s)", stacklevel=2)
    rng = np.random.default_rng(seed)
    for _ in range(MAX_SPLIT_RETRIES):
        perm = rng.permutation(len(edges))
        train = sorted(edges[k] for k in perm[:n_train])
        if nx.is_connected(graph.to_nx(train)):
            rest = [edges[k] for k in perm[n_train:]]
            n_valid = len(rest) // 2
            return SplitSpec("weak", seed, {"train": train, "valid": sorted(rest[:n_valid]),
                                            "test": sorted(rest[n_valid:])}, role=None)
    raise SplitError(f"no connected train graph at fraction {train_fraction} after {MAX_SPLIT_RETRIES} tries")


def split_weak_per_node(graph: InteractionGraph, role: str, seed: int) -> SplitSpec:
    """Hold out one incident edge of every ``role`` node; held-out edges are halved valid/test.

    This is the weak split for sparse bipartite graphs, where an edge-fraction
    split cannot keep the train graph connected.
    """
    rng = np.random.default_rng(seed)
    held = set()
    for a in graph.agents_with_role(role):
        inc = [e for e in graph.edge_list() if a in e and e not in held]
        if len(inc) < 2:
            raise SplitError(f"agent {a} has fewer than 2 edges left to split")
        held.add(inc[int(rng.integers(len(inc)))])
    held_list = sorted(held)
    order = rng.permutation(len(held_list))
    n_valid = len(held_list) // 2
    valid = sorted(held_list[k] for k in order[:n_valid])
    test = sorted(held_list[k] for k in order[n_valid:])
    train = sorted(e for e in graph.edge_list() if e not in held)
    return SplitSpec("weak", seed, {"train": train, "valid": valid, "test": test}, role=role)


def split_nodes(graph: InteractionGraph, groups: dict[str, list[int]], seed: int = 0,
                role: str | None = None) -> SplitSpec:
    """Strong split from explicit node groups."""
    where = {a: g for g, members in groups.items() for a in members}
    edges = {p: [] for p in PHASES}
    adaptation: dict[str, list[Edge]] = {}
    for e in graph.edge_list():
        if graph.topology == BIPARTITE:
            embedded = [a for a in e if a in where]
            if len(embedded) != 1:
                raise SplitError(f"edge {e} does not touch exactly one embedded node")
            edges[where[embedded[0]]].append(e)
            continue
        ga, gb = where[e[0]], where[e[1]]
        if ga == gb:
            edges[ga].append(e)
        else:
            key = "-".join(sorted((ga, gb)))
            adaptation.setdefault(key, []).append(e)
    nodes = {p: sorted(groups.get(p, [])) for p in PHASES}
    return SplitSpec("strong", seed, edges, nodes, adaptation, role)


def split_strong(graph: InteractionGraph, counts: tuple[int, int, int], seed: int,
                 role: str | None = None) -> SplitSpec:
    """Uniform node partition of the embedded role into (train, valid, test) groups."""
    if role is None and graph.topology == BIPARTITE:
        role = "listener"
    nodes = graph.agents_with_role(role)
    if len(counts) != 3 or any(c < 0 for c in counts) or sum(counts) != len(nodes):
        raise ConfigError(f"counts {tuple(counts)} must sum to {len(nodes)} nodes")
    rng = np.random.default_rng(seed)
    perm = [nodes[k] for k in rng.permutation(len(nodes))]
    a, b, _ = counts
    groups = {"train": perm[:a], "valid": perm[a : a + b], "test": perm[a + b :]}
    return split_nodes(graph, groups, seed, role)


# --- episode access ----------------------------------------------------------


def phase_agents(graph: InteractionGraph, split: SplitSpec, phase: str) -> list[int]:
    """Embedded agents that own episodes in ``phase``."""
    if split.mode == "strong":
        return list(split.nodes[phase])
    seen = {a for e in split.phase_edges(phase) for a in e}
    return [a for a in graph.agents_with_role(split.role) if a in seen]


def phase_episodes(graph: InteractionGraph, split: SplitSpec, phase: str) -> dict[int, list[AgentEpisode]]:
    """Agent views of every phase episode, keyed by embedded agent, in edge order."""
    agents = set(phase_agents(graph, split, phase))
    out: dict[int, list[AgentEpisode]] = {a: [] for a in sorted(agents)}
    for e in split.phase_edges(phase):
        for ep in graph.edges[e]:
            for a in e:
                if a in agents:
                    out[a].append(agent_view(ep, a))
    return out


def episode_pairs_for_agent(graph: InteractionGraph, split: SplitSpec, agent_id: int, phase: str,
                            rng: np.random.Generator):
    """Endless stream of distinct-episode pairs ``(e1, e2)`` for one agent within a phase.

    Each pass shuffles the agent's episodes and pairs consecutive entries, so no
    episode appears twice as the first element within a pass.
    """
    eps = phase_episodes(graph, split, phase).get(agent_id, [])
    if len(eps) < 2:
        raise SamplingError(f"agent {agent_id} has {len(eps)} episode(s) in phase {phase!r}; need 2")
    n = len(eps)
    while True:
        perm = rng.permutation(n)
        for k in range(0, n - 1, 2):
            yield eps[perm[k]], eps[perm[k + 1]]
        if n % 2:
            other = int(rng.integers(n - 1))
            other = perm[other] if perm[other] != perm[-1] else perm[n - 2]
            yield eps[perm[-1]], eps[other]


def graph_from_episodes(population: Population, spec: MarkovGameSpec, episodes, topology: str,
                        seed: int = 0) -> InteractionGraph:
    """Rebuild an interaction graph from stored episodes, validated against the topology."""
    edges = graph_edges(population, topology)
    table: dict[Edge, list[Episode]] = {e: [] for e in edges}
    for ep in episodes:
        if ep.participants not in table:
            raise ConfigError(f"episode {ep.episode_id} is not on a {topology} edge")
        table[ep.participants].append(ep)
    roles = {a: population.role_of(a) for a in population.ids}
    return InteractionGraph(spec, topology, roles, table, seed)
