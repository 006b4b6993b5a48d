"""Linear-Gaussian SCMs and a GFlowNet posterior over causal DAGs.

DAG states are adjacency bitmasks (bit ``i * N + j`` is the edge ``i -> j``).
The construction MDP starts from the empty graph; each action adds one edge
that keeps the graph acyclic, and a separate stop action terminates.

For ``N <= 4`` the flow model is an exact table over every reachable DAG; for
``N = 5`` a one-hidden-layer scorer maps the adjacency to per-action log flows.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import kernels

log = logging.getLogger(__name__)

MU_STOP = 0.4
EXPLORE_EPS = 0.1
LEARNING_RATE = 1e-3
BATCH_SIZE = 100
DEFAULT_BATCHES = 100
TABULAR_MAX_NODES = 4


# ---------------------------------------------------------------------------
# SCM
# ---------------------------------------------------------------------------


def is_acyclic(adj: np.ndarray) -> bool:
    a = np.asarray(adj, dtype=bool)
    n = len(a)
    indeg = a.sum(axis=0).astype(int)
    stack = [i for i in range(n) if indeg[i] == 0]
    seen = 0
    while stack:
        i = stack.pop()
        seen += 1
        for j in np.flatnonzero(a[i]):
            indeg[j] -= 1
            if indeg[j] == 0:
                stack.append(int(j))
    return seen == n


def topological_order(adj: np.ndarray) -> list[int]:
    a = np.asarray(adj, dtype=bool)
    indeg = a.sum(axis=0).astype(int)
    ready = sorted(i for i in range(len(a)) if indeg[i] == 0)
    order = []
    while ready:
        i = ready.pop(0)
        order.append(i)
        for j in np.flatnonzero(a[i]):
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(int(j))
        ready.sort()
    if len(order) != len(a):
        raise ValueError("graph has a cycle")
    return order


@dataclass(frozen=True)
class Scm:
    """Linear-Gaussian SCM ``x = W^T x + v`` with ``v ~ N(0, noise_variance I)``."""

    n_nodes: int
    weights: np.ndarray
    noise_variance: float

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (self.n_nodes, self.n_nodes):
            raise ValueError("weights must be n_nodes x n_nodes")
        if self.noise_variance <= 0:
            raise ValueError("noise_variance must be positive")
        if not is_acyclic(w != 0):
            raise ValueError("weight support must be acyclic")
        object.__setattr__(self, "weights", w)

    @property
    def adjacency(self) -> np.ndarray:
        return self.weights != 0


def sample_scm(scm: Scm, n_samples: int, seed: int) -> np.ndarray:
    """Ancestral sampling, one node at a time in topological order."""
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, math.sqrt(scm.noise_variance), size=(n_samples, scm.n_nodes))
    x = np.zeros((n_samples, scm.n_nodes))
    for j in topological_order(scm.adjacency):
        x[:, j] = x @ scm.weights[:, j] + noise[:, j]
    return x


def random_er_scm(n_nodes: int, avg_edges: float, seed: int, noise_variance: float = 0.01) -> Scm:
    """Erdős–Rényi DAG over the node order ``0 < 1 < ... < N-1`` with N(0, 1) weights."""
    pairs = n_nodes * (n_nodes - 1) // 2
    if not 0 <= avg_edges <= pairs:
        raise ValueError("avg_edges must lie in [0, n(n-1)/2]")
    rng = np.random.default_rng(seed)
    p = avg_edges / pairs if pairs else 0.0
    mask = np.triu(rng.random((n_nodes, n_nodes)) < p, k=1)
    w = np.where(mask, rng.standard_normal((n_nodes, n_nodes)), 0.0)
    return Scm(n_nodes, w, noise_variance)


def chain_scm(n_nodes: int = 3, weight: float = 1.0, noise_variance: float = 0.01) -> Scm:
    w = np.zeros((n_nodes, n_nodes))
    for i in range(n_nodes - 1):
        w[i, i + 1] = weight
    return Scm(n_nodes, w, noise_variance)


def save_data(data: np.ndarray, path: str | Path) -> None:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow([f"x{i}" for i in range(data.shape[1])])
    for row in data:
        wr.writerow([repr(float(v)) for v in row])
    Path(path).write_text(buf.getvalue())


def load_data(path: str | Path) -> np.ndarray:
    rows = [r for r in csv.reader(Path(path).read_text().splitlines()) if r and not r[0].startswith("#")]
    return np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)


# ---------------------------------------------------------------------------
# DAG states
# ---------------------------------------------------------------------------


def to_matrix(bits: int, n: int) -> np.ndarray:
    return np.array([[(bits >> (i * n + j)) & 1 for j in range(n)] for i in range(n)], dtype=bool)


def from_matrix(adj: np.ndarray) -> int:
    a = np.asarray(adj, dtype=bool)
    n = len(a)
    return sum(1 << (i * n + j) for i in range(n) for j in range(n) if a[i, j])


def dag_key(bits: int, n: int) -> str:
    """Row-major adjacency bitstring."""
    return "".join(str((bits >> k) & 1) for k in range(n * n))


def key_to_bits(key: str) -> int:
    return sum(1 << k for k, ch in enumerate(key) if ch == "1")


def closure(bits: int, n: int) -> np.ndarray:
    """Reflexive transitive closure of the adjacency."""
    r = to_matrix(bits, n) | np.eye(n, dtype=bool)
    for k in range(n):
        r |= r[:, [k]] & r[[k], :]
    return r


def legal_mask(bits: int, n: int) -> np.ndarray:
    """Edges ``i -> j`` that are new, not self-loops, and do not close a cycle."""
    r = closure(bits, n)
    adj = to_matrix(bits, n)
    return ~adj & ~r.T & ~np.eye(n, dtype=bool)


@dataclass(frozen=True)
class DagState:
    n: int
    bits: int
    is_terminal: bool = False

    @property
    def adjacency(self) -> np.ndarray:
        return to_matrix(self.bits, self.n)

    @property
    def mask(self) -> np.ndarray:
        return legal_mask(self.bits, self.n)

    @property
    def key(self) -> str:
        return dag_key(self.bits, self.n)

    def add(self, i: int, j: int) -> DagState:
        if self.is_terminal or not self.mask[i, j]:
            raise ValueError(f"illegal edge {i}->{j}")
        return DagState(self.n, self.bits | (1 << (i * self.n + j)))

    def terminate(self) -> DagState:
        return DagState(self.n, self.bits, True)


@dataclass(frozen=True)
class Mdp:
    """Tabular DAG-construction MDP in the CSR layout the kernels expect."""

    n: int
    states: tuple[int, ...]  # bitmasks, state 0 is the empty graph
    act_ptr: np.ndarray
    act_child: np.ndarray
    act_edge: np.ndarray  # edge index i * n + j, -1 for stop
    in_ptr: np.ndarray
    in_act: np.ndarray

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def max_len(self) -> int:
        return self.n * (self.n - 1) // 2

    def stop_action(self, s: int) -> int:
        return int(self.act_ptr[s + 1]) - 1


@lru_cache(maxsize=8)
def build_mdp(n: int) -> Mdp:
    """Enumerate every DAG on ``n`` labelled nodes by breadth-first edge addition."""
    states = [0]
    index = {0: 0}
    children: list[list[tuple[int, int]]] = []
    head = 0
    while head < len(states):
        bits = states[head]
        mask = legal_mask(bits, n)
        acts = []
        for e in range(n * n):
            if mask.flat[e]:
                nb = bits | (1 << e)
                if nb not in index:
                    index[nb] = len(states)
                    states.append(nb)
                acts.append((e, index[nb]))
        children.append(acts)
        head += 1
    act_ptr = np.zeros(len(states) + 1, dtype=np.int64)
    act_child, act_edge = [], []
    for s, acts in enumerate(children):
        for e, c in acts:
            act_edge.append(e)
            act_child.append(c)
        act_edge.append(-1)
        act_child.append(-1)
        act_ptr[s + 1] = len(act_child)
    act_child_a = np.array(act_child, dtype=np.int64)
    incoming: list[list[int]] = [[] for _ in states]
    for a, c in enumerate(act_child):
        if c >= 0:
            incoming[c].append(a)
    in_ptr = np.zeros(len(states) + 1, dtype=np.int64)
    for s, lst in enumerate(incoming):
        in_ptr[s + 1] = in_ptr[s] + len(lst)
    return Mdp(
        n=n,
        states=tuple(states),
        act_ptr=act_ptr,
        act_child=act_child_a,
        act_edge=np.array(act_edge, dtype=np.int64),
        in_ptr=in_ptr,
        in_act=np.array([a for lst in incoming for a in lst], dtype=np.int64),
    )


def all_dags(n: int) -> list[int]:
    return list(build_mdp(n).states)


# ---------------------------------------------------------------------------
# Rewards
# ---------------------------------------------------------------------------


class ResidualTable:
    """Least-squares residual sums ``RSS_j(parents)`` cached per (node, parent set)."""

    def __init__(self, data: np.ndarray):
        self.data = np.asarray(data, dtype=np.float64)
        self.n_samples, self.n = self.data.shape
        self._cache: dict[tuple[int, int], float] = {}

    def rss(self, j: int, parents: int) -> float:
        key = (j, parents)
        if key not in self._cache:
            y = self.data[:, j]
            cols = [i for i in range(self.n) if (parents >> i) & 1]
            if cols:
                x = self.data[:, cols]
                coef, *_ = np.linalg.lstsq(x, y, rcond=None)
                r = y - x @ coef
            else:
                r = y
            self._cache[key] = float(r @ r)
        return self._cache[key]

    def parent_sets(self, bits: int) -> list[int]:
        n = self.n
        return [sum(1 << i for i in range(n) if (bits >> (i * n + j)) & 1) for j in range(n)]


def structure_log_score(bits: int, table: ResidualTable, variance: str = "pooled") -> float:
    """Gaussian least-squares log-likelihood minus ``(d / 2) log n``.

    ``variance="pooled"`` fits one noise variance shared by all nodes (the SCM
    family used here); ``"per_node"`` fits one per node, which makes
    Markov-equivalent graphs score identically.
    """
    n, m = table.n_samples, table.n
    rss = [table.rss(j, pa) for j, pa in enumerate(table.parent_sets(bits))]
    d = bin(bits).count("1")
    if variance == "pooled":
        s2 = max(sum(rss) / (n * m), 1e-300)
        ll = -0.5 * n * m * (math.log(2 * math.pi * s2) + 1.0)
    elif variance == "per_node":
        ll = sum(-0.5 * n * (math.log(2 * math.pi * max(r / n, 1e-300)) + 1.0) for r in rss)
    else:
        raise ValueError("variance must be 'pooled' or 'per_node'")
    return ll - 0.5 * d * math.log(n)


def dag_score(
    state: DagState,
    data: np.ndarray | None = None,
    mode: str = "B",
    semantic: Callable[[int], float] | None = None,
    variance: str = "pooled",
) -> float:
    """Strictly positive reward of a terminal DAG.

    Mode ``"B"`` exponentiates :func:`structure_log_score`; mode ``"A"``
    exponentiates ``semantic(bits)``, the semantic information of the state
    description the DAG encodes. Values can underflow for very poor graphs;
    training works with log rewards instead.
    """
    if not state.is_terminal:
        raise ValueError("reward is defined on terminal states only")
    return math.exp(dag_log_score(state.bits, state.n, data, mode, semantic, variance))


def dag_log_score(
    bits: int,
    n: int,
    data: np.ndarray | None = None,
    mode: str = "B",
    semantic: Callable[[int], float] | None = None,
    variance: str = "pooled",
) -> float:
    if mode == "A":
        if semantic is None:
            raise ValueError("mode A needs a semantic information function")
        return float(semantic(bits))
    if mode != "B" or data is None:
        raise ValueError("mode B needs data")
    return structure_log_score(bits, ResidualTable(data), variance)


def log_reward_table(
    n: int,
    data: np.ndarray | None = None,
    mode: str = "B",
    semantic: Callable[[int], float] | None = None,
    variance: str = "pooled",
) -> np.ndarray:
    """Log rewards of every DAG in :func:`build_mdp` order, shifted so the max is 0."""
    mdp = build_mdp(n)
    if mode == "A":
        if semantic is None:
            raise ValueError("mode A needs a semantic information function")
        raw = np.array([float(semantic(b)) for b in mdp.states])
    else:
        table = ResidualTable(data)
        raw = np.array([structure_log_score(b, table, variance) for b in mdp.states])
    return raw - raw.max()


def exact_posterior(n: int, log_reward: np.ndarray) -> DagPosterior:
    p = np.exp(log_reward - log_reward.max())
    p /= p.sum()
    return DagPosterior({dag_key(b, n): float(v) for b, v in zip(build_mdp(n).states, p)})


# ---------------------------------------------------------------------------
# Flow models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DagPosterior:
    probs: dict

    def l1(self, other: DagPosterior) -> float:
        keys = set(self.probs) | set(other.probs)
        return float(sum(abs(self.probs.get(k, 0.0) - other.probs.get(k, 0.0)) for k in keys))

    def mode(self) -> str:
        return max(sorted(self.probs), key=lambda k: self.probs[k])


@dataclass
class FlowModel:
    """Flows over the DAG-construction MDP.

    ``kind="table"`` stores one log flow per (state, action) of :func:`build_mdp`;
    ``kind="scorer"`` stores the weights of a one-hidden-layer network.
    """

    n: int
    kind: str
    log_flow: np.ndarray | None = None
    params: dict = field(default_factory=dict)
    log_reward: np.ndarray | None = None
    losses: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def final_loss(self) -> float:
        return float(self.losses[-1]) if self.losses else math.nan

    def action_log_flows(self, bits: int) -> tuple[np.ndarray, np.ndarray]:
        """Legal edge indices (stop = -1 last) and their log flows at ``bits``."""
        if self.kind == "table":
            mdp = build_mdp(self.n)
            s = _state_index(self.n)[bits]
            lo, hi = mdp.act_ptr[s], mdp.act_ptr[s + 1]
            return mdp.act_edge[lo:hi], self.log_flow[lo:hi]
        edges = np.append(np.flatnonzero(legal_mask(bits, self.n).ravel()), -1)
        out = _mlp_forward(self.params, _features(np.array([bits]), self.n))[0][0]
        return edges, out[np.where(edges >= 0, edges, self.n * self.n)]

    def stop_probability(self, bits: int) -> float:
        _, lf = self.action_log_flows(bits)
        p = np.exp(lf - lf.max())
        return float(p[-1] / p.sum())

    def to_dict(self) -> dict:
        doc = {"n": self.n, "kind": self.kind, "losses": list(map(float, self.losses)), "meta": self.meta}
        if self.kind == "table":
            mdp = build_mdp(self.n)
            flows = {}
            for s, b in enumerate(mdp.states):
                lo, hi = mdp.act_ptr[s], mdp.act_ptr[s + 1]
                flows[dag_key(b, self.n)] = {
                    ("stop" if e < 0 else str(int(e))): float(v)
                    for e, v in zip(mdp.act_edge[lo:hi], self.log_flow[lo:hi])
                }
            doc["log_flows"] = flows
        else:
            doc["params"] = {k: v.tolist() for k, v in self.params.items()}
        if self.log_reward is not None:
            doc["log_reward"] = self.log_reward.tolist()
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping) -> FlowModel:
        n = int(doc["n"])
        model = cls(n=n, kind=doc["kind"], losses=list(doc.get("losses", [])), meta=dict(doc.get("meta", {})))
        if model.kind == "table":
            mdp = build_mdp(n)
            lf = np.empty(len(mdp.act_edge))
            for s, b in enumerate(mdp.states):
                row = doc["log_flows"][dag_key(b, n)]
                for a in range(mdp.act_ptr[s], mdp.act_ptr[s + 1]):
                    e = mdp.act_edge[a]
                    lf[a] = row["stop" if e < 0 else str(int(e))]
            model.log_flow = lf
        else:
            model.params = {k: np.asarray(v, dtype=np.float64) for k, v in doc["params"].items()}
        if "log_reward" in doc:
            model.log_reward = np.asarray(doc["log_reward"], dtype=np.float64)
        return model

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> FlowModel:
        return cls.from_dict(json.loads(Path(path).read_text()))


@lru_cache(maxsize=8)
def _state_index(n: int) -> dict:
    return {b: s for s, b in enumerate(build_mdp(n).states)}


def flow_matching_loss(model: FlowModel, trajectories: Sequence[Sequence[int]], log_reward: np.ndarray) -> float:
    """Flow-matching loss averaged over trajectories (tabular models).

    Each trajectory lists MDP state ids from the empty graph (id 0) to its
    terminal graph. Every non-initial state contributes
    ``(inflow - outflow_incl_stop)^2`` and the terminal copy contributes
    ``(F_stop - R)^2``.
    """
    if model.kind != "table":
        raise ValueError("flow_matching_loss works on tabular models; scorers use train_gflownet")
    mdp = build_mdp(model.n)
    width = max(len(t) for t in trajectories)
    visited = np.full((len(trajectories), width), -1, dtype=np.int64)
    for i, t in enumerate(trajectories):
        visited[i, : len(t)] = t
    lengths = np.array([len(t) for t in trajectories], dtype=np.int64)
    loss, _ = kernels.flow_matching_tabular(
        model.log_flow, mdp.act_ptr, mdp.act_child, mdp.in_ptr, mdp.in_act, log_reward, visited, lengths
    )
    return float(loss)


@dataclass(frozen=True)
class GflowConfig:
    n_batches: int = DEFAULT_BATCHES
    batch_size: int = BATCH_SIZE
    lr: float = LEARNING_RATE
    eps: float = EXPLORE_EPS
    mu: float = MU_STOP
    hidden: int = 64
    variance: str = "pooled"
    beta1: float = 0.9
    beta2: float = 0.999


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mhat = m / (1 - self.b1**self.t)
            vhat = v / (1 - self.b2**self.t)
            params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def train_gflownet(
    data: np.ndarray | None,
    n_nodes: int,
    cfg: GflowConfig,
    seed: int,
    log_reward: np.ndarray | None = None,
    on_batch: Callable[[int, float], None] | None = None,
) -> FlowModel:
    """Minimize the flow-matching loss by Adam over sampled trajectories.

    Rollouts follow ``(1 - eps) P + eps * uniform`` and are cut as soon as the
    model's own stop probability exceeds ``mu``. ``log_reward`` overrides the
    data-driven structure score (it must follow :func:`build_mdp` order).
    ``meta["converged"]`` records whether the final loss fell below 1e-3.
    """
    if n_nodes > 5:
        raise ValueError("desk scale supports at most 5 nodes")
    if n_nodes <= TABULAR_MAX_NODES:
        return _train_table(data, n_nodes, cfg, seed, log_reward, on_batch)
    return _train_scorer(data, n_nodes, cfg, seed, log_reward, on_batch)


def _train_table(data, n, cfg, seed, log_reward, on_batch) -> FlowModel:
    mdp = build_mdp(n)
    lr_ = log_reward if log_reward is not None else log_reward_table(n, data, variance=cfg.variance)
    params = {"f": np.zeros(len(mdp.act_edge))}
    opt = Adam(cfg.lr, cfg.beta1, cfg.beta2)
    rng = np.random.default_rng(seed)
    width = max(mdp.max_len, 1)
    losses = []
    for b in range(cfg.n_batches):
        u = rng.random((cfg.batch_size, width))
        visited, lengths = kernels.rollout_tabular(params["f"], mdp.act_ptr, mdp.act_child, u, cfg.eps, cfg.mu)
        loss, grad = kernels.flow_matching_tabular(
            params["f"], mdp.act_ptr, mdp.act_child, mdp.in_ptr, mdp.in_act, lr_, visited, lengths
        )
        opt.step(params, {"f": grad})
        losses.append(float(loss))
        if on_batch is not None:
            on_batch(b, float(loss))
    return FlowModel(n=n, kind="table", log_flow=params["f"], log_reward=lr_, losses=losses,
                     meta={"batches": cfg.n_batches, "seed": seed, "converged": _converged(losses)})


def _converged(losses: list, tol: float = 1e-3) -> bool:
    return bool(losses) and losses[-1] < tol


def terminal_distribution(model: FlowModel) -> DagPosterior:
    """Exact terminal-state distribution of the forward policy (tabular models)."""
    if model.kind != "table":
        raise ValueError("exact terminal distribution needs a tabular model")
    mdp = build_mdp(model.n)
    reach = np.zeros(mdp.n_states)
    reach[0] = 1.0
    term = np.zeros(mdp.n_states)
    # breadth-first enumeration puts parents before children (edge count grows)
    for s in range(mdp.n_states):
        lo, hi = mdp.act_ptr[s], mdp.act_ptr[s + 1]
        lf = model.log_flow[lo:hi]
        p = np.exp(lf - lf.max())
        p /= p.sum()
        term[s] += reach[s] * p[-1]
        for a, pa in zip(range(lo, hi - 1), p[:-1]):
            reach[mdp.act_child[a]] += reach[s] * pa
    return DagPosterior({dag_key(b, model.n): float(t) for b, t in zip(mdp.states, term)})


def sample_dags(model: FlowModel, n_samples: int, seed: int) -> list[int]:
    """Terminal DAG bitmasks of forward rollouts with per-state normalized flows."""
    rng = np.random.default_rng(seed)
    n = model.n
    width = max(n * (n - 1) // 2, 1)
    if model.kind == "table":
        mdp = build_mdp(n)
        u = rng.random((n_samples, width))
        visited, lengths = kernels.rollout_tabular(model.log_flow, mdp.act_ptr, mdp.act_child, u, 0.0, 1.0)
        return [mdp.states[visited[i, lengths[i] - 1]] for i in range(n_samples)]
    out = []
    for _ in range(n_samples):
        bits = 0
        while True:
            edges, lf = model.action_log_flows(bits)
            p = np.exp(lf - lf.max())
            p /= p.sum()
            e = edges[int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right").clip(max=len(p) - 1))]
            if e < 0:
                break
            bits |= 1 << int(e)
        out.append(bits)
    return out


def sample_dag(model: FlowModel, seed: int) -> DagState:
    return DagState(model.n, sample_dags(model, 1, seed)[0], is_terminal=True)


def posterior_estimate(model: FlowModel, n_samples: int, seed: int) -> DagPosterior:
    counts: dict[str, int] = {}
    for b in sample_dags(model, n_samples, seed):
        k = dag_key(b, model.n)
        counts[k] = counts.get(k, 0) + 1
    return DagPosterior({k: c / n_samples for k, c in sorted(counts.items())})


# ---------------------------------------------------------------------------
# Scorer (N = 5)
# ---------------------------------------------------------------------------


def _features(bits: np.ndarray, n: int) -> np.ndarray:
    shifts = np.arange(n * n)
    return ((bits[:, None] >> shifts[None, :]) & 1).astype(np.float64)


def _mlp_init(n: int, hidden: int, rng: np.random.Generator) -> dict:
    d = n * n
    return {
        "W1": rng.normal(0, 1 / math.sqrt(d), size=(d, hidden)),
        "b1": np.zeros(hidden),
        "W2": rng.normal(0, 1 / math.sqrt(hidden), size=(hidden, d + 1)) * 0.1,
        "b2": np.zeros(d + 1),
    }


def _mlp_forward(params: dict, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h = np.tanh(x @ params["W1"] + params["b1"])
    return h @ params["W2"] + params["b2"], h


def _mlp_backward(params: dict, x: np.ndarray, h: np.ndarray, gout: np.ndarray) -> dict:
    gh = (gout @ params["W2"].T) * (1 - h * h)
    return {"W2": h.T @ gout, "b2": gout.sum(axis=0), "W1": x.T @ gh, "b1": gh.sum(axis=0)}


def _train_scorer(data, n, cfg, seed, log_reward, on_batch) -> FlowModel:
    rng = np.random.default_rng(seed)
    params = _mlp_init(n, cfg.hidden, rng)
    opt = Adam(cfg.lr, cfg.beta1, cfg.beta2)
    # all 29281 five-node DAGs are cheap to score, so rewards are max-shifted like the table
    if log_reward is None:
        log_reward = log_reward_table(n, data, variance=cfg.variance)
    index = _state_index(n)
    cache: dict[int, float] = {}
    stop = n * n
    model = FlowModel(n=n, kind="scorer", params=params)
    losses = []
    for b in range(cfg.n_batches):
        # rollouts with the current network
        trajs = []
        for _ in range(cfg.batch_size):
            bits, traj = 0, [0]
            while True:
                edges, lf = model.action_log_flows(bits)
                p = np.exp(lf - lf.max())
                p /= p.sum()
                if len(edges) == 1 or p[-1] > cfg.mu:
                    break
                q = (1 - cfg.eps) * p + cfg.eps / len(p)
                e = int(edges[min(int(np.searchsorted(np.cumsum(q), rng.random(), side="right")), len(q) - 1)])
                if e < 0:
                    break
                bits |= 1 << e
                traj.append(bits)
            trajs.append(traj)
        # gather every (state, action) flow the residuals touch
        rows: dict[int, int] = {}
        terms = []  # (kind, state bits)
        for traj in trajs:
            for s in traj[1:]:
                terms.append(("flow", s))
            terms.append(("end", traj[-1]))
        for _, s in terms:
            rows.setdefault(s, len(rows))
            for e in range(n * n):
                if (s >> e) & 1:
                    rows.setdefault(s & ~(1 << e), len(rows))
        states = np.array(list(rows), dtype=np.int64)
        x = _features(states, n)
        out, h = _mlp_forward(params, x)
        flow = np.exp(np.clip(out, -50, 50))
        gflow = np.zeros_like(flow)
        loss = 0.0
        for kind, s in terms:
            r_s = rows[s]
            if kind == "end":
                if s not in cache:
                    cache[s] = math.exp(float(log_reward[index[s]]))
                res = flow[r_s, stop] - cache[s]
                loss += res * res
                gflow[r_s, stop] += 2 * res
                continue
            ins = [(rows[s & ~(1 << e)], e) for e in range(n * n) if (s >> e) & 1]
            legal = np.append(np.flatnonzero(legal_mask(s, n).ravel()), stop)
            res = sum(flow[p, e] for p, e in ins) - flow[r_s, legal].sum()
            loss += res * res
            for p, e in ins:
                gflow[p, e] += 2 * res
            gflow[r_s, legal] -= 2 * res
        m = len(trajs)
        loss /= m
        gout = gflow * flow / m
        opt.step(params, _mlp_backward(params, x, h, gout))
        losses.append(float(loss))
        if on_batch is not None:
            on_batch(b, float(loss))
    model.losses = losses
    model.log_reward = log_reward
    model.meta = {"batches": cfg.n_batches, "seed": seed, "converged": _converged(losses)}
    return model


# ---------------------------------------------------------------------------
# Interventions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Factor:
    """Conditional table ``p(x_node | parents)`` with shape ``(*parent_cards, card)``."""

    node: int
    parents: tuple[int, ...]
    table: np.ndarray


def apply_intervention(
    factors: Mapping[int, Factor], intervened: set[int], replacements: Mapping[int, Factor]
) -> dict[int, Factor]:
    """Swap the factors of intervened nodes for the supplied distributions."""
    missing = [i for i in intervened if i not in replacements]
    if missing:
        raise KeyError(f"no replacement distribution for nodes {sorted(missing)}")
    unknown = set(intervened) - set(factors)
    if unknown:
        raise KeyError(f"unknown nodes {sorted(unknown)}")
    return {i: (replacements[i] if i in intervened else f) for i, f in factors.items()}


def joint_table(factors: Mapping[int, Factor], cards: Sequence[int]) -> np.ndarray:
    """Product of the factors over all assignments (array indexed by node values)."""
    joint = np.ones(tuple(cards))
    for idx in np.ndindex(*cards):
        p = 1.0
        for f in factors.values():
            p *= f.table[tuple(idx[q] for q in f.parents) + (idx[f.node],)]
        joint[idx] = p
    return joint
