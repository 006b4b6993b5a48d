"""Syntactic space, contexts and copresheaf-based semantic measures.

A :class:`World` holds a finite set of states and, per context, the valid
states, a weighted acyclic extension graph and a state prior. The extension
graph induces a preorder; :func:`build_copresheaf_index` turns it into the
weighted reachability table ``reach(x, y) = pi(y | x, c)`` from which semantic
information, similarity and distance are computed.

Equivalent objects of the preorder (syntactic variants with identical
meaning) are declared as aliases rather than as 2-cycles so the edge set stays
acyclic.
"""
from __future__ import annotations

import json
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from pathlib import Path

import numpy as np

from . import kernels

StateId = int
ContextId = int

PRIOR_FLOOR = 1e-12


class WorldError(ValueError):
    """Raised for structurally invalid worlds or queries."""


@dataclass(frozen=True)
class Context:
    id: ContextId
    prior: float
    states: tuple[StateId, ...]
    state_prior: tuple[float, ...]
    edges: tuple[tuple[StateId, StateId, float], ...] = ()
    aliases: tuple[tuple[StateId, StateId], ...] = ()

    def prior_of(self, z: StateId) -> float:
        return self.state_prior[self.states.index(z)]


@dataclass(frozen=True)
class World:
    """Finite syntactic space shared by speaker and listener."""

    states: tuple[StateId, ...]
    contexts: tuple[Context, ...]
    _by_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_by_id", {c.id: c for c in self.contexts})
        self.validate()

    def context(self, cid: ContextId) -> Context:
        try:
            return self._by_id[cid]
        except KeyError:
            raise WorldError(f"unknown context {cid!r}") from None

    @property
    def context_ids(self) -> tuple[ContextId, ...]:
        return tuple(c.id for c in self.contexts)

    def validate(self) -> None:
        if not self.contexts:
            raise WorldError("world has no contexts")
        universe = set(self.states)
        if len(universe) != len(self.states):
            raise WorldError("duplicate state ids")
        if len(self._by_id) != len(self.contexts):
            raise WorldError("duplicate context ids")
        total = math.fsum(c.prior for c in self.contexts)
        if abs(total - 1.0) > 1e-9:
            raise WorldError(f"context priors sum to {total}, expected 1")
        for c in self.contexts:
            _validate_context(c, universe)


def _validate_context(c: Context, universe: set[StateId]) -> None:
    if not c.states:
        raise WorldError(f"context {c.id} has no valid states")
    valid = set(c.states)
    if len(valid) != len(c.states):
        raise WorldError(f"context {c.id} lists a state twice")
    if not valid <= universe:
        raise WorldError(f"context {c.id} references unknown states")
    if c.prior < 0:
        raise WorldError(f"context {c.id} has negative prior")
    if len(c.state_prior) != len(c.states):
        raise WorldError(f"context {c.id}: state prior length mismatch")
    if any(p < 0 for p in c.state_prior):
        raise WorldError(f"context {c.id}: negative state prior")
    total = math.fsum(c.state_prior)
    if abs(total - 1.0) > 1e-9:
        raise WorldError(f"context {c.id}: state prior sums to {total}")
    out_mass: dict[StateId, float] = {}
    seen: set[tuple[StateId, StateId]] = set()
    for x, y, w in c.edges:
        if x not in valid or y not in valid:
            raise WorldError(f"context {c.id}: edge ({x}, {y}) leaves valid states")
        if x == y:
            raise WorldError(f"context {c.id}: self-loop on {x}")
        if not 0.0 < w <= 1.0:
            raise WorldError(f"context {c.id}: edge weight {w} outside (0, 1]")
        if (x, y) in seen:
            raise WorldError(f"context {c.id}: duplicate edge ({x}, {y})")
        seen.add((x, y))
        out_mass[x] = out_mass.get(x, 0.0) + w
    for x, m in out_mass.items():
        if m > 1.0 + 1e-12:
            raise WorldError(f"context {c.id}: outgoing weight of {x} is {m} > 1")
    _topological_order(c)
    variants = set()
    for v, canon in c.aliases:
        if v not in valid or canon not in valid or v == canon:
            raise WorldError(f"context {c.id}: bad alias ({v}, {canon})")
        if v in variants:
            raise WorldError(f"context {c.id}: {v} aliased twice")
        variants.add(v)
    canons = {canon for _, canon in c.aliases}
    if canons & variants:
        raise WorldError(f"context {c.id}: alias chains are not allowed")
    if any(x in variants or y in variants for x, y, _ in c.edges):
        raise WorldError(f"context {c.id}: aliased states cannot carry edges")


def _topological_order(c: Context) -> list[StateId]:
    ts: TopologicalSorter = TopologicalSorter()
    for z in c.states:
        ts.add(z)
    for x, y, _ in c.edges:
        ts.add(y, x)
    try:
        return list(ts.static_order())
    except CycleError as err:
        raise WorldError(f"context {c.id}: extension edges contain a cycle") from err


# ---------------------------------------------------------------------------
# Copresheaf index
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CopresheafIndex:
    """Weighted reachability ``h^x`` for every valid state of one context.

    ``reach[i, j]`` is ``pi(states[j] | states[i], c)`` clamped to [0, 1];
    the support ``H^x`` is the set of states with positive reach.
    """

    context: ContextId
    states: tuple[StateId, ...]
    reach: np.ndarray
    pos: dict = field(repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.states)

    def index(self, x: StateId) -> int:
        try:
            return self.pos[x]
        except KeyError:
            raise WorldError(f"state {x} not valid in context {self.context}") from None

    def r(self, x: StateId, y: StateId) -> float:
        return float(self.reach[self.index(x), self.index(y)])

    def support(self, x: StateId) -> frozenset[StateId]:
        row = self.reach[self.index(x)]
        return frozenset(self.states[j] for j in np.flatnonzero(row > 0))

    def h(self, x: StateId) -> dict[StateId, float]:
        row = self.reach[self.index(x)]
        return {self.states[j]: float(row[j]) for j in np.flatnonzero(row > 0)}

    def leq(self, x: StateId, y: StateId) -> bool:
        return self.r(x, y) > 0

    def hom(self, x: StateId, y: StateId) -> float:
        """Hom value between copresheaves: mass of ``h^x`` on ``H^y``."""
        i, j = self.index(x), self.index(y)
        return float(self.reach[i, self.reach[j] > 0].sum())

    def support_matrix(self) -> np.ndarray:
        return self.reach > 0

    def classes(self) -> list[int]:
        """Label per state; equal labels mean identical copresheaves."""
        labels: dict[bytes, int] = {}
        out = []
        for i in range(len(self.states)):
            key = self.reach[i].tobytes()
            out.append(labels.setdefault(key, len(labels)))
        return out


def build_copresheaf_index(world: World, context: ContextId) -> CopresheafIndex:
    """Reach table of one context: sum over paths of edge-weight products, clamped to 1.

    Aliased states share the row and column of their canonical state.
    """
    c = world.context(context)
    canon = {v: k for v, k in c.aliases}
    base = [z for z in c.states if z not in canon]
    bpos = {z: i for i, z in enumerate(base)}
    order = np.array([bpos[z] for z in _topological_order(c) if z in bpos], dtype=np.int64)
    n = len(base)
    out: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    for x, y, w in c.edges:
        out[bpos[x]].append((bpos[y], float(w)))
    indptr = np.zeros(n + 1, dtype=np.int64)
    indices, weights = [], []
    for i, row in enumerate(out):
        row.sort()
        indptr[i + 1] = indptr[i] + len(row)
        indices.extend(j for j, _ in row)
        weights.extend(w for _, w in row)
    raw = kernels.reach_matrix(
        n, order, indptr, np.asarray(indices, dtype=np.int64), np.asarray(weights, dtype=np.float64)
    )
    base_reach = np.minimum(raw, 1.0)
    cls = np.array([bpos[canon.get(z, z)] for z in c.states], dtype=np.int64)
    reach = base_reach[np.ix_(cls, cls)].copy()
    reach.setflags(write=False)
    return CopresheafIndex(
        context=context,
        states=c.states,
        reach=reach,
        pos={z: i for i, z in enumerate(c.states)},
    )


def enriched_functor_holds(idx: CopresheafIndex, tol: float = 1e-12) -> bool:
    """Check ``L(x, y) <= L_hat(h^x, h^y)`` for every ordered pair.

    ``L(x, y)`` is the reach weight (zero when ``x`` does not precede ``y``);
    ``L_hat`` is 1 on comparable pairs and the copresheaf hom value otherwise.
    """
    r = idx.reach
    supp = r > 0
    hom = r @ supp.T.astype(np.float64)
    lhat = np.where(supp, 1.0, hom)
    if np.any(r > lhat + tol):
        return False
    return bool(np.all(np.diag(r) == 1.0))


# ---------------------------------------------------------------------------
# Priors and semantic measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Prior:
    """Marginal ``pi(y)`` over expressions used as the reference measure."""

    values: Mapping[StateId, float]

    def __getitem__(self, y: StateId) -> float:
        try:
            return self.values[y]
        except KeyError:
            raise WorldError(f"prior has no entry for state {y}") from None

    def vector(self, idx: CopresheafIndex) -> np.ndarray:
        return np.array([self[y] for y in idx.states], dtype=np.float64)


def default_prior(world: World, idx: CopresheafIndex) -> Prior:
    """Normalised incoming reach mass: ``pi(y) ∝ sum_x pi(x|c) reach(x, y)``."""
    c = world.context(idx.context)
    mass = np.asarray(c.state_prior, dtype=np.float64) @ idx.reach
    mass = np.maximum(mass, PRIOR_FLOOR)
    mass = mass / mass.sum()
    return Prior({y: float(m) for y, m in zip(idx.states, mass)})


def _terms(x: StateId, idx: CopresheafIndex, prior: Prior) -> tuple[np.ndarray, np.ndarray]:
    row = idx.reach[idx.index(x)]
    js = np.flatnonzero(row > 0)
    w = row[js]
    ref = np.array([prior[idx.states[j]] for j in js], dtype=np.float64)
    if np.any(ref <= 0):
        raise WorldError("prior must be positive on the copresheaf support")
    return w, np.log(w / ref)


def per_term_information(x: StateId, idx: CopresheafIndex, prior: Prior) -> dict[StateId, float]:
    """``S(y; x | c) = log(pi(y|x,c) / pi(y))`` for every ``y`` in ``H^x``."""
    row = idx.reach[idx.index(x)]
    js = np.flatnonzero(row > 0)
    _, logs = _terms(x, idx, prior)
    return {idx.states[j]: float(v) for j, v in zip(js, logs)}


def semantic_information(
    x: StateId, idx: CopresheafIndex, prior: Prior, floor: bool = False
) -> float:
    """KL-style information carried by the copresheaf of ``x`` (nats).

    With ``floor=True`` every term is clipped at zero before summing.
    """
    w, logs = _terms(x, idx, prior)
    terms = w * logs
    if floor:
        terms = np.maximum(terms, 0.0)
    return float(terms.sum())


def conditioned_semantic_information(
    z: StateId,
    history: Sequence[StateId],
    idx: CopresheafIndex,
    prior: Prior,
    floor: bool = False,
) -> float:
    """Information of ``z`` that is not already entailed by the history.

    States reachable from any history state are removed from ``H^z``; the
    remaining reach weights are rescaled so the copresheaf keeps its total
    mass. Returns 0 when ``z`` itself is in (or entailed by) the history.
    """
    if not history:
        return semantic_information(z, idx, prior, floor=floor)
    row = idx.reach[idx.index(z)]
    covered = np.zeros(len(idx), dtype=bool)
    for h in history:
        covered |= idx.reach[idx.index(h)] > 0
    keep = (row > 0) & ~covered
    if not keep.any():
        return 0.0
    scale = row[row > 0].sum() / row[keep].sum()
    w = row[keep] * scale
    ref = np.array([prior[idx.states[j]] for j in np.flatnonzero(keep)])
    terms = w * np.log(w / ref)
    if floor:
        terms = np.maximum(terms, 0.0)
    return float(terms.sum())


def information_vector(idx: CopresheafIndex, prior: Prior, floor: bool = False) -> np.ndarray:
    """Semantic information of every valid state, in index order."""
    return np.array([semantic_information(z, idx, prior, floor=floor) for z in idx.states])


def similarity(x: StateId, y: StateId, idx: CopresheafIndex) -> float:
    """Geometric-mean overlap of the copresheaves of ``x`` and ``y``."""
    rx = idx.reach[idx.index(x)]
    ry = idx.reach[idx.index(y)]
    both = (rx > 0) & (ry > 0)
    if not both.any():
        return 0.0
    val = math.sqrt((rx[both].sum() / rx.sum()) * (ry[both].sum() / ry.sum()))
    return min(val, 1.0)


def similarity_matrix(idx: CopresheafIndex) -> np.ndarray:
    r = idx.reach
    supp = (r > 0).astype(np.float64)
    shared = r @ supp.T  # shared[i, j] = mass of h^i on H^j
    frac = shared / r.sum(axis=1, keepdims=True)
    z = np.sqrt(frac * frac.T)
    return np.minimum(z, 1.0)


def semantic_distance(
    z: StateId,
    z_hat: StateId,
    idx: CopresheafIndex,
    prior: Prior,
    min_weight: float = 1e-12,
) -> float:
    """Weighted Hamming distance: information of ``H^z`` not covered by ``H^z_hat``.

    Each uncovered state ``Y`` contributes ``max(S(Y; z), min_weight)`` so the
    distance vanishes exactly when ``H^z ⊆ H^z_hat``. Not symmetric.
    """
    rz = idx.reach[idx.index(z)]
    rh = idx.reach[idx.index(z_hat)]
    miss = (rz > 0) & ~(rh > 0)
    if not miss.any():
        return 0.0
    ref = np.array([prior[idx.states[j]] for j in np.flatnonzero(miss)])
    return float(np.maximum(np.log(rz[miss] / ref), min_weight).sum())


def distance_matrix(idx: CopresheafIndex, prior: Prior, min_weight: float = 1e-12) -> np.ndarray:
    """``D[i, j] = semantic_distance(states[i], states[j])``."""
    r = idx.reach
    supp = r > 0
    ref = prior.vector(idx)
    with np.errstate(divide="ignore"):
        logs = np.log(np.where(supp, r, 1.0) / ref)
    weights = np.where(supp, np.maximum(logs, min_weight), 0.0)
    return weights @ (~supp).T.astype(np.float64)


# ---------------------------------------------------------------------------
# Construction helpers
# ---------------------------------------------------------------------------


def make_world(
    contexts: Iterable[Mapping],
    states: Sequence[StateId] | None = None,
) -> World:
    """Build a world from plain mappings (the JSON layout).

    Each mapping has ``id``, ``states`` and optionally ``prior`` (default:
    uniform over contexts), ``state_prior`` (default: uniform), ``edges`` and
    ``aliases``.
    """
    specs = list(contexts)
    n_ctx = len(specs)
    ctxs = []
    for spec in specs:
        valid = tuple(int(z) for z in spec["states"])
        if not valid:
            raise WorldError(f"context {spec['id']} has no valid states")
        sp = spec.get("state_prior")
        if sp is None:
            sp = [1.0 / len(valid)] * len(valid)
        ctxs.append(
            Context(
                id=int(spec["id"]),
                prior=float(spec.get("prior", 1.0 / n_ctx)),
                states=valid,
                state_prior=tuple(float(p) for p in sp),
                edges=tuple((int(x), int(y), float(w)) for x, y, w in spec.get("edges", ())),
                aliases=tuple((int(v), int(k)) for v, k in spec.get("aliases", ())),
            )
        )
    if states is None:
        states = sorted({z for c in ctxs for z in c.states})
    return World(states=tuple(int(z) for z in states), contexts=tuple(ctxs))


def world_to_dict(world: World) -> dict:
    return {
        "states": list(world.states),
        "contexts": [
            {
                "id": c.id,
                "prior": c.prior,
                "states": list(c.states),
                "state_prior": list(c.state_prior),
                "edges": [[x, y, w] for x, y, w in c.edges],
                "aliases": [[v, k] for v, k in c.aliases],
            }
            for c in world.contexts
        ],
    }


def world_from_dict(doc: Mapping) -> World:
    return make_world(doc["contexts"], states=doc["states"])


def dumps_world(world: World) -> str:
    # float repr is the shortest string that round-trips bit-exactly (<= 17 significant digits)
    return json.dumps(world_to_dict(world), indent=1, sort_keys=True)


def save_world(world: World, path: str | Path) -> None:
    Path(path).write_text(dumps_world(world) + "\n")


def load_world(path: str | Path) -> World:
    return world_from_dict(json.loads(Path(path).read_text()))


def random_world(
    n_states: int,
    n_contexts: int,
    min_states: int,
    max_states: int,
    seed: int,
    edge_prob: float = 0.15,
    alias_prob: float = 0.0,
    prior_concentration: float | None = None,
) -> World:
    """Sample a world: each context picks a uniform random subset of states.

    Args:
        n_states: size of the syntactic space.
        n_contexts: number of contexts (uniform context prior).
        min_states, max_states: inclusive bounds on valid states per context.
        seed: RNG seed.
        edge_prob: probability of an extension edge between two valid states
            (oriented along a random order, so the graph is acyclic).
        alias_prob: probability that a leaf-free state becomes a syntactic
            variant of another state.
        prior_concentration: Dirichlet concentration for ``pi(z|c)``; ``None``
            gives a uniform state prior.
    """
    if not 1 <= min_states <= max_states <= n_states:
        raise WorldError("need 1 <= min_states <= max_states <= n_states")
    rng = np.random.default_rng(seed)
    specs = []
    for cid in range(n_contexts):
        size = int(rng.integers(min_states, max_states + 1))
        valid = sorted(int(z) for z in rng.choice(n_states, size=size, replace=False))
        perm = list(rng.permutation(valid))
        variants: dict[int, int] = {}
        if alias_prob > 0 and size > 1:
            for z in perm[1:]:
                if rng.random() < alias_prob:
                    choices = [k for k in perm if k != z and k not in variants and k not in variants.values()]
                    if choices and z not in variants.values():
                        variants[int(z)] = int(choices[int(rng.integers(len(choices)))])
        plain = [z for z in perm if z not in variants]
        edges = []
        for i, x in enumerate(plain):
            targets = [y for y in plain[i + 1:] if rng.random() < edge_prob]
            if not targets:
                continue
            w = rng.uniform(0.1, 1.0, size=len(targets))
            if w.sum() > 1.0:
                w = w / w.sum()
            edges.extend((int(x), int(y), float(wi)) for y, wi in zip(targets, w))
        if prior_concentration is None:
            sp = [1.0 / size] * size
        else:
            sp = rng.dirichlet([prior_concentration] * size)
            sp = list(sp / sp.sum())
        specs.append(
            {
                "id": cid,
                "states": valid,
                "state_prior": sp,
                "edges": edges,
                "aliases": sorted(variants.items()),
            }
        )
    return make_world(specs, states=range(n_states))
