"""Equilibrium classification and the partial-pooling Voronoi codec."""
from __future__ import annotations

import itertools
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from .game import GameSpace, PolicyPair
from .world import ContextId, CopresheafIndex, StateId, World, default_prior, distance_matrix


@dataclass(frozen=True)
class EquilibriumLabel:
    kind: str  # "separating" | "pooling" | "partial_pooling"
    counts: tuple[int, ...]  # states hard-assigned to each codeword


def classify_equilibrium(pair: PolicyPair, space: GameSpace, context: ContextId) -> EquilibriumLabel:
    """Label the speaker's hard assignment (row argmax, lowest codeword on ties)."""
    rows = pair.speaker[space.ctx_slices[context]]
    assign = np.argmax(rows, axis=1)
    counts = np.bincount(assign, minlength=pair.vocab_size)
    used = counts[counts > 0]
    if np.all(used == 1):
        kind = "separating"
    elif len(used) == 1:
        kind = "pooling"
    else:
        kind = "partial_pooling"
    return EquilibriumLabel(kind, tuple(int(c) for c in counts))


@dataclass(frozen=True)
class VoronoiCode:
    """Partition of a context's valid states into ``K`` cells with medoid representatives."""

    context: ContextId
    cells: tuple[tuple[StateId, ...], ...]
    representatives: tuple[StateId, ...]
    objective: float = 0.0
    iterations: int = 0
    trace: tuple[float, ...] = ()

    @property
    def K(self) -> int:
        return len(self.cells)

    def encode(self, z: StateId) -> int:
        for k, cell in enumerate(self.cells):
            if z in cell:
                return k
        raise KeyError(f"state {z} not in any cell")

    def to_dict(self) -> dict:
        return {
            "context": self.context,
            "cells": [list(c) for c in self.cells],
            "representatives": list(self.representatives),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> VoronoiCode:
        return cls(
            context=int(doc["context"]),
            cells=tuple(tuple(int(z) for z in c) for c in doc["cells"]),
            representatives=tuple(int(z) for z in doc["representatives"]),
        )


def _medoid(members: np.ndarray, weights: np.ndarray, dist: np.ndarray) -> tuple[int, float]:
    """Candidate (any state) minimizing the weighted distance from ``members``.

    Ties prefer a member of the cell, then the lowest index.
    """
    costs = weights[members] @ dist[members]
    low = costs.min()
    tied = np.flatnonzero(costs == low)
    inside = np.intersect1d(tied, members)
    best = int(inside[0] if len(inside) else tied[0])
    return best, float(low)


def partition_cost(cells: list[np.ndarray], weights: np.ndarray, dist: np.ndarray) -> float:
    return sum(_medoid(c, weights, dist)[1] for c in cells)


def lloyd_voronoi(world: World, idx: CopresheafIndex, K: int, seed: int, n_init: int = 10) -> VoronoiCode:
    """Lloyd iterations under semantic distance with medoid representatives.

    Assignment puts each state in the cell whose representative is closest
    (``semantic_distance(z, rep)``, lowest cell on ties); the update picks the
    prior-weighted medoid over all valid states. An empty cell takes the state
    farthest from its representative in the largest cell. The best of
    ``n_init`` seeded restarts is returned (earliest restart on ties).
    """
    n = len(idx)
    if not 1 <= K <= n:
        raise ValueError(f"K={K} must lie in [1, {n}]")
    if n_init < 1:
        raise ValueError("n_init must be positive")
    ctx = world.context(idx.context)
    weights = np.asarray(ctx.state_prior, dtype=np.float64)
    dist = distance_matrix(idx, default_prior(world, idx))
    best: VoronoiCode | None = None
    for child in np.random.SeedSequence(seed).spawn(n_init):
        code = _lloyd_once(idx, K, weights, dist, np.random.default_rng(child))
        if best is None or code.objective < best.objective:
            best = code
    return best


def _lloyd_once(
    idx: CopresheafIndex, K: int, weights: np.ndarray, dist: np.ndarray, rng: np.random.Generator
) -> VoronoiCode:
    n = len(idx)
    reps = np.sort(rng.choice(n, size=K, replace=False))
    assign = None
    trace = []
    it = 0
    for it in range(1, n * K + 1):
        new = np.argmin(dist[:, reps], axis=1)
        for k in range(K):
            if not np.any(new == k):
                sizes = np.bincount(new, minlength=K)
                big = int(np.argmax(sizes))
                members = np.flatnonzero(new == big)
                far = members[int(np.argmax(dist[members, reps[big]]))]
                new[far] = k
                reps[k] = far
        cells = [np.flatnonzero(new == k) for k in range(K)]
        meds = [_medoid(c, weights, dist) for c in cells]
        reps = np.array([m[0] for m in meds])
        trace.append(sum(m[1] for m in meds))
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
    cells = [np.flatnonzero(assign == k) for k in range(K)]
    return VoronoiCode(
        context=idx.context,
        cells=tuple(tuple(idx.states[j] for j in c) for c in cells),
        representatives=tuple(idx.states[j] for j in reps),
        objective=trace[-1],
        iterations=it,
        trace=tuple(trace),
    )


def voronoi_objective(code: VoronoiCode, world: World, idx: CopresheafIndex) -> float:
    """Prior-weighted within-cell distance to the cell representative."""
    ctx = world.context(idx.context)
    dist = distance_matrix(idx, default_prior(world, idx))
    total = 0.0
    for cell, rep in zip(code.cells, code.representatives):
        r = idx.index(rep)
        total += sum(ctx.prior_of(z) * dist[idx.index(z), r] for z in cell)
    return total


def exhaustive_partition_optimum(world: World, idx: CopresheafIndex, K: int) -> float:
    """Best objective over every partition of the valid states into ``K`` nonempty cells."""
    n = len(idx)
    ctx = world.context(idx.context)
    weights = np.asarray(ctx.state_prior, dtype=np.float64)
    dist = distance_matrix(idx, default_prior(world, idx))
    best = float("inf")
    # canonical labelings: first occurrence order of labels is 0, 1, 2, ...
    for labels in itertools.product(range(K), repeat=n - 1):
        lab = np.array((0, *labels))
        if len(set(lab.tolist())) != K:
            continue
        seen = []
        for x in lab.tolist():
            if x not in seen:
                seen.append(x)
        if seen != list(range(K)):
            continue
        cells = [np.flatnonzero(lab == k) for k in range(K)]
        best = min(best, partition_cost(cells, weights, dist))
    return best


def bayes_decode(u: int, code: VoronoiCode) -> StateId:
    """Representative (Bayesian estimator) of the cell indexed by codeword ``u``."""
    if not 0 <= u < code.K:
        raise KeyError(f"unknown codeword {u}")
    return code.representatives[u]


def code_speaker_rows(code: VoronoiCode, idx: CopresheafIndex) -> np.ndarray:
    """Deterministic speaker rows (states in index order) realizing the code."""
    rows = np.zeros((len(idx), code.K))
    for k, cell in enumerate(code.cells):
        for z in cell:
            rows[idx.index(z), k] = 1.0
    return rows
