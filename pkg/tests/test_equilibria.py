import numpy as np
import pytest

from semlang.equilibria import (
    VoronoiCode,
    bayes_decode,
    classify_equilibrium,
    code_speaker_rows,
    exhaustive_partition_optimum,
    lloyd_voronoi,
    voronoi_objective,
)
from semlang.game import PolicyPair, prepare
from semlang.world import build_copresheaf_index, default_prior, distance_matrix, make_world, random_world


def label_for(speaker):
    n = len(speaker)
    space = prepare(make_world([{"id": 0, "states": list(range(n))}]))
    k = len(speaker[0])
    pair = PolicyPair(np.asarray(speaker, float), np.full((k, n), 1 / n), space.pairs)
    return classify_equilibrium(pair, space, 0)


def test_classify_examples():
    assert label_for(np.eye(4)[[2, 0, 3, 1]]).kind == "separating"
    assert label_for([[1, 0]] * 4).kind == "pooling"
    lab = label_for([[1, 0], [1, 0], [0, 1], [0, 1]])
    assert lab.kind == "partial_pooling" and lab.counts == (2, 2)


def test_classify_tie_breaks_to_lowest_codeword():
    assert label_for([[0.5, 0.5], [0.5, 0.5]]).counts == (2, 0)


def test_classify_invariant_to_row_rescaling():
    rng = np.random.default_rng(0)
    sp = rng.dirichlet(np.ones(3), size=6)
    scaled = sp * rng.uniform(0.1, 10, size=(6, 1))
    scaled /= scaled.sum(axis=1, keepdims=True)
    assert label_for(sp) == label_for(scaled)


def world6(seed):
    return random_world(6, 1, 6, 6, seed, edge_prob=0.4, prior_concentration=2.0)


def test_lloyd_k_equals_n_is_identity():
    w = world6(3)
    idx = build_copresheaf_index(w, 0)
    code = lloyd_voronoi(w, idx, 6, 0)
    assert code.objective == 0.0
    assert sorted(len(c) for c in code.cells) == [1] * 6
    for k, cell in enumerate(code.cells):
        assert bayes_decode(code.encode(cell[0]), code) == cell[0]


def test_lloyd_k_one_is_global_medoid():
    w = world6(4)
    idx = build_copresheaf_index(w, 0)
    code = lloyd_voronoi(w, idx, 1, 0)
    d = distance_matrix(idx, default_prior(w, idx))
    p = np.asarray(w.contexts[0].state_prior)
    assert code.representatives[0] == idx.states[int(np.argmin(p @ d))]


@pytest.mark.parametrize("seed", range(20))
def test_lloyd_near_exhaustive_optimum(seed):
    w = world6(seed)
    idx = build_copresheaf_index(w, 0)
    code = lloyd_voronoi(w, idx, 2, seed)
    opt = exhaustive_partition_optimum(w, idx, 2)
    assert code.objective >= opt - 1e-12
    assert code.objective <= 1.05 * opt + 1e-12
    assert voronoi_objective(code, w, idx) == pytest.approx(code.objective, abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_lloyd_invariants(seed):
    w = random_world(10, 1, 10, 10, seed, edge_prob=0.3, alias_prob=0.2)
    idx = build_copresheaf_index(w, 0)
    k = 3
    code = lloyd_voronoi(w, idx, k, seed, n_init=1)
    flat = sorted(z for c in code.cells for z in c)
    assert flat == sorted(idx.states)
    assert all(len(c) > 0 for c in code.cells)
    assert all(a >= b - 1e-12 for a, b in zip(code.trace, code.trace[1:]))
    assert code.iterations <= len(idx) * k
    d = distance_matrix(idx, default_prior(w, idx))
    p = np.asarray(w.contexts[0].state_prior)
    for cell, rep in zip(code.cells, code.representatives):
        rows = [idx.index(z) for z in cell]
        costs = p[rows] @ d[rows]
        assert costs[idx.index(rep)] == pytest.approx(costs.min(), abs=1e-12)


def test_lloyd_rejects_large_k():
    w = world6(0)
    with pytest.raises(ValueError):
        lloyd_voronoi(w, build_copresheaf_index(w, 0), 7, 0)


def test_bayes_decode_examples():
    w = make_world([{"id": 0, "states": [0, 1, 2, 3]}])
    idx = build_copresheaf_index(w, 0)
    code = VoronoiCode(0, ((2,), (0, 1), (3,)), (2, 0, 3))
    assert bayes_decode(0, code) == 2
    with pytest.raises(KeyError):
        bayes_decode(3, code)
    # symmetric two-state cell: lowest-index member wins the medoid tie
    half = lloyd_voronoi(w, idx, 2, 0)
    for cell, rep in zip(half.cells, half.representatives):
        if len(cell) > 1:
            assert rep == min(cell)


def test_medoid_matches_exhaustive_scan():
    w = make_world([{"id": 0, "states": [0, 1, 2, 3], "edges": [(0, 1, 0.5), (1, 2, 0.6), (3, 2, 0.3)],
                     "state_prior": [0.1, 0.2, 0.3, 0.4]}])
    idx = build_copresheaf_index(w, 0)
    prior = default_prior(w, idx)
    from semlang.world import semantic_distance
    code = lloyd_voronoi(w, idx, 1, 0)
    scan = min(idx.states, key=lambda c: (sum(w.contexts[0].prior_of(z) * semantic_distance(z, c, idx, prior)
                                               for z in idx.states), c))
    assert code.representatives[0] == scan


def test_code_round_trip_and_rows():
    w = world6(1)
    idx = build_copresheaf_index(w, 0)
    code = lloyd_voronoi(w, idx, 3, 1)
    back = VoronoiCode.from_dict(code.to_dict())
    assert back.cells == code.cells and back.representatives == code.representatives
    rows = code_speaker_rows(code, idx)
    assert np.array_equal(rows.sum(axis=1), np.ones(6))
