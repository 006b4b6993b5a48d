import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semlang.world import (
    Prior,
    WorldError,
    build_copresheaf_index,
    conditioned_semantic_information,
    default_prior,
    distance_matrix,
    dumps_world,
    enriched_functor_holds,
    information_vector,
    make_world,
    random_world,
    semantic_distance,
    semantic_information,
    similarity,
    similarity_matrix,
    world_from_dict,
)


def one_context(states, edges=(), aliases=(), state_prior=None):
    return make_world([{"id": 0, "states": states, "edges": edges, "aliases": aliases, "state_prior": state_prior}])


def path_sum(edges, x, y):
    """Oracle: explicit enumeration of all directed paths x -> y."""
    if x == y:
        return 1.0
    return sum(w * path_sum(edges, m, y) for a, m, w in edges if a == x)


def test_single_state_identity():
    idx = build_copresheaf_index(one_context([0]), 0)
    assert idx.support(0) == {0}
    assert idx.r(0, 0) == 1.0


def test_chain_reach_product():
    idx = build_copresheaf_index(one_context([0, 1, 2], [(0, 1, 0.5), (1, 2, 0.4)]), 0)
    assert idx.r(0, 2) == pytest.approx(0.2, abs=1e-15)
    assert idx.r(2, 0) == 0.0


def test_isolated_states():
    idx = build_copresheaf_index(one_context([0, 1, 2]), 0)
    for x in range(3):
        assert idx.support(x) == {x}
    assert np.array_equal(idx.reach, np.eye(3))


def test_diamond_matches_path_enumeration():
    edges = [(0, 1, 0.6), (0, 2, 0.4), (1, 3, 1.0), (2, 3, 1.0), (3, 4, 0.5)]
    idx = build_copresheaf_index(one_context([0, 1, 2, 3, 4], edges), 0)
    for x, y in itertools.product(range(5), repeat=2):
        assert idx.r(x, y) == pytest.approx(min(path_sum(edges, x, y), 1.0), abs=1e-14)


def test_reach_bounded_by_one():
    # with sub-stochastic rows the path mass is a hitting probability, so the clamp only guards rounding
    edges = [(0, 1, 0.5), (0, 2, 0.5), (1, 2, 0.5), (1, 3, 0.5), (2, 3, 1.0)]
    idx = build_copresheaf_index(one_context([0, 1, 2, 3], edges), 0)
    assert idx.r(0, 3) == pytest.approx(path_sum(edges, 0, 3))
    assert idx.reach.max() <= 1.0


def test_rejects_cycles_and_empty_contexts():
    with pytest.raises(WorldError):
        one_context([0, 1, 2], [(0, 1, 0.5), (1, 2, 0.5), (2, 0, 0.5)])
    with pytest.raises(WorldError):
        one_context([])


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 8), st.integers(0, 10_000))
def test_random_edge_insertion_cycle_rejected(n, seed):
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    edges = [(int(order[i]), int(order[i + 1]), 0.5) for i in range(n - 1)]
    one_context(list(range(n)), edges)
    back = (int(order[-1]), int(order[int(rng.integers(0, n - 1))]), 0.5)
    with pytest.raises(WorldError):
        one_context(list(range(n)), edges + [back])


def test_semantic_information_examples():
    idx = build_copresheaf_index(one_context([0, 1], [(0, 1, 1.0)]), 0)
    prior = Prior({0: 1.0, 1: 0.5})
    # x itself has reach 1 and prior 1, successor contributes log 2
    assert semantic_information(0, idx, prior) == pytest.approx(math.log(2))
    solo = build_copresheaf_index(one_context([0]), 0)
    assert semantic_information(0, solo, Prior({0: 1.0})) == 0.0
    same = Prior({0: 1.0, 1: 1.0})
    assert semantic_information(0, idx, same) == 0.0


def test_semantic_information_requires_prior():
    idx = build_copresheaf_index(one_context([0, 1], [(0, 1, 1.0)]), 0)
    with pytest.raises(WorldError):
        semantic_information(0, idx, Prior({0: 1.0}))


def test_floor_flag():
    idx = build_copresheaf_index(one_context([0, 1], [(0, 1, 0.2)]), 0)
    prior = Prior({0: 0.5, 1: 0.8})
    raw = semantic_information(0, idx, prior)
    floored = semantic_information(0, idx, prior, floor=True)
    assert raw == pytest.approx(math.log(2) + 0.2 * math.log(0.25))
    assert floored == pytest.approx(math.log(2))


def test_conditioned_information():
    idx = build_copresheaf_index(one_context([0, 1, 2], [(0, 1, 0.5), (1, 2, 1.0)]), 0)
    prior = Prior({0: 0.2, 1: 0.3, 2: 0.5})
    assert conditioned_semantic_information(1, [], idx, prior) == semantic_information(1, idx, prior)
    assert conditioned_semantic_information(1, [1], idx, prior) == 0.0
    assert conditioned_semantic_information(2, [0], idx, prior) == 0.0
    # history {2}: H^0 = {0, 1, 2} loses 2, the rest is rescaled by 2.0 / 1.5
    s = 2.0 / 1.5
    expect = s * math.log(s / 0.2) + 0.5 * s * math.log(0.5 * s / 0.3)
    assert conditioned_semantic_information(0, [2], idx, prior) == pytest.approx(expect)


def test_similarity_examples():
    world = one_context([0, 1, 2, 3], [(0, 2, 0.5), (1, 2, 0.5)])
    idx = build_copresheaf_index(world, 0)
    assert similarity(0, 1, idx) == pytest.approx(1 / 3)
    assert similarity(0, 3, idx) == 0.0
    syn = build_copresheaf_index(one_context([0, 1, 2], [(0, 2, 0.5)], aliases=[(1, 0)]), 0)
    assert similarity(0, 1, syn) == 1.0
    Z = similarity_matrix(idx)
    for x, y in itertools.product(range(4), repeat=2):
        assert Z[x, y] == pytest.approx(similarity(x, y, idx), abs=1e-15)


def test_semantic_distance_examples():
    world = one_context([0, 1, 2, 3], [(0, 1, 0.5), (1, 2, 0.5)])
    idx = build_copresheaf_index(world, 0)
    prior = default_prior(world, idx)
    assert semantic_distance(0, 0, idx, prior) == 0.0
    assert semantic_distance(1, 0, idx, prior) == 0.0
    terms = [math.log(idx.r(0, y) / prior[y]) for y in (0, 1, 2)]
    assert semantic_distance(0, 3, idx, prior) == pytest.approx(sum(max(t, 1e-12) for t in terms))
    D = distance_matrix(idx, prior)
    for x, y in itertools.product(range(4), repeat=2):
        assert D[x, y] == pytest.approx(semantic_distance(x, y, idx, prior), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 100_000))
def test_distance_zero_iff_support_containment(seed):
    world = random_world(10, 1, 4, 10, seed, edge_prob=0.3, alias_prob=0.2)
    idx = build_copresheaf_index(world, 0)
    prior = default_prior(world, idx)
    for z, zh in itertools.product(idx.states, repeat=2):
        zero = semantic_distance(z, zh, idx, prior) == 0.0
        assert zero == (idx.support(z) <= idx.support(zh))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 100_000))
def test_similarity_properties(seed):
    world = random_world(10, 1, 2, 10, seed, edge_prob=0.3, alias_prob=0.2)
    idx = build_copresheaf_index(world, 0)
    Z = similarity_matrix(idx)
    assert np.all((Z >= 0) & (Z <= 1))
    assert np.allclose(Z, Z.T, atol=1e-15)
    assert np.allclose(np.diag(Z), 1.0)


def test_enriched_functor_200_seeds():
    for seed in range(200):
        world = random_world(12, 1, 2, 12, seed, edge_prob=0.3, alias_prob=0.1)
        assert enriched_functor_holds(build_copresheaf_index(world, 0))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.floats(1.0, 3.0))
def test_reach_monotone_in_edge_weight(seed, factor):
    world = random_world(8, 1, 3, 8, seed, edge_prob=0.4)
    c = world.contexts[0]
    if not c.edges:
        return
    out = {}
    for x, _, w in c.edges:
        out[x] = out.get(x, 0.0) + w
    k = int(np.random.default_rng(seed).integers(len(c.edges)))
    x, y, w = c.edges[k]
    bumped = min(w * factor, 1.0, w + (1.0 - out[x]))
    edges = list(c.edges)
    edges[k] = (x, y, bumped)
    raw = lambda e: np.array([[path_sum(e, a, b) for b in c.states] for a in c.states])
    assert np.all(raw(edges) >= raw(list(c.edges)) - 1e-15)
    lo = build_copresheaf_index(world, 0).reach
    hi = build_copresheaf_index(one_context(list(c.states), edges), 0).reach
    assert np.all(hi >= lo - 1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000))
def test_information_invariant_under_relabeling(seed):
    world = random_world(9, 1, 3, 9, seed, edge_prob=0.3, alias_prob=0.2)
    c = world.contexts[0]
    perm = np.random.default_rng(seed).permutation(100)[: len(world.states)]
    rel = {z: int(perm[z]) for z in world.states}
    relabeled = one_context(
        [rel[z] for z in c.states],
        [(rel[x], rel[y], w) for x, y, w in c.edges],
        [(rel[v], rel[k]) for v, k in c.aliases],
        list(c.state_prior),
    )
    a = build_copresheaf_index(world, 0)
    b = build_copresheaf_index(relabeled, 0)
    sa = information_vector(a, default_prior(world, a))
    pb = default_prior(relabeled, b)
    for i, z in enumerate(a.states):
        assert semantic_information(rel[z], b, pb) == pytest.approx(sa[i], abs=1e-12)


def test_default_prior_positive_and_normalised():
    world = random_world(20, 3, 5, 15, 7, edge_prob=0.3)
    for cid in world.context_ids:
        idx = build_copresheaf_index(world, cid)
        p = default_prior(world, idx).vector(idx)
        assert np.all(p > 0)
        assert p.sum() == pytest.approx(1.0)


def test_json_round_trip_bit_exact():
    world = random_world(15, 4, 3, 12, 3, edge_prob=0.4, alias_prob=0.2, prior_concentration=0.7)
    text = dumps_world(world)
    again = world_from_dict(json.loads(text))
    assert again == world
    assert dumps_world(again) == text


@pytest.mark.parametrize(
    "doc",
    [
        {"id": 0, "states": [0, 1], "edges": [(0, 1, 1.5)]},
        {"id": 0, "states": [0, 1], "edges": [(0, 1, 0.0)]},
        {"id": 0, "states": [0, 1], "state_prior": [0.7, 0.7]},
        {"id": 0, "states": [0, 1], "edges": [(0, 3, 0.5)]},
    ],
)
def test_invalid_worlds(doc):
    with pytest.raises(WorldError):
        make_world([doc])
