import itertools
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semlang import kernels
from semlang.causal import (
    DagState,
    Factor,
    FlowModel,
    GflowConfig,
    Scm,
    apply_intervention,
    build_mdp,
    chain_scm,
    dag_key,
    dag_score,
    exact_posterior,
    flow_matching_loss,
    from_matrix,
    is_acyclic,
    joint_table,
    legal_mask,
    load_data,
    log_reward_table,
    posterior_estimate,
    random_er_scm,
    sample_dag,
    sample_scm,
    save_data,
    terminal_distribution,
    to_matrix,
    train_gflownet,
)


def balanced_flows(n, log_reward):
    """Exact flows for rewards ``exp(log_reward)`` under a uniform backward policy."""
    mdp = build_mdp(n)
    reward = np.exp(log_reward)
    n_parents = np.diff(mdp.in_ptr)
    state_flow = np.zeros(mdp.n_states)
    flow = np.zeros(len(mdp.act_child))
    for s in range(mdp.n_states - 1, -1, -1):
        lo, hi = mdp.act_ptr[s], mdp.act_ptr[s + 1]
        flow[hi - 1] = reward[s]
        for a in range(lo, hi - 1):
            c = mdp.act_child[a]
            flow[a] = state_flow[c] / n_parents[c]
        state_flow[s] = flow[lo:hi].sum()
    return np.log(flow)


def table_model(n, log_flow):
    return FlowModel(n=n, kind="table", log_flow=np.asarray(log_flow, dtype=np.float64))


# --- SCM -------------------------------------------------------------------


def test_noise_only_variance():
    x = sample_scm(Scm(3, np.zeros((3, 3)), 0.01), 10_000, 0)
    var = x.var(axis=0)
    assert np.all((var >= 0.009) & (var <= 0.011))


def test_chain_child_variance_doubles():
    sigma2 = 0.01
    x = sample_scm(chain_scm(2, 1.0, sigma2), 50_000, 1)
    assert abs(x[:, 1].var() / (2 * sigma2) - 1) < 0.05


def test_sampling_is_bit_reproducible():
    scm = random_er_scm(4, 3, 2)
    a, b = sample_scm(scm, 100, 7), sample_scm(scm, 100, 7)
    assert a.tobytes() == b.tobytes()


def test_cyclic_weights_rejected():
    w = np.array([[0, 1.0], [1.0, 0]])
    with pytest.raises(ValueError):
        Scm(2, w, 0.01)


def test_er_zero_edges_is_empty():
    assert not random_er_scm(5, 0, 3).adjacency.any()


def test_er_mean_edge_count():
    counts = [random_er_scm(5, 5, s).adjacency.sum() for s in range(1000)]
    assert 4.7 <= np.mean(counts) <= 5.3


def test_er_weight_moments():
    w = []
    seed = 0
    while len(w) < 10_000:
        scm = random_er_scm(5, 10, seed)
        w.extend(scm.weights[scm.adjacency].tolist())
        seed += 1
    w = np.array(w[:10_000])
    assert abs(w.mean()) < 0.05 and abs(w.var() - 1) < 0.05


def test_er_is_upper_triangular():
    for s in range(20):
        assert not np.tril(random_er_scm(5, 6, s).adjacency).any()


def test_data_csv_round_trip(tmp_path):
    x = sample_scm(chain_scm(), 20, 0)
    save_data(x, tmp_path / "d.csv")
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "x0,x1,x2"
    assert np.array_equal(load_data(tmp_path / "d.csv"), x)


# --- DAG states and MDP -------------------------------------------------------


@pytest.mark.parametrize("n,count", [(1, 1), (2, 3), (3, 25), (4, 543)])
def test_dag_counts(n, count):
    assert build_mdp(n).n_states == count


def test_mask_matches_brute_force_on_three_nodes():
    n = 3
    for bits in build_mdp(n).states:
        adj = to_matrix(bits, n)
        mask = legal_mask(bits, n)
        for i, j in itertools.product(range(n), repeat=2):
            cand = adj.copy()
            cand[i, j] = True
            expected = i != j and not adj[i, j] and is_acyclic(cand)
            assert mask[i, j] == expected


def test_dag_state_rejects_illegal_edges():
    s = DagState(3, 0).add(0, 1).add(1, 2)
    with pytest.raises(ValueError):
        s.add(2, 0)
    with pytest.raises(ValueError):
        s.add(0, 1)
    with pytest.raises(ValueError):
        s.terminate().add(0, 2)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), max_size=12))
def test_every_state_stays_acyclic(edges):
    s = DagState(4, 0)
    for i, j in edges:
        if s.mask[i, j]:
            s = s.add(i, j)
        assert is_acyclic(s.adjacency)


def test_key_is_row_major():
    assert dag_key(from_matrix(chain_scm().adjacency), 3) == "010001000"


# --- scores --------------------------------------------------------------------


def test_empty_graph_beats_chain_on_noise():
    x = sample_scm(Scm(3, np.zeros((3, 3)), 0.01), 100, 0)
    empty = DagState(3, 0, True)
    chain = DagState(3, from_matrix(chain_scm().adjacency), True)
    assert dag_score(empty, x) > dag_score(chain, x)


@pytest.mark.parametrize("seed", range(5))
def test_true_chain_is_argmax(seed):
    x = sample_scm(chain_scm(), 100, seed)
    post = exact_posterior(3, log_reward_table(3, x))
    assert len(post.probs) == 25
    assert post.mode() == "010001000"


def test_score_is_pure_and_positive():
    x = sample_scm(chain_scm(), 100, 0)
    s = DagState(3, from_matrix(chain_scm().adjacency), True)
    assert dag_score(s, x) == dag_score(s, x.copy()) > 0


def test_score_requires_terminal_state():
    with pytest.raises(ValueError):
        dag_score(DagState(3, 0), np.zeros((10, 3)))


def test_semantic_mode_uses_supplied_information():
    s = DagState(2, 0b10, True)
    assert dag_score(s, mode="A", semantic=lambda b: 0.5 * b) == pytest.approx(math.e)


def test_exact_posterior_sums_to_one():
    post = exact_posterior(3, log_reward_table(3, sample_scm(chain_scm(), 100, 0)))
    assert abs(sum(post.probs.values()) - 1) < 1e-9


# --- flow matching --------------------------------------------------------------


def test_single_node_balanced_loss_is_zero():
    log_r = np.array([math.log(0.3)])
    model = table_model(1, log_r)
    assert flow_matching_loss(model, [[0]], log_r) == 0.0


def test_two_node_single_mismatch_gives_delta_squared():
    mdp = build_mdp(2)
    log_r = np.log([0.2, 0.5, 0.3])
    f = balanced_flows(2, log_r)
    delta = 0.05
    s1 = mdp.states.index(0b0010)  # edge 0 -> 1
    a = next(a for a in range(mdp.act_ptr[0], mdp.act_ptr[1]) if mdp.act_child[a] == s1)
    f[a] = math.log(math.exp(f[a]) + delta)
    loss = flow_matching_loss(table_model(2, f), [[0, s1]], log_r)
    assert loss == pytest.approx(delta**2, rel=1e-9)


def relabel_bits(bits, perm, n):
    adj = to_matrix(bits, n)
    out = np.zeros_like(adj)
    for i, j in zip(*np.nonzero(adj)):
        out[perm[i], perm[j]] = True
    return from_matrix(out)


def test_loss_invariant_under_relabeling():
    n, perm = 3, [1, 2, 0]
    mdp = build_mdp(n)
    index = {b: s for s, b in enumerate(mdp.states)}
    rng = np.random.default_rng(0)
    log_r = rng.normal(size=mdp.n_states)
    f = rng.normal(size=len(mdp.act_child))
    # move every state, action flow and reward to its relabelled position
    state_map = np.array([index[relabel_bits(b, perm, n)] for b in mdp.states])
    f2 = np.empty_like(f)
    log_r2 = np.empty_like(log_r)
    for s in range(mdp.n_states):
        t = state_map[s]
        log_r2[t] = log_r[s]
        for a in range(mdp.act_ptr[s], mdp.act_ptr[s + 1]):
            c = mdp.act_child[a]
            if c < 0:
                b = mdp.act_ptr[t + 1] - 1
            else:
                b = next(b for b in range(mdp.act_ptr[t], mdp.act_ptr[t + 1]) if mdp.act_child[b] == state_map[c])
            f2[b] = f[a]
    u = rng.random((50, 3))
    visited, lengths = kernels.rollout_tabular(f, mdp.act_ptr, mdp.act_child, u, 0.1, 1.0)
    trajs = [visited[i, : lengths[i]].tolist() for i in range(50)]
    moved = [[int(state_map[s]) for s in t] for t in trajs]
    a = flow_matching_loss(table_model(n, f), trajs, log_r)
    b = flow_matching_loss(table_model(n, f2), moved, log_r2)
    assert a == pytest.approx(b, rel=1e-12)


@pytest.mark.parametrize("n", [2, 3])
def test_zero_loss_flows_sample_proportional_to_reward(n):
    mdp = build_mdp(n)
    log_r = np.random.default_rng(n).normal(size=mdp.n_states)
    f = balanced_flows(n, log_r)
    model = table_model(n, f)
    u = np.random.default_rng(0).random((200, max(mdp.max_len, 1)))
    visited, lengths = kernels.rollout_tabular(f, mdp.act_ptr, mdp.act_child, u, 0.0, 1.0)
    trajs = [visited[i, : lengths[i]].tolist() for i in range(200)]
    assert flow_matching_loss(model, trajs, log_r) < 1e-24
    target = exact_posterior(n, log_r)
    assert terminal_distribution(model).l1(target) < 1e-12


# --- training and sampling ---------------------------------------------------------


@pytest.fixture(scope="module")
def chain_model():
    data = sample_scm(chain_scm(), 100, 0)
    start = time.perf_counter()
    model = train_gflownet(data, 3, GflowConfig(n_batches=50_000), seed=0)
    return data, model, time.perf_counter() - start


def test_trained_chain_posterior_matches_enumeration(chain_model):
    data, model, elapsed = chain_model
    exact = exact_posterior(3, log_reward_table(3, data))
    assert model.final_loss < 1e-3
    assert model.meta["converged"]
    assert terminal_distribution(model).l1(exact) < 0.05
    assert posterior_estimate(model, 10_000, 1).l1(exact) < 0.05
    assert elapsed < 300


def test_rollouts_stop_once_stop_probability_exceeds_mu(chain_model):
    _, model, _ = chain_model
    mdp = build_mdp(3)
    for flows in (model.log_flow, np.zeros_like(model.log_flow)):
        u = np.random.default_rng(1).random((500, mdp.max_len))
        visited, lengths = kernels.rollout_tabular(flows, mdp.act_ptr, mdp.act_child, u, 0.1, 0.4)
        m = table_model(3, flows)
        for i in range(500):
            for s in visited[i, : lengths[i] - 1]:
                assert m.stop_probability(mdp.states[s]) <= 0.4


def test_estimates_converge(chain_model):
    _, model, _ = chain_model
    assert posterior_estimate(model, 10_000, 2).l1(posterior_estimate(model, 100_000, 3)) < 0.02


def test_training_is_seed_deterministic():
    data = sample_scm(chain_scm(), 100, 0)
    a = train_gflownet(data, 3, GflowConfig(n_batches=200), seed=4)
    b = train_gflownet(data, 3, GflowConfig(n_batches=200), seed=4)
    assert a.log_flow.tobytes() == b.log_flow.tobytes()
    assert not a.meta["converged"]


def test_single_trajectory_model_is_a_point_mass():
    mdp = build_mdp(3)
    target = [0]
    for e in (1, 5):  # 0 -> 1 then 1 -> 2
        s = target[-1]
        target.append(next(int(mdp.act_child[a]) for a in range(mdp.act_ptr[s], mdp.act_ptr[s + 1]) if mdp.act_edge[a] == e))
    f = np.full(len(mdp.act_child), -1e3)
    for s, nxt in zip(target, target[1:]):
        f[next(a for a in range(mdp.act_ptr[s], mdp.act_ptr[s + 1]) if mdp.act_child[a] == nxt)] = 0.0
    f[mdp.stop_action(target[-1])] = 0.0
    model = table_model(3, f)
    assert posterior_estimate(model, 1000, 0).probs == {"010001000": 1.0}
    assert sample_dag(model, 3).key == "010001000"


def test_uniform_two_node_rollouts():
    model = table_model(2, np.zeros(len(build_mdp(2).act_child)))
    exact = terminal_distribution(model)
    assert exact.probs == pytest.approx({"0000": 1 / 3, "0100": 1 / 3, "0010": 1 / 3})
    est = posterior_estimate(model, 30_000, 0)
    assert abs(sum(est.probs.values()) - 1) < 1e-12
    assert est.l1(exact) < 0.03


def test_flow_model_json_round_trip(tmp_path, chain_model):
    _, model, _ = chain_model
    model.save(tmp_path / "m.json")
    back = FlowModel.load(tmp_path / "m.json")
    assert np.array_equal(back.log_flow, model.log_flow)
    assert back.losses == model.losses


@pytest.mark.slow
def test_five_node_scorer_trains_and_round_trips(tmp_path):
    data = sample_scm(random_er_scm(5, 4, 0), 100, 0)
    model = train_gflownet(data, 5, GflowConfig(n_batches=20, batch_size=20), seed=0)
    assert model.kind == "scorer" and len(model.losses) == 20
    assert model.losses[-1] < model.losses[0]
    model.save(tmp_path / "s.json")
    back = FlowModel.load(tmp_path / "s.json")
    assert np.array_equal(back.action_log_flows(0)[1], model.action_log_flows(0)[1])
    assert 0.0 <= back.stop_probability(0) <= 1.0
    assert sample_dag(back, 0).n == 5


def test_more_than_five_nodes_rejected():
    with pytest.raises(ValueError):
        train_gflownet(np.zeros((10, 6)), 6, GflowConfig(n_batches=1), 0)


# --- interventions ----------------------------------------------------------------


def chain_factors():
    p0 = np.array([0.3, 0.7])
    p1 = np.array([[0.9, 0.1], [0.2, 0.8]])
    p2 = np.array([[0.6, 0.4], [0.1, 0.9]])
    return {0: Factor(0, (), p0), 1: Factor(1, (0,), p1), 2: Factor(2, (1,), p2)}


def test_empty_intervention_is_identity():
    f = chain_factors()
    assert apply_intervention(f, set(), {}) == f


def test_root_point_mass_intervention():
    f = chain_factors()
    g = apply_intervention(f, {0}, {0: Factor(0, (), np.array([0.0, 1.0]))})
    assert g[1] is f[1] and g[2] is f[2]
    joint = joint_table(g, (2, 2, 2))
    assert np.allclose(joint.sum(axis=(1, 2)), [0.0, 1.0])
    assert np.allclose(joint[1] / joint[1].sum(), joint_table(f, (2, 2, 2))[1] / joint_table(f, (2, 2, 2))[1].sum())


def test_intervening_on_all_nodes_keeps_only_replacements():
    f = chain_factors()
    rep = {i: Factor(i, (), np.array([0.25, 0.75])) for i in range(3)}
    g = apply_intervention(f, {0, 1, 2}, rep)
    assert g == rep
    assert np.allclose(joint_table(g, (2, 2, 2)), np.einsum("i,j,k->ijk", *[np.array([0.25, 0.75])] * 3))


def test_missing_replacement_raises():
    with pytest.raises(KeyError):
        apply_intervention(chain_factors(), {1}, {})
