import numpy as np
import pytest

from semlang import kernels

BACKENDS = kernels.backends()


def both(name):
    return [getattr(m, name) for m in BACKENDS.values()]


def random_dag_csr(n, seed, p=0.4):
    rng = np.random.default_rng(seed)
    order = rng.permutation(n).astype(np.int64)
    rows = [[] for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                rows[order[i]].append((int(order[j]), float(rng.uniform(0.05, 0.3))))
    indptr = np.zeros(n + 1, dtype=np.int64)
    idx, w = [], []
    for i, r in enumerate(rows):
        indptr[i + 1] = indptr[i] + len(r)
        idx += [j for j, _ in r]
        w += [x for _, x in r]
    return order, indptr, np.array(idx, dtype=np.int64), np.array(w)


def toy_mdp():
    # state 0 -> {1, 2, stop}; 1 -> {3, stop}; 2 -> {3, stop}; 3 -> {stop}
    act_ptr = np.array([0, 3, 5, 7, 8], dtype=np.int64)
    act_child = np.array([1, 2, -1, 3, -1, 3, -1, -1], dtype=np.int64)
    in_ptr = np.array([0, 0, 1, 2, 4], dtype=np.int64)
    in_act = np.array([0, 1, 3, 5], dtype=np.int64)
    return act_ptr, act_child, in_ptr, in_act


def test_cython_backend_present():
    assert "python" in BACKENDS
    assert kernels.BACKEND in BACKENDS


@pytest.mark.parametrize("seed", range(10))
def test_reach_parity(seed):
    args = (15, *random_dag_csr(15, seed))
    outs = [f(*args) for f in both("reach_matrix")]
    for o in outs[1:]:
        assert np.array_equal(o, outs[0])
    assert np.all(np.diag(outs[0]) == 1.0)


@pytest.mark.parametrize("seed", range(5))
def test_rollout_and_loss_parity(seed):
    rng = np.random.default_rng(seed)
    act_ptr, act_child, in_ptr, in_act = toy_mdp()
    log_flow = rng.normal(size=8)
    log_reward = rng.normal(size=4)
    u = rng.random((200, 4))
    rolls = [f(log_flow, act_ptr, act_child, u, 0.1, 0.9) for f in both("rollout_tabular")]
    for v, ln in rolls[1:]:
        assert np.array_equal(v, rolls[0][0]) and np.array_equal(ln, rolls[0][1])
    visited, lengths = rolls[0]
    assert np.all(visited[:, 0] == 0)
    losses = [f(log_flow, act_ptr, act_child, in_ptr, in_act, log_reward, visited, lengths)
              for f in both("flow_matching_tabular")]
    for loss, grad in losses[1:]:
        assert loss == losses[0][0]
        assert np.array_equal(grad, losses[0][1])


def test_flow_matching_gradient_finite_difference():
    rng = np.random.default_rng(3)
    act_ptr, act_child, in_ptr, in_act = toy_mdp()
    theta = rng.normal(size=8)
    log_reward = rng.normal(size=4)
    visited, lengths = kernels.rollout_tabular(theta, act_ptr, act_child, rng.random((50, 4)), 0.5, 1.0)
    f = lambda th: kernels.flow_matching_tabular(th, act_ptr, act_child, in_ptr, in_act, log_reward, visited, lengths)
    _, grad = f(theta)
    h = 1e-6
    for a in range(8):
        e = np.zeros(8)
        e[a] = h
        fd = (f(theta + e)[0] - f(theta - e)[0]) / (2 * h)
        assert grad[a] == pytest.approx(fd, rel=1e-5, abs=1e-8)


def test_prefix_decode_parity_and_fallback():
    # tree: root -> (leaf 'a', node2); node2 -> (leaf 'b', leaf 'c')
    child0 = np.array([1, -1, 3, -1, -1], dtype=np.int64)
    child1 = np.array([2, -1, 4, -1, -1], dtype=np.int64)
    leaf = np.array([-1, 0, -1, 1, 2], dtype=np.int64)
    fallback = np.array([0, 0, 1, 1, 2], dtype=np.int64)
    bits = np.array([[0, 0], [1, 0], [1, 1], [1, 0]], dtype=np.uint8)
    lengths = np.array([2, 2, 2, 1], dtype=np.int64)
    outs = [f(child0, child1, leaf, fallback, bits, lengths) for f in both("prefix_decode")]
    for o in outs:
        assert o.tolist() == [0, 1, 2, 1]


def test_prefix_decode_incomplete_tree():
    # codewords "0", "10": the "11" branch is missing
    from semlang.channel import Codebook

    tree = Codebook(("0", "10")).tree()
    bits = np.array([[1, 1], [1, 0], [0, 1]], dtype=np.uint8)
    lengths = np.array([2, 2, 2], dtype=np.int64)
    outs = [f(*tree, bits, lengths) for f in both("prefix_decode")]
    for o in outs:
        assert o.tolist() == [1, 1, 0]
