"""Pure-Python reference implementations of the hot kernels.

Every function here has a twin with the same signature in ``_ckernels.pyx``.
Both must produce bit-identical results for identical inputs; randomness is
always passed in as pre-drawn uniforms so the two backends consume the same
stream.
"""
from __future__ import annotations

import math

import numpy as np

BACKEND = "python"


def reach_matrix(
    n: int,
    order: np.ndarray,
    indptr: np.ndarray,
    indices: np.ndarray,
    weights: np.ndarray,
) -> np.ndarray:
    """Sum over all directed paths of edge-weight products (unclamped).

    Args:
        n: number of nodes.
        order: a topological order of the nodes.
        indptr, indices, weights: CSR adjacency of outgoing edges.

    Returns:
        ``(n, n)`` array with ``R[x, y]`` the total path weight from x to y and
        ``R[x, x] = 1``.
    """
    reach = np.zeros((n, n), dtype=np.float64)
    for pos in range(n - 1, -1, -1):
        x = int(order[pos])
        row = reach[x]
        row[x] = 1.0
        for k in range(int(indptr[x]), int(indptr[x + 1])):
            m = int(indices[k])
            w = float(weights[k])
            child = reach[m]
            for y in range(n):
                if child[y] != 0.0:
                    row[y] += w * child[y]
    return reach


def rollout_tabular(
    log_flow: np.ndarray,
    act_ptr: np.ndarray,
    act_child: np.ndarray,
    uniforms: np.ndarray,
    eps: float,
    mu: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Forward rollouts over a tabular DAG-construction MDP.

    The last action of every state is the stop action (``act_child == -1``).
    Actions are drawn from ``(1 - eps) * P + eps * uniform`` where ``P`` is the
    flow-normalised policy. A rollout is cut as soon as the model's own stop
    probability exceeds ``mu``.

    Args:
        log_flow: per-action log flows.
        act_ptr: state ``s`` owns actions ``act_ptr[s]:act_ptr[s + 1]``.
        act_child: successor state per action, ``-1`` for stop.
        uniforms: ``(n_traj, max_len)`` uniforms in [0, 1).
        eps: uniform exploration weight.
        mu: forced-termination threshold on the stop probability.

    Returns:
        ``(visited, lengths)`` where ``visited[i, :lengths[i]]`` lists the
        states of trajectory ``i`` starting at state 0; the last entry is the
        terminal state. Padding is ``-1``.
    """
    n_traj, max_len = uniforms.shape
    visited = np.full((n_traj, max_len + 1), -1, dtype=np.int64)
    lengths = np.zeros(n_traj, dtype=np.int64)
    for i in range(n_traj):
        s = 0
        t = 0
        visited[i, 0] = 0
        while True:
            lo = int(act_ptr[s])
            hi = int(act_ptr[s + 1])
            n_act = hi - lo
            top = -math.inf
            for a in range(lo, hi):
                if log_flow[a] > top:
                    top = log_flow[a]
            total = 0.0
            for a in range(lo, hi):
                total += math.exp(log_flow[a] - top)
            p_stop = math.exp(log_flow[hi - 1] - top) / total
            if n_act == 1 or p_stop > mu or t >= max_len:
                break
            u = uniforms[i, t]
            acc = 0.0
            chosen = hi - 1
            for a in range(lo, hi):
                p = (1.0 - eps) * math.exp(log_flow[a] - top) / total + eps / n_act
                acc += p
                if u < acc:
                    chosen = a
                    break
            nxt = int(act_child[chosen])
            if nxt < 0:
                break
            t += 1
            s = nxt
            visited[i, t] = s
        lengths[i] = t + 1
    return visited, lengths


def flow_matching_tabular(
    log_flow: np.ndarray,
    act_ptr: np.ndarray,
    act_child: np.ndarray,
    in_ptr: np.ndarray,
    in_act: np.ndarray,
    log_reward: np.ndarray,
    visited: np.ndarray,
    lengths: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Flow-matching loss and its gradient w.r.t. the log flows.

    Each trajectory contributes one squared residual per visited non-initial
    state (inflow minus outflow, zero reward) plus one for the terminal copy of
    its last state (stop flow minus reward). The returned loss is the mean over
    trajectories.
    """
    n_traj = visited.shape[0]
    grad = np.zeros_like(log_flow)
    flow = np.exp(log_flow)
    loss = 0.0
    for i in range(n_traj):
        length = int(lengths[i])
        for t in range(1, length):
            s = int(visited[i, t])
            r = 0.0
            for k in range(int(in_ptr[s]), int(in_ptr[s + 1])):
                r += flow[in_act[k]]
            for a in range(int(act_ptr[s]), int(act_ptr[s + 1])):
                r -= flow[a]
            loss += r * r
            for k in range(int(in_ptr[s]), int(in_ptr[s + 1])):
                a = int(in_act[k])
                grad[a] += 2.0 * r * flow[a]
            for a in range(int(act_ptr[s]), int(act_ptr[s + 1])):
                grad[a] -= 2.0 * r * flow[a]
        s = int(visited[i, length - 1])
        stop = int(act_ptr[s + 1]) - 1
        r = flow[stop] - math.exp(log_reward[s])
        loss += r * r
        grad[stop] += 2.0 * r * flow[stop]
    if n_traj:
        loss /= n_traj
        grad /= n_traj
    return loss, grad


def prefix_decode(
    child0: np.ndarray,
    child1: np.ndarray,
    leaf_symbol: np.ndarray,
    fallback: np.ndarray,
    bits: np.ndarray,
    lengths: np.ndarray,
) -> np.ndarray:
    """Decode one codeword per row of ``bits`` by walking a prefix-code tree.

    Walking stops at the first leaf; a row that runs out of bits on an internal
    node, or whose next bit leaves an incomplete tree, decodes to the current
    node's ``fallback`` symbol.
    """
    n = bits.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        sym = int(leaf_symbol[0])
        if sym < 0:
            for t in range(int(lengths[i])):
                nxt = int(child1[node]) if bits[i, t] else int(child0[node])
                if nxt < 0:
                    break
                node = nxt
                sym = int(leaf_symbol[node])
                if sym >= 0:
                    break
            if sym < 0:
                sym = int(fallback[node])
        out[i] = sym
    return out
