# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_pykernels``.

Signatures and floating-point operation order match the pure-Python versions
so both backends return identical arrays.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport exp, INFINITY

cnp.import_array()

BACKEND = "cython"


def reach_matrix(Py_ssize_t n, const cnp.int64_t[:] order, const cnp.int64_t[:] indptr,
                 const cnp.int64_t[:] indices, const double[:] weights):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] reach = out
    cdef Py_ssize_t pos, x, k, m, y
    cdef double w, c
    for pos in range(n - 1, -1, -1):
        x = order[pos]
        reach[x, x] = 1.0
        for k in range(indptr[x], indptr[x + 1]):
            m = indices[k]
            w = weights[k]
            for y in range(n):
                c = reach[m, y]
                if c != 0.0:
                    reach[x, y] += w * c
    return out


def rollout_tabular(const double[:] log_flow, const cnp.int64_t[:] act_ptr,
                    const cnp.int64_t[:] act_child, const double[:, :] uniforms,
                    double eps, double mu):
    cdef Py_ssize_t n_traj = uniforms.shape[0]
    cdef Py_ssize_t max_len = uniforms.shape[1]
    visited_arr = np.full((n_traj, max_len + 1), -1, dtype=np.int64)
    lengths_arr = np.zeros(n_traj, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] visited = visited_arr
    cdef cnp.int64_t[::1] lengths = lengths_arr
    cdef Py_ssize_t i, t, s, lo, hi, n_act, a, chosen, nxt
    cdef double top, total, p_stop, u, acc, p
    for i in range(n_traj):
        s = 0
        t = 0
        visited[i, 0] = 0
        while True:
            lo = act_ptr[s]
            hi = act_ptr[s + 1]
            n_act = hi - lo
            top = -INFINITY
            for a in range(lo, hi):
                if log_flow[a] > top:
                    top = log_flow[a]
            total = 0.0
            for a in range(lo, hi):
                total += exp(log_flow[a] - top)
            p_stop = exp(log_flow[hi - 1] - top) / total
            if n_act == 1 or p_stop > mu or t >= max_len:
                break
            u = uniforms[i, t]
            acc = 0.0
            chosen = hi - 1
            for a in range(lo, hi):
                p = (1.0 - eps) * exp(log_flow[a] - top) / total + eps / n_act
                acc += p
                if u < acc:
                    chosen = a
                    break
            nxt = act_child[chosen]
            if nxt < 0:
                break
            t += 1
            s = nxt
            visited[i, t] = s
        lengths[i] = t + 1
    return visited_arr, lengths_arr


def flow_matching_tabular(const double[:] log_flow, const cnp.int64_t[:] act_ptr,
                          const cnp.int64_t[:] act_child, const cnp.int64_t[:] in_ptr,
                          const cnp.int64_t[:] in_act, const double[:] log_reward,
                          const cnp.int64_t[:, :] visited, const cnp.int64_t[:] lengths):
    cdef Py_ssize_t n_act_total = log_flow.shape[0]
    cdef Py_ssize_t n_traj = visited.shape[0]
    grad_arr = np.zeros(n_act_total, dtype=np.float64)
    flow_arr = np.exp(np.asarray(log_flow))
    cdef double[::1] grad = grad_arr
    cdef double[::1] flow = flow_arr
    cdef Py_ssize_t i, t, s, k, a, length, stop
    cdef double r, loss = 0.0
    for i in range(n_traj):
        length = lengths[i]
        for t in range(1, length):
            s = visited[i, t]
            r = 0.0
            for k in range(in_ptr[s], in_ptr[s + 1]):
                r += flow[in_act[k]]
            for a in range(act_ptr[s], act_ptr[s + 1]):
                r -= flow[a]
            loss += r * r
            for k in range(in_ptr[s], in_ptr[s + 1]):
                a = in_act[k]
                grad[a] += 2.0 * r * flow[a]
            for a in range(act_ptr[s], act_ptr[s + 1]):
                grad[a] -= 2.0 * r * flow[a]
        s = visited[i, length - 1]
        stop = act_ptr[s + 1] - 1
        r = flow[stop] - exp(log_reward[s])
        loss += r * r
        grad[stop] += 2.0 * r * flow[stop]
    if n_traj:
        loss /= n_traj
        for a in range(n_act_total):
            grad[a] /= n_traj
    return loss, grad_arr


def prefix_decode(const cnp.int64_t[:] child0, const cnp.int64_t[:] child1,
                  const cnp.int64_t[:] leaf_symbol, const cnp.int64_t[:] fallback,
                  const cnp.uint8_t[:, :] bits, const cnp.int64_t[:] lengths):
    cdef Py_ssize_t n = bits.shape[0]
    out_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    cdef Py_ssize_t i, t, node, nxt
    cdef cnp.int64_t sym
    for i in range(n):
        node = 0
        sym = leaf_symbol[0]
        if sym < 0:
            for t in range(lengths[i]):
                if bits[i, t]:
                    nxt = child1[node]
                else:
                    nxt = child0[node]
                if nxt < 0:
                    break
                node = nxt
                sym = leaf_symbol[node]
                if sym >= 0:
                    break
            if sym < 0:
                sym = fallback[node]
        out[i] = sym
    return out_arr
