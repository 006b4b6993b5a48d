"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from semlang import kernels
from semlang.causal import build_mdp, log_reward_table
from semlang.channel import huffman_codebook


def reach_case(n: int = 200, p: float = 0.05, seed: int = 0):
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
    return "reach_matrix", (n, order, indptr, np.array(idx, dtype=np.int64), np.array(w))


def gflownet_cases(n: int = 4, batch: int = 100, seed: int = 0):
    mdp = build_mdp(n)
    rng = np.random.default_rng(seed)
    data = rng.normal(size=(100, n))
    log_reward = log_reward_table(n, data)
    log_flow = rng.normal(size=len(mdp.act_edge))
    u = rng.random((batch, max(mdp.max_len, 1)))
    roll = ("rollout_tabular", (log_flow, mdp.act_ptr, mdp.act_child, u, 0.1, 0.4))
    visited, lengths = kernels.rollout_tabular(*roll[1])
    loss = ("flow_matching_tabular",
            (log_flow, mdp.act_ptr, mdp.act_child, mdp.in_ptr, mdp.in_act, log_reward, visited, lengths))
    return [roll, loss]


def decode_case(k: int = 64, n: int = 20_000, seed: int = 0):
    rng = np.random.default_rng(seed)
    cb = huffman_codebook(rng.dirichlet(np.ones(k)))
    rows, lengths = cb.frames(rng.integers(0, k, n).tolist())
    flips = (rng.random(rows.shape) < 0.05).astype(np.uint8)
    return "prefix_decode", (*cb.tree(), rows ^ flips, lengths)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    cases = [reach_case(), *gflownet_cases(), decode_case()]
    backends = kernels.backends()
    print(f"{'kernel':<24}" + "".join(f"{b:>14}" for b in backends) + f"{'speedup':>10}")
    for name, call_args in cases:
        times = {}
        for b, mod in backends.items():
            fn = getattr(mod, name)
            times[b] = min(timeit.repeat(lambda: fn(*call_args), number=1, repeat=args.repeat))
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{name:<24}" + "".join(f"{times[b] * 1e3:>11.2f} ms" for b in backends) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
