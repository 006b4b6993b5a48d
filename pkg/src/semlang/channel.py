"""Codeword-to-bit mapping and the physical channels (BSC, AWGN with square QAM)."""
from __future__ import annotations

import heapq
import math
from collections.abc import Sequence
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import erfc

from . import kernels
from .game import default_costs


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Independent generator for Monte Carlo trial ``trial`` of a run seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial,)))


# ---------------------------------------------------------------------------
# Codebooks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Codebook:
    codewords: tuple[str, ...]
    cost: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if not self.codewords:
            raise ValueError("empty codebook")
        for w in self.codewords:
            if not w or set(w) - {"0", "1"}:
                raise ValueError(f"invalid codeword {w!r}")
        if self.cost is not None and len(self.cost) != len(self.codewords):
            raise ValueError("one cost per codeword")

    @property
    def size(self) -> int:
        return len(self.codewords)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([len(w) for w in self.codewords], dtype=np.int64)

    @property
    def costs(self) -> np.ndarray:
        return np.asarray(self.cost if self.cost is not None else default_costs(self.size))

    def kraft_sum(self) -> float:
        return float(sum(2.0 ** -len(w) for w in self.codewords))

    def is_prefix_free(self) -> bool:
        words = sorted(self.codewords)
        return len(set(words)) == len(words) and not any(b.startswith(a) for a, b in zip(words, words[1:]))

    def average_length(self, probs: Sequence[float]) -> float:
        return float(np.dot(probs, self.lengths))

    def encode(self, symbols: Sequence[int]) -> np.ndarray:
        """Concatenated bit stream of the codewords."""
        return np.array([int(b) for u in symbols for b in self.codewords[u]], dtype=np.uint8)

    def decode(self, bits: np.ndarray) -> list[int]:
        """Parse a concatenated stream; a dangling tail is dropped."""
        child0, child1, leaf, _ = self.tree()
        out, node = [], 0
        for b in np.asarray(bits):
            node = int(child1[node] if b else child0[node])
            if node < 0:
                node = 0  # path leaves the tree (incomplete code): resynchronize
                continue
            if leaf[node] >= 0:
                out.append(int(leaf[node]))
                node = 0
        return out

    def frames(self, symbols: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        """One row of bits per symbol (zero padded) and the row lengths."""
        lengths = self.lengths[list(symbols)]
        width = int(self.lengths.max())
        rows = np.zeros((len(symbols), width), dtype=np.uint8)
        for i, u in enumerate(symbols):
            w = self.codewords[u]
            rows[i, : len(w)] = [int(b) for b in w]
        return rows, lengths

    def decode_frames(self, rows: np.ndarray, lengths: np.ndarray) -> np.ndarray:
        """Decode one codeword per framed row (the frame length is known to the receiver)."""
        child0, child1, leaf, fallback = self.tree()
        return kernels.prefix_decode(
            child0, child1, leaf, fallback, np.ascontiguousarray(rows, dtype=np.uint8), np.asarray(lengths, np.int64)
        )

    def tree(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return _tree(self.codewords)


@lru_cache(maxsize=64)
def _tree(codewords: tuple[str, ...]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    # node 0 is the root; -1 marks a missing child or a non-leaf
    child0, child1, leaf, fallback = [-1], [-1], [-1], [-1]
    for sym, w in enumerate(codewords):
        node = 0
        for ch in w:
            kids = child1 if ch == "1" else child0
            if kids[node] < 0:
                kids[node] = len(leaf)
                for arr in (child0, child1, leaf, fallback):
                    arr.append(-1)
            node = kids[node]
        leaf[node] = sym
    # fallback: lowest symbol in the subtree, for frames that end on an internal node
    for node in range(len(leaf) - 1, -1, -1):
        cands = [leaf[node]] if leaf[node] >= 0 else []
        cands += [fallback[c] for c in (child0[node], child1[node]) if c >= 0]
        fallback[node] = min(c for c in cands if c >= 0) if cands else 0
    return tuple(np.array(a, dtype=np.int64) for a in (child0, child1, leaf, fallback))


def huffman_codebook(probs: Sequence[float], cost: Sequence[float] | None = None) -> Codebook:
    """Binary Huffman code; ties merge the earliest-created node first."""
    p = [float(x) for x in probs]
    if not p:
        raise ValueError("empty alphabet")
    if any(x < 0 for x in p) or not math.isclose(sum(p), 1.0, abs_tol=1e-9):
        raise ValueError("probabilities must be nonnegative and sum to 1")
    if len(p) == 1:
        return Codebook(("0",), tuple(cost) if cost is not None else None)
    heap = [(x, i, (i,)) for i, x in enumerate(p)]
    heapq.heapify(heap)
    codes = [""] * len(p)
    counter = len(p)
    while len(heap) > 1:
        p0, _, s0 = heapq.heappop(heap)
        p1, _, s1 = heapq.heappop(heap)
        for s in s0:
            codes[s] = "0" + codes[s]
        for s in s1:
            codes[s] = "1" + codes[s]
        heapq.heappush(heap, (p0 + p1, counter, s0 + s1))
        counter += 1
    return Codebook(tuple(codes), tuple(cost) if cost is not None else None)


def fixed_length_codebook(n: int, cost: Sequence[float] | None = None) -> Codebook:
    """``ceil(log2 n)``-bit binary indices (at least one bit)."""
    if n < 1:
        raise ValueError("empty alphabet")
    width = max(1, math.ceil(math.log2(n)))
    return Codebook(tuple(format(i, f"0{width}b") for i in range(n)), tuple(cost) if cost is not None else None)


# ---------------------------------------------------------------------------
# Channels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Bsc:
    p: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.p <= 0.5:
            raise ValueError("crossover probability must lie in [0, 0.5]")


@dataclass(frozen=True)
class AwgnQam:
    snr_db: float
    order: int = 64

    def __post_init__(self) -> None:
        side = math.isqrt(self.order)
        if side * side != self.order or side < 2 or side & (side - 1):
            raise ValueError("constellation order must be an even power of two")

    @property
    def bits_per_symbol(self) -> int:
        return int(math.log2(self.order))


ChannelModel = Bsc | AwgnQam


def bsc_transmit(bits: np.ndarray, p: float, seed: int | np.random.Generator) -> np.ndarray:
    """Flip each bit independently with probability ``p``."""
    Bsc(p)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bits = np.asarray(bits, dtype=np.uint8)
    flips = rng.random(bits.shape) < p
    return bits ^ flips.astype(np.uint8)


def _gray(n: int) -> int:
    return n ^ (n >> 1)


@lru_cache(maxsize=8)
def qam_constellation(order: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Unit-energy square QAM points and their Gray labels.

    Returns:
        ``(points, labels)`` where ``points[k]`` carries the bit label
        ``labels[k]`` (an integer whose binary digits are the symbol's bits,
        in-phase bits first). Horizontally or vertically adjacent points differ
        in exactly one bit.
    """
    AwgnQam(0.0, order)
    side = math.isqrt(order)
    half = int(math.log2(side))
    levels = np.arange(-(side - 1), side, 2, dtype=np.float64)
    pts, labels = [], []
    for i, re in enumerate(levels):
        for q, im in enumerate(levels):
            pts.append(complex(re, im))
            labels.append((_gray(i) << half) | _gray(q))
    pts = np.array(pts)
    pts /= math.sqrt(np.mean(np.abs(pts) ** 2))
    order_by_label = np.argsort(labels)
    return pts[order_by_label], np.array(labels)[order_by_label]


def qam_modulate(bits: np.ndarray, order: int = 64) -> np.ndarray:
    """Map groups of ``log2(order)`` bits (zero padded) to constellation points."""
    k = int(math.log2(order))
    bits = np.asarray(bits, dtype=np.uint8)
    pad = (-len(bits)) % k
    groups = np.concatenate([bits, np.zeros(pad, np.uint8)]).reshape(-1, k)
    idx = groups @ (1 << np.arange(k - 1, -1, -1))
    return qam_constellation(order)[0][idx]


def qam_demodulate(symbols: np.ndarray, order: int = 64) -> np.ndarray:
    k = int(math.log2(order))
    idx = _symbol_index(symbols, order)
    return ((idx[:, None] >> np.arange(k - 1, -1, -1)) & 1).astype(np.uint8).ravel()


def _nearest(y: np.ndarray, order: int) -> np.ndarray:
    pts = qam_constellation(order)[0]
    return np.argmin(np.abs(np.asarray(y)[:, None] - pts[None, :]), axis=1)


def _symbol_index(symbols: np.ndarray, order: int) -> np.ndarray:
    symbols = np.atleast_1d(np.asarray(symbols, dtype=np.complex128))
    pts = qam_constellation(order)[0]
    idx = _nearest(symbols, order)
    if np.any(np.abs(pts[idx] - symbols) > 1e-9):
        raise ValueError("symbol not in constellation")
    return idx


def qam_transmit(
    symbols: np.ndarray, snr_db: float, seed: int | np.random.Generator, order: int = 64
) -> np.ndarray:
    """Add circular complex Gaussian noise at ``snr_db`` and return hard decisions.

    The SNR is ``E|x|^2 / E|n|^2`` with unit symbol energy; ``snr_db = inf``
    disables the noise.
    """
    symbols = np.atleast_1d(np.asarray(symbols, dtype=np.complex128))
    _symbol_index(symbols, order)
    if math.isinf(snr_db) and snr_db > 0:
        return symbols.copy()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n0 = 10.0 ** (-snr_db / 10.0)
    noise = rng.normal(0.0, math.sqrt(n0 / 2), size=(len(symbols), 2)) @ np.array([1.0, 1j])
    return qam_constellation(order)[0][_nearest(symbols + noise, order)]


def qam_union_bound(snr_db: float, order: int = 64, nearest_only: bool = True) -> float:
    """Union-bound symbol error rate for hard decisions on unit-energy square QAM."""
    pts = qam_constellation(order)[0]
    sigma = math.sqrt(10.0 ** (-snr_db / 10.0) / 2)
    d = np.abs(pts[:, None] - pts[None, :])
    np.fill_diagonal(d, np.inf)
    if nearest_only:
        d = np.where(np.isclose(d, d.min()), d, np.inf)
    q = 0.5 * erfc(d / (2 * sigma) / math.sqrt(2))
    return float(q.sum(axis=1).mean())


def transmit_bits(bits: np.ndarray, channel: ChannelModel, rng: np.random.Generator) -> np.ndarray:
    """Send a bit vector through ``channel`` and return the received bits."""
    bits = np.asarray(bits, dtype=np.uint8)
    if isinstance(channel, Bsc):
        return bsc_transmit(bits, channel.p, rng)
    rx = qam_transmit(qam_modulate(bits, channel.order), channel.snr_db, rng, channel.order)
    return qam_demodulate(rx, channel.order)[: len(bits)]


def send_codewords(
    symbols: Sequence[int], codebook: Codebook, channel: ChannelModel, rng: np.random.Generator
) -> np.ndarray:
    """Framed transmission: each codeword's bits cross the channel and are decoded alone."""
    rows, lengths = codebook.frames(symbols)
    flat = np.concatenate([rows[i, : lengths[i]] for i in range(len(symbols))]) if len(symbols) else rows[:0, 0]
    rx = transmit_bits(flat, channel, rng)
    out = np.zeros_like(rows)
    pos = 0
    for i, l in enumerate(lengths):
        out[i, :l] = rx[pos : pos + l]
        pos += l
    return codebook.decode_frames(out, lengths)
