"""End-to-end transmission: speaker codec, channel, listener decoding, semantic scoring.

A codec maps each context's valid states to symbols and back to a decoded
state. The classical baseline sends a fixed-length index of the state over
the whole state space, ignoring context and meaning.

Trials are simulated in bulk from one generator per run. The context, the
state and the per-bit uniforms are drawn first and shared by the semantic and
classical sides, so both see the same BSC flip pattern on their leading bits
and a larger crossover probability flips a superset of bits.
"""
from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from .channel import Bsc, ChannelModel, Codebook, fixed_length_codebook, huffman_codebook, transmit_bits
from .equilibria import lloyd_voronoi
from .game import GameSpace, PolicyPair
from .logic import Formula, FragmentChain, Literal, saturated_connective
from .metrics import ErrorSample, FormulaSet, distortion_from_values, formula_values
from .world import ContextId, CopresheafIndex, StateId, World, build_copresheaf_index


@dataclass(frozen=True)
class ContextCodec:
    context: ContextId
    assign: Mapping[StateId, int]  # state -> symbol
    decode_table: tuple[StateId, ...]  # symbol -> decoded state
    codebook: Codebook

    def encode(self, z: StateId) -> int:
        return self.assign[z]

    def decode(self, symbol: int) -> StateId:
        return self.decode_table[symbol % len(self.decode_table)]


@dataclass(frozen=True)
class Codec:
    kind: str
    contexts: Mapping[ContextId, ContextCodec]

    def average_bits(self, world: World) -> float:
        total = 0.0
        for c in world.contexts:
            cc = self.contexts[c.id]
            total += c.prior * sum(pz * len(cc.codebook.codewords[cc.assign[z]]) for z, pz in zip(c.states, c.state_prior))
        return total


def _codebook(probs: np.ndarray, code: str) -> Codebook:
    if code == "huffman":
        return huffman_codebook(probs / probs.sum())
    if code == "fixed":
        return fixed_length_codebook(len(probs))
    raise ValueError("code must be 'huffman' or 'fixed'")


def _cells_codec(c, cells: list[list[StateId]], reps: list[StateId], code: str) -> ContextCodec:
    assign = {z: k for k, cell in enumerate(cells) for z in cell}
    probs = np.zeros(len(cells))
    for z, pz in zip(c.states, c.state_prior):
        probs[assign[z]] += pz
    return ContextCodec(c.id, assign, tuple(reps), _codebook(probs, code))


def synonym_codec(world: World, code: str = "huffman") -> Codec:
    """One symbol per class of identical copresheaves; decodes to the first member."""
    out = {}
    for c in world.contexts:
        idx = build_copresheaf_index(world, c.id)
        labels = idx.classes()
        cells: dict[int, list[StateId]] = {}
        for z in c.states:
            cells.setdefault(labels[idx.index(z)], []).append(z)
        groups = list(cells.values())
        out[c.id] = _cells_codec(c, groups, [g[0] for g in groups], code)
    return Codec(f"synonym-{code}", out)


def voronoi_codec(world: World, K: int, seed: int, code: str = "huffman") -> Codec:
    """Lloyd partition of each context into ``min(K, |W_c|)`` cells, decoded to medoids."""
    out = {}
    for c in world.contexts:
        idx = build_copresheaf_index(world, c.id)
        vc = lloyd_voronoi(world, idx, min(K, len(idx)), seed)
        out[c.id] = _cells_codec(c, [list(x) for x in vc.cells], list(vc.representatives), code)
    return Codec(f"voronoi-{code}", out)


def policy_codec(pair: PolicyPair, space: GameSpace, code: str = "huffman") -> Codec:
    """Hard speaker assignment (row argmax) and listener decoding (column argmax per codeword)."""
    out = {}
    for c in space.world.contexts:
        s = space.ctx_slices[c.id]
        assign = {z: int(u) for z, u in zip(c.states, np.argmax(pair.speaker[s], axis=1))}
        block = pair.listener[:, s]
        decode = tuple(c.states[int(j)] for j in np.argmax(block, axis=1))
        probs = np.zeros(pair.vocab_size)
        for z, pz in zip(c.states, c.state_prior):
            probs[assign[z]] += pz
        out[c.id] = ContextCodec(c.id, assign, decode, _codebook(probs, code))
    return Codec(f"policy-{code}", out)


@dataclass(frozen=True)
class ClassicalCodec:
    """Direct entity encoding: ``ceil(log2 |W|)``-bit index of the state, no context."""

    states: tuple[StateId, ...]

    @classmethod
    def for_world(cls, world: World) -> ClassicalCodec:
        return cls(tuple(sorted(world.states)))

    @property
    def n_bits(self) -> int:
        return max(1, math.ceil(math.log2(len(self.states))))


# ---------------------------------------------------------------------------
# Semantic descriptions
# ---------------------------------------------------------------------------


def entailment_formulas(world: World) -> FormulaSet:
    """One formula per world state ``y``: ``true implies (z entails y)``.

    Descriptions are ``[1, r(z, y_1), ..., r(z, y_W)]`` so formula ``k`` reads
    the constant coordinate and coordinate ``k + 1``.
    """
    conns = [saturated_connective()]
    return [(Formula((Literal(0), Literal(k + 1))), conns) for k in range(len(world.states))]


def description(z: StateId, idx: CopresheafIndex, order: Mapping[StateId, int], n: int) -> FragmentChain:
    row = np.zeros(n)
    for j, y in enumerate(idx.states):
        row[order[y]] = idx.reach[idx.index(z), j]
    return FragmentChain((np.ones(1), row))


@dataclass
class SemanticTable:
    """Cached formula values and copresheaf supports per (context, state)."""

    world: World
    formulas: FormulaSet | None = None
    _phi: dict = field(default_factory=dict)
    _idx: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.formulas is None:
            self.formulas = entailment_formulas(self.world)
        self._order = {y: k for k, y in enumerate(sorted(self.world.states))}

    def index(self, cid: ContextId) -> CopresheafIndex:
        if cid not in self._idx:
            self._idx[cid] = build_copresheaf_index(self.world, cid)
        return self._idx[cid]

    def phi(self, cid: ContextId, z: StateId) -> np.ndarray:
        key = (cid, z)
        if key not in self._phi:
            chain = description(z, self.index(cid), self._order, len(self._order))
            self._phi[key] = formula_values(chain, self.formulas)
        return self._phi[key]

    def distortion(self, cid: ContextId, z: StateId, z_hat: StateId) -> float:
        return distortion_from_values(self.phi(cid, z), self.phi(cid, z_hat))

    def support(self, cid: ContextId, z: StateId) -> frozenset:
        return self.index(cid).support(z)


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PipelineRun:
    contexts: np.ndarray  # context id per trial
    states: np.ndarray  # true state per trial
    decoded: np.ndarray  # ESC decoded state per trial
    bits: np.ndarray  # ESC bits sent per trial
    classical_decoded: np.ndarray  # baseline decoded state, -1 for an invalid index
    classical_bits: int

    @property
    def n_trials(self) -> int:
        return len(self.states)

    @property
    def mean_bits(self) -> float:
        return float(self.bits.mean())


def _draw_states(world: World, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    ctxs = world.contexts
    pc = np.array([c.prior for c in ctxs])
    ci = rng.choice(len(ctxs), size=n, p=pc / pc.sum())
    u = rng.random(n)
    states = np.empty(n, dtype=np.int64)
    for k, c in enumerate(ctxs):
        sel = ci == k
        cdf = np.cumsum(c.state_prior)
        pick = np.minimum(np.searchsorted(cdf / cdf[-1], u[sel], side="right"), len(c.states) - 1)
        states[sel] = np.asarray(c.states)[pick]
    return np.array([c.id for c in ctxs])[ci], states


def _corrupt(rows: np.ndarray, lengths: np.ndarray, channel: ChannelModel, u: np.ndarray, rng: np.random.Generator):
    if isinstance(channel, Bsc):
        flips = (u[:, : rows.shape[1]] < channel.p).astype(np.uint8)
        return rows ^ flips
    flat = np.concatenate([rows[i, : lengths[i]] for i in range(len(rows))])
    rx = transmit_bits(flat, channel, rng)
    out = np.zeros_like(rows)
    pos = 0
    for i, l in enumerate(lengths):
        out[i, :l] = rx[pos : pos + l]
        pos += l
    return out


def run_pipeline(world: World, codec: Codec, channel: ChannelModel, n_trials: int, seed: int) -> PipelineRun:
    """Simulate ``n_trials`` independent transmissions through codec, channel and decoder."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    noise = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    classical = ClassicalCodec.for_world(world)
    ctx, states = _draw_states(world, n_trials, rng)
    width = max(classical.n_bits, max(int(cc.codebook.lengths.max()) for cc in codec.contexts.values()))
    u = rng.random((n_trials, width))

    decoded = np.empty(n_trials, dtype=np.int64)
    bits = np.empty(n_trials, dtype=np.int64)
    for cid, cc in codec.contexts.items():
        sel = np.flatnonzero(ctx == cid)
        if not len(sel):
            continue
        symbols = [cc.encode(int(z)) for z in states[sel]]
        rows, lengths = cc.codebook.frames(symbols)
        rx = _corrupt(rows, lengths, channel, u[sel], noise)
        out = cc.codebook.decode_frames(rx, lengths)
        decoded[sel] = [cc.decode(int(s)) for s in out]
        bits[sel] = lengths

    pos = {z: k for k, z in enumerate(classical.states)}
    L = classical.n_bits
    index = np.array([pos[int(z)] for z in states], dtype=np.int64)
    rows = ((index[:, None] >> np.arange(L - 1, -1, -1)) & 1).astype(np.uint8)
    rx = _corrupt(rows, np.full(n_trials, L), channel, u, noise)
    got = rx.astype(np.int64) @ (1 << np.arange(L - 1, -1, -1))
    table = np.asarray(classical.states, dtype=np.int64)
    cdec = np.where(got < len(table), table[np.minimum(got, len(table) - 1)], -1)
    return PipelineRun(ctx, states, decoded, bits, cdec, L)


@dataclass(frozen=True)
class PipelineMetrics:
    semantic_reliability: float
    half_width: float
    semantic_error: float
    syntactic_error: float
    classical_error: float
    mean_distortion: float
    esc_bits: float
    classical_bits: float


def score_run(run: PipelineRun, table: SemanticTable, delta: float) -> PipelineMetrics:
    n = run.n_trials
    dist = np.array([table.distortion(int(c), int(z), int(zh)) for c, z, zh in zip(run.contexts, run.states, run.decoded)])
    sem_err = np.array(
        [table.support(int(c), int(z)) != table.support(int(c), int(zh)) for c, z, zh in zip(run.contexts, run.states, run.decoded)]
    )
    rel = float(np.mean(dist < delta))
    return PipelineMetrics(
        semantic_reliability=rel,
        half_width=1.96 * math.sqrt(rel * (1 - rel) / n),
        semantic_error=float(sem_err.mean()),
        syntactic_error=float(np.mean(run.decoded != run.states)),
        classical_error=float(np.mean(run.classical_decoded != run.states)),
        mean_distortion=float(dist.mean()),
        esc_bits=run.mean_bits,
        classical_bits=float(run.classical_bits),
    )


def error_samples(run: PipelineRun, table: SemanticTable) -> list[ErrorSample]:
    out = []
    for c, z, zh, zc in zip(run.contexts, run.states, run.decoded, run.classical_decoded):
        c, z, zh = int(c), int(z), int(zh)
        hz, hzh = table.support(c, z), table.support(c, zh)
        out.append(
            ErrorSample(
                context=c,
                meaning=hz,
                decoded=zh,
                uncovered=hz - hzh,
                semantic_error=hz != hzh,
                classical_true=z,
                classical_decoded=int(zc),
            )
        )
    return out

