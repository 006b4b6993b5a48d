"""Contextual signaling game solved by alternating maximization.

Rows of the speaker and columns of the listener are indexed by the valid
(state, context) pairs of a world, laid out context by context in world order.
Both players are dense stochastic matrices:

* speaker ``pi_s[j, u] = pi(u | z_j, c_j)`` with shape ``(J, K)``;
* listener ``pi_l[u, j] = pi(z_j, c_j | u)`` with shape ``(K, J)``.

The speaker step is the exponential-family maximizer of the Lagrangian of the
speaker objective; the listener step is the exact maximizer of the concave
lower bound obtained by linearizing ``pi_l log pi_l``.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from .world import (
    ContextId,
    StateId,
    World,
    build_copresheaf_index,
    conditioned_semantic_information,
    default_prior,
    similarity_matrix,
)

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
GUARD = 1e-12
NMSE_FLOOR_DB = -300.0


def default_costs(k: int) -> tuple[float, ...]:
    """``c(u_i) = ceil(i / 5)`` with 1-based ``i``."""
    return tuple(float(math.ceil(i / 5)) for i in range(1, k + 1))


@dataclass(frozen=True)
class GameConfig:
    """Solver settings.

    Attributes:
        vocab_size: number of codewords ``K``.
        lambda_s: constraint multiplier used when ``D`` is ``None``.
        D: constraint level on ``E[V]``. ``None`` keeps ``lambda_s`` fixed,
            ``"auto"`` uses 1.1 times ``E[V]`` of the uniform pair, a number
            triggers a per-round bisection on ``lambda_s``.
        cost: per-codeword cost; ``None`` selects ``ceil(i / 5)``.
        max_rounds: round budget (0 returns the initial pair).
        nmse_stop_db: stop once the round-to-round NMSE drops to this level.
        bisection: ``(lo, hi, tol, max_iter)`` for the multiplier search.
        init_jitter: relative size of the symmetry-breaking perturbation of
            the initial listener.
        init_pattern: ``"assignment"`` or ``"gaussian"`` perturbation direction.
        anchor: ``"prior"`` or ``"previous"``; reference distribution in the
            listener update.
        sample_contexts: update one sampled context per round instead of all.
        floor_info: clip per-term semantic information at zero.
    """

    vocab_size: int = 5
    lambda_s: float = 2.0
    D: float | str | None = None
    cost: tuple[float, ...] | None = None
    max_rounds: int = 100
    nmse_stop_db: float = -50.0
    bisection: tuple[float, float, float, int] = (0.0, 50.0, 1e-4, 100)
    init_jitter: float = 1e-4
    anchor: str = "prior"
    init_pattern: str = "assignment"
    sample_contexts: bool = False
    floor_info: bool = False

    def __post_init__(self) -> None:
        lo, hi, tol, iters = self.bisection
        if not lo < hi or tol <= 0 or iters < 1:
            raise ValueError("bisection needs lo < hi, tol > 0 and max_iter >= 1")
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be positive")
        if self.max_rounds < 0:
            raise ValueError("max_rounds must be nonnegative")
        if self.lambda_s < 0:
            raise ValueError("lambda_s must be nonnegative")
        if self.cost is not None and len(self.cost) != self.vocab_size:
            raise ValueError("cost length must equal vocab_size")
        if self.anchor not in ("prior", "previous"):
            raise ValueError("anchor must be 'prior' or 'previous'")
        if self.init_pattern not in ("assignment", "gaussian"):
            raise ValueError("init_pattern must be 'assignment' or 'gaussian'")
        if not 0 <= self.init_jitter < 1:
            raise ValueError("init_jitter must lie in [0, 1)")

    @property
    def costs(self) -> np.ndarray:
        c = self.cost if self.cost is not None else default_costs(self.vocab_size)
        return np.asarray(c, dtype=np.float64)


@dataclass(frozen=True)
class GameSpace:
    """Precomputed per-pair quantities of a world."""

    world: World
    pairs: tuple[tuple[StateId, ContextId], ...]
    ctx_slices: dict
    weight: np.ndarray  # p(c) pi(z|c)
    state_prior: np.ndarray  # pi(z|c)
    info: np.ndarray  # S(z|c) in nats
    sim: np.ndarray  # (J, J), zero across contexts

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)


def prepare(
    world: World,
    history: Mapping[ContextId, Sequence[StateId]] | None = None,
    floor_info: bool = False,
) -> GameSpace:
    """Lay out the (state, context) pairs and their semantic quantities."""
    pairs: list[tuple[StateId, ContextId]] = []
    slices = {}
    weight, sprior, info = [], [], []
    blocks = []
    for c in world.contexts:
        idx = build_copresheaf_index(world, c.id)
        prior = default_prior(world, idx)
        hist = list((history or {}).get(c.id, ()))
        start = len(pairs)
        for z, pz in zip(c.states, c.state_prior):
            pairs.append((z, c.id))
            weight.append(c.prior * pz)
            sprior.append(pz)
            info.append(conditioned_semantic_information(z, hist, idx, prior, floor=floor_info))
        slices[c.id] = slice(start, len(pairs))
        blocks.append(similarity_matrix(idx))
    n = len(pairs)
    sim = np.zeros((n, n))
    for c, block in zip(world.contexts, blocks):
        s = slices[c.id]
        sim[s, s] = block
    return GameSpace(
        world=world,
        pairs=tuple(pairs),
        ctx_slices=slices,
        weight=np.asarray(weight),
        state_prior=np.asarray(sprior),
        info=np.asarray(info),
        sim=sim,
    )


@dataclass(frozen=True)
class PolicyPair:
    speaker: np.ndarray  # (J, K)
    listener: np.ndarray  # (K, J)
    pairs: tuple[tuple[StateId, ContextId], ...]

    @property
    def vocab_size(self) -> int:
        return self.speaker.shape[1]

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "pairs": [list(p) for p in self.pairs],
            "speaker": self.speaker.tolist(),
            "listener": self.listener.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> PolicyPair:
        return cls(
            speaker=np.asarray(doc["speaker"], dtype=np.float64),
            listener=np.asarray(doc["listener"], dtype=np.float64),
            pairs=tuple((int(z), int(c)) for z, c in doc["pairs"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> PolicyPair:
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class Diagnostics:
    guard_activations: int = 0
    floored_rows: int = 0


# ---------------------------------------------------------------------------
# Updates
# ---------------------------------------------------------------------------


def speaker_marginal(speaker: np.ndarray, space: GameSpace) -> np.ndarray:
    """Per-context codeword marginal ``pi(u | c)`` broadcast to every pair row."""
    out = np.empty_like(speaker)
    for s in space.ctx_slices.values():
        m = space.state_prior[s] @ speaker[s]
        out[s] = m / m.sum()
    return out


def codeword_marginal(speaker: np.ndarray, space: GameSpace) -> np.ndarray:
    """Global codeword marginal ``pi(u) = sum_j p(c) pi(z|c) pi_s(u | j)``."""
    m = space.weight @ speaker
    return m / m.sum()


def speaker_update(
    prev: PolicyPair,
    space: GameSpace,
    cfg: GameConfig,
    lambda_s: float | None = None,
    rows: slice | None = None,
    diag: Diagnostics | None = None,
) -> np.ndarray:
    """One speaker step for a fixed listener.

    ``score(u) = log pi_prev(u|c) - lambda_s (c(u) - log pi_l(z, c | u)) / S(z|c)``,
    normalized per row. Rows with ``S(z|c) < 1e-12`` collapse onto the cheapest
    codeword (lowest index on ties).
    """
    lam = cfg.lambda_s if lambda_s is None else lambda_s
    costs = cfg.costs
    marg = np.log(np.maximum(speaker_marginal(prev.speaker, space), PROB_FLOOR))
    loglis = np.log(np.maximum(prev.listener.T, PROB_FLOOR))  # (J, K)
    out = prev.speaker.copy()
    sel = np.zeros(space.n_pairs, dtype=bool)
    sel[rows if rows is not None else slice(None)] = True
    guard = sel & (space.info < GUARD)
    live = sel & ~guard
    if diag is not None:
        diag.guard_activations += int(guard.sum())
    if guard.any():
        out[guard] = 0.0
        out[guard, int(np.argmin(costs))] = 1.0
    if live.any():
        score = marg[live] - lam * (costs[None, :] - loglis[live]) / space.info[live, None]
        out[live] = np.exp(score - logsumexp(score, axis=1, keepdims=True))
    return out


def listener_weights(speaker: np.ndarray, space: GameSpace, z_true: int | None = None) -> np.ndarray:
    """Coefficients ``a[u, j]`` of the linearized listener objective.

    ``a[u, j_hat] = S(z_hat) * sum_z p(c) pi(z|c) pi_s(u|z, c) Z(z_hat, z)`` with
    ``z`` ranging over the context of ``j_hat`` (or only the pair ``z_true``).
    """
    ws = speaker * space.weight[:, None]
    if z_true is not None:
        mask = np.zeros(space.n_pairs)
        mask[z_true] = 1.0
        ws = ws * mask[:, None]
    return space.info[None, :] * (ws.T @ space.sim.T)


def _solve_row(log_anchor: np.ndarray, a: np.ndarray, log_pu: float) -> np.ndarray | None:
    """Row ``anchor * exp(-alpha / a) / pi(u)`` with ``alpha`` fixing unit mass."""
    live = a > 0
    if not live.any():
        return None
    la, al = log_anchor[live], a[live]

    def h(alpha: float) -> float:
        return float(logsumexp(la - alpha / al) - log_pu)

    h0 = h(0.0)
    amax = float(al.max())
    if abs(h0) <= 1e-12:
        alpha = 0.0
    else:
        # h(alpha) <= h0 - alpha / amax for alpha > 0 (and >= for alpha < 0) brackets the root
        edge = amax * h0 * (1 + 1e-9)
        lo, hi = (0.0, edge) if h0 > 0 else (edge, 0.0)
        alpha = brentq(h, lo, hi, xtol=abs(edge) * 1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    row = np.full(len(a), PROB_FLOOR)
    row[live] = np.maximum(np.exp(la - alpha / al - log_pu), PROB_FLOOR)
    return row / row.sum()


def listener_anchor(prev: PolicyPair, space: GameSpace, cfg: GameConfig) -> np.ndarray:
    if cfg.anchor == "previous":
        return np.maximum(prev.listener, PROB_FLOOR)
    return np.broadcast_to(space.weight, prev.listener.shape)


def listener_update(
    prev: PolicyPair,
    space: GameSpace,
    cfg: GameConfig,
    z_true: int | None = None,
    diag: Diagnostics | None = None,
) -> np.ndarray:
    """One listener step for the speaker held in ``prev``.

    Each row solves its own multiplier ``alpha_u`` by a bracketed root search so
    the row has unit mass; entries with zero coefficient get the floor mass.
    A row with no positive coefficient (codeword never used) becomes uniform.
    """
    a = listener_weights(prev.speaker, space, z_true)
    anchor = listener_anchor(prev, space, cfg)
    pu = codeword_marginal(prev.speaker, space)
    out = np.empty_like(prev.listener)
    for u in range(prev.listener.shape[0]):
        row = None
        if pu[u] > 0:
            row = _solve_row(np.log(anchor[u]), a[u], math.log(pu[u]))
        if row is None:
            if diag is not None:
                diag.floored_rows += 1
            row = np.full(space.n_pairs, 1.0 / space.n_pairs)
        out[u] = row
    return out


def listener_objective(
    listener: np.ndarray, speaker: np.ndarray, space: GameSpace, anchor: np.ndarray
) -> float:
    """Concave lower bound maximized by :func:`listener_update`.

    ``sum_u sum_j a[u, j] pi_l[u, j] (1 + log anchor - log pi(u) - log pi_l[u, j])``.
    """
    a = listener_weights(speaker, space)
    pu = np.maximum(codeword_marginal(speaker, space), PROB_FLOOR)
    lp = np.log(np.maximum(listener, PROB_FLOOR))
    return float((a * listener * (1 + np.log(anchor) - np.log(pu)[:, None] - lp)).sum())


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def nmse_db(curr: PolicyPair, prev: PolicyPair) -> float:
    """Round-to-round change of the concatenated matrices in dB (floored at -300)."""
    a = np.concatenate([curr.speaker.ravel(), curr.listener.ravel()])
    b = np.concatenate([prev.speaker.ravel(), prev.listener.ravel()])
    num = float(np.sum((a - b) ** 2))
    if num == 0.0:
        return NMSE_FLOOR_DB
    den = max(float(np.sum(b**2)), 1e-30)
    return max(10.0 * math.log10(num / den), NMSE_FLOOR_DB)


def expected_V(pair: PolicyPair, space: GameSpace, cfg: GameConfig) -> float:
    """``E[c(u) - log pi_l(z, c | u)]``; ``inf`` if the listener misses a used codeword."""
    lis = pair.listener.T
    used = pair.speaker > 0
    if np.any(used & (lis <= 0)):
        return math.inf
    with np.errstate(divide="ignore"):
        v = cfg.costs[None, :] - np.log(np.where(used, lis, 1.0))
    return float(space.weight @ np.sum(np.where(used, pair.speaker * v, 0.0), axis=1))


def speaker_entropy(speaker: np.ndarray, space: GameSpace) -> float:
    """Prior-weighted mean row entropy (nats)."""
    p = speaker
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(p > 0, p * np.log(p), 0.0).sum(axis=1)
    return float(space.weight @ h)


@dataclass(frozen=True)
class SemanticRate:
    listener: float
    speaker: float
    bits_term: float
    semantics_term: float


def listener_semantic_rate(pair: PolicyPair, space: GameSpace) -> SemanticRate:
    """Semantic information extracted by the listener, plus the speaker-side split.

    ``listener`` averages, over the world prior and the speaker,
    ``sum_{j_hat} S(z_hat) pi_l log(pi_l / (p(c_hat) pi(z_hat|c_hat))) Z(z_hat, z)``.
    ``speaker`` is ``sum_j w_j [sum_u pi_s log(pi_s / pi(u|c))] S(z)``, reported
    with its bits and semantics factors averaged separately.
    """
    lis = np.maximum(pair.listener, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(lis > 0, lis * np.log(lis / space.weight[None, :]), 0.0)
    # inner[u, z] = sum_{j_hat} S(z_hat) * ratio[u, j_hat] * Z(z_hat, z)
    inner = (ratio * space.info[None, :]) @ space.sim
    listener = float(space.weight @ np.sum(pair.speaker * inner.T, axis=1))
    marg = speaker_marginal(pair.speaker, space)
    p = pair.speaker
    with np.errstate(divide="ignore", invalid="ignore"):
        bits = np.where(p > 0, p * np.log(p / marg), 0.0).sum(axis=1)
    return SemanticRate(
        listener=listener,
        speaker=float(space.weight @ (bits * space.info)),
        bits_term=float(space.weight @ bits),
        semantics_term=float(space.weight @ space.info),
    )


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------


TRACE_COLUMNS = ("round", "nmse_db", "expected_V", "lambda_s", "speaker_entropy", "listener_semantic_rate")


@dataclass
class ConvergenceTrace:
    rows: list[dict] = field(default_factory=list)
    converged: bool = False
    rounds: int = 0
    guard_activations: int = 0
    floored_rows: int = 0

    def rounds_to(self, threshold_db: float) -> int | None:
        for r in self.rows:
            if r["nmse_db"] <= threshold_db:
                return r["round"]
        return None

    def to_csv(self, float_fmt: str = ".12g") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.rows:
            w.writerow([r["round"]] + [format(r[c], float_fmt) for c in TRACE_COLUMNS[1:]])
        return buf.getvalue()


def uniform_pair(space: GameSpace, k: int) -> PolicyPair:
    j = space.n_pairs
    return PolicyPair(
        speaker=np.full((j, k), 1.0 / k),
        listener=np.tile(space.weight, (k, 1)),
        pairs=space.pairs,
    )


def initial_pair(space: GameSpace, cfg: GameConfig, seed: int) -> PolicyPair:
    """Uniform speaker; prior listener nudged by a zero-sum perturbation.

    The perturbation direction is a random balanced assignment of each
    context's states to codewords (``init_pattern="assignment"``) or Gaussian
    noise (``"gaussian"``). It is centered so every listener row stays
    normalized and it sums to zero over codewords, which breaks the codeword
    symmetry without shifting the codeword-averaged listener.
    """
    base = uniform_pair(space, cfg.vocab_size)
    k = cfg.vocab_size
    if cfg.init_jitter == 0 or k == 1:
        return base
    rng = np.random.default_rng(seed)
    if cfg.init_pattern == "gaussian":
        e = rng.standard_normal((k, space.n_pairs))
    else:
        e = np.zeros((k, space.n_pairs))
        for s in space.ctx_slices.values():
            js = np.arange(s.start, s.stop)
            order = rng.permutation(len(js))
            shift = int(rng.integers(k))
            e[(order + shift) % k, js] = 1.0
    e -= (e @ space.weight)[:, None] / space.weight.sum()
    e -= e.mean(axis=0, keepdims=True)
    e /= np.abs(e).max()
    lis = base.listener * (1.0 + cfg.init_jitter * e)
    return replace(base, listener=lis / lis.sum(axis=1, keepdims=True))


def _resolve_D(space: GameSpace, cfg: GameConfig) -> float | None:
    if cfg.D is None:
        return None
    if cfg.D == "auto":
        return 1.1 * expected_V(uniform_pair(space, cfg.vocab_size), space, cfg)
    return float(cfg.D)


def choose_lambda(
    prev: PolicyPair, space: GameSpace, cfg: GameConfig, D: float, rows: slice | None = None
) -> float:
    """Smallest multiplier in the bracket whose speaker step meets ``E[V] <= D``."""
    lo, hi, tol, iters = cfg.bisection

    def v(lam: float) -> float:
        sp = speaker_update(prev, space, cfg, lambda_s=lam, rows=rows)
        return expected_V(replace(prev, speaker=sp), space, cfg)

    if v(lo) <= D:
        return lo
    if v(hi) > D:
        return hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        val = v(mid)
        if val > D:
            lo = mid
        else:
            hi = mid
            if D - val <= tol:
                break
    return hi


def solve_language(
    world: World | GameSpace,
    cfg: GameConfig,
    sampler_seed: int,
    init: PolicyPair | None = None,
    history: Mapping[ContextId, Sequence[StateId]] | None = None,
) -> tuple[PolicyPair, ConvergenceTrace]:
    """Alternate speaker and listener steps until the NMSE stop level.

    Args:
        world: the world, or a prepared :class:`GameSpace`.
        cfg: solver settings.
        sampler_seed: seeds the initial perturbation and context sampling.
        init: warm-start pair (skips the perturbation).
        history: per-context previously sent states.
    """
    space = world if isinstance(world, GameSpace) else prepare(world, history, cfg.floor_info)
    pair = init if init is not None else initial_pair(space, cfg, sampler_seed)
    if pair.speaker.shape != (space.n_pairs, cfg.vocab_size):
        raise ValueError("initial pair does not match the world and vocabulary size")
    D = _resolve_D(space, cfg)
    rng = np.random.default_rng([sampler_seed, 1])
    ctx_ids = [c.id for c in space.world.contexts]
    ctx_p = np.array([c.prior for c in space.world.contexts])
    trace = ConvergenceTrace()
    diag = Diagnostics()
    lam = cfg.lambda_s
    for rnd in range(1, cfg.max_rounds + 1):
        rows = None
        if cfg.sample_contexts:
            rows = space.ctx_slices[ctx_ids[int(rng.choice(len(ctx_ids), p=ctx_p))]]
        if D is not None:
            lam = choose_lambda(pair, space, cfg, D, rows)
        sp = speaker_update(pair, space, cfg, lambda_s=lam, rows=rows, diag=diag)
        mid = replace(pair, speaker=sp)
        lis = listener_update(mid, space, cfg, diag=diag)
        new = replace(mid, listener=lis)
        change = nmse_db(new, pair)
        pair = new
        trace.rows.append(
            {
                "round": rnd,
                "nmse_db": change,
                "expected_V": expected_V(pair, space, cfg),
                "lambda_s": lam,
                "speaker_entropy": speaker_entropy(pair.speaker, space),
                "listener_semantic_rate": listener_semantic_rate(pair, space).listener,
            }
        )
        trace.rounds = rnd
        if change <= cfg.nmse_stop_db:
            trace.converged = True
            break
    trace.guard_activations = diag.guard_activations
    trace.floored_rows = diag.floored_rows
    if not trace.converged and cfg.max_rounds > 0:
        log.info("signaling game stopped at max_rounds=%d without reaching %.1f dB", cfg.max_rounds, cfg.nmse_stop_db)
    return pair, trace
