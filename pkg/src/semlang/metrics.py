"""Evaluation metrics and empirical checks of the length and error bounds.

Entropies for the bound checks are in bits; everything else uses nats.
"""
from __future__ import annotations

import json
import math
from collections import Counter
from collections.abc import Callable, Hashable, Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass

import numpy as np

from .channel import Codebook, huffman_codebook, trial_rng
from .logic import Connective, Formula, FragmentChain, evaluate_formula
from .world import ContextId, World

PROB_FLOOR = 1e-12
SLACK = 1e-9
MIN_ERROR_SAMPLES = 1000


# ---------------------------------------------------------------------------
# Entropy estimators
# ---------------------------------------------------------------------------


def entropy_bits(p: Sequence[float]) -> float:
    p = np.asarray(p, dtype=np.float64)
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def plugin_entropy(labels: Iterable[Hashable], miller_madow: bool = True) -> float:
    """Empirical entropy in bits, optionally with the Miller–Madow bias correction."""
    counts = np.array(list(Counter(labels).values()), dtype=np.float64)
    n = counts.sum()
    if n == 0:
        return 0.0
    h = entropy_bits(counts / n)
    if miller_madow:
        h += (len(counts) - 1) / (2 * n * math.log(2))
    return h


def conditional_entropy(
    x: Sequence[Hashable], y: Sequence[Hashable], miller_madow: bool = True
) -> float:
    """``H(X | Y) = H(X, Y) - H(Y)`` from paired samples."""
    if len(x) != len(y):
        raise ValueError("paired samples must have equal length")
    return plugin_entropy(zip(x, y), miller_madow) - plugin_entropy(y, miller_madow)


# ---------------------------------------------------------------------------
# Distortion, influence, reliability
# ---------------------------------------------------------------------------


FormulaSet = Sequence[tuple[Formula, Sequence[Connective]]]


def formula_values(chain: FragmentChain, formulas: FormulaSet) -> np.ndarray:
    return np.array([evaluate_formula(f, chain, conns) for f, conns in formulas])


def semantic_distortion(z: FragmentChain, z_hat: FragmentChain, formulas: FormulaSet) -> float:
    """Sum of squared differences of formula truth degrees on the two descriptions."""
    return distortion_from_values(formula_values(z, formulas), formula_values(z_hat, formulas))


def distortion_from_values(phi: Sequence[float], phi_hat: Sequence[float]) -> float:
    d = np.asarray(phi, dtype=np.float64) - np.asarray(phi_hat, dtype=np.float64)
    return float(d @ d)


def info_distortion(s: float, s_hat: float) -> float:
    return float((s - s_hat) ** 2)


def causal_influence(
    action_given_true: Sequence[float],
    channel: Sequence[float],
    decoder: np.ndarray,
    action_given_decoded: np.ndarray,
    floor: float = PROB_FLOOR,
) -> float:
    """KL divergence between the true-state action distribution and its channel marginal.

    Args:
        action_given_true: ``p(a | z)`` over actions.
        channel: ``p(x | u)`` over received symbols for the transmitted codeword.
        decoder: ``(X, Z)`` matrix ``p(z_hat | x)``.
        action_given_decoded: ``(Z, A)`` matrix ``p(a | z_hat)``.
        floor: lower clip on the marginal; ``0`` lets unsupported actions give ``inf``.

    Returns:
        ``D_KL(p(a|z) || sum_x p(x|u) sum_z_hat p(z_hat|x) p(a|z_hat))`` in nats.
    """
    p = np.asarray(action_given_true, dtype=np.float64)
    q = np.asarray(channel, dtype=np.float64) @ np.asarray(decoder) @ np.asarray(action_given_decoded)
    if floor > 0:
        q = np.maximum(q, floor)
        q = q / q.sum()
    mask = p > 0
    if np.any(q[mask] == 0):
        return math.inf
    return float(max(0.0, np.sum(p[mask] * np.log(p[mask] / q[mask]))))


def effectiveness(influence: float) -> float:
    return 1.0 / (1.0 + influence)


@dataclass(frozen=True)
class Reliability:
    estimate: float
    half_width: float
    n_trials: int


def semantic_reliability(
    trial_stream: Callable[[np.random.Generator], float] | Iterable[float],
    delta: float,
    n_trials: int,
    seed: int = 0,
) -> Reliability:
    """Fraction of trials with distortion below ``delta`` and its 95% normal half-width.

    ``trial_stream`` is either an iterable of distortions or a callable drawing
    one distortion from the generator of each trial.
    """
    if n_trials < 100:
        raise ValueError("need at least 100 trials")
    if callable(trial_stream):
        values = [trial_stream(trial_rng(seed, t)) for t in range(n_trials)]
    else:
        values = [v for _, v in zip(range(n_trials), trial_stream)]
        if len(values) < n_trials:
            raise ValueError("trial stream ended early")
    hits = np.asarray(values) < delta
    est = float(hits.mean())
    return Reliability(est, 1.96 * math.sqrt(est * (1 - est) / n_trials), n_trials)


@dataclass(frozen=True)
class DistortionReport:
    formula_distortion: float
    info_distortion: float
    reliability_estimate: float
    half_width: float
    delta: float
    epsilon: float

    @property
    def meets_target(self) -> bool:
        return self.reliability_estimate >= 1 - self.epsilon


# ---------------------------------------------------------------------------
# Representation length bounds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundsReport:
    lower: float
    measured: float
    upper: float
    satisfied: bool
    classical_lower: float
    classical_measured: float
    classical_upper: float
    classical_upper_worst_context: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def shannon_length(p: Sequence[float]) -> float:
    """``sum p ceil(-log2 p)``: expected length of the Shannon code."""
    p = np.asarray(p, dtype=np.float64)
    p = p[p > 0]
    return float(np.sum(p * np.ceil(-np.log2(p) - 1e-12)))


def context_marginals(world: World, speaker_rows: Mapping[ContextId, np.ndarray] | None = None) -> dict:
    """``pi(u | c)`` per context; without a speaker each state is its own codeword."""
    out = {}
    for c in world.contexts:
        prior = np.asarray(c.state_prior, dtype=np.float64)
        out[c.id] = prior if speaker_rows is None else prior @ np.asarray(speaker_rows[c.id])
    return out


def esc_codebooks(marginals: Mapping[ContextId, np.ndarray]) -> dict:
    return {cid: huffman_codebook(m / m.sum()) for cid, m in marginals.items()}


def check_length_bounds(
    world: World,
    codebooks: Mapping[ContextId, Codebook] | None = None,
    marginals: Mapping[ContextId, np.ndarray] | None = None,
) -> BoundsReport:
    """Representation-length bracket for context-aware codes and the classical comparison.

    ``lower = sum_c p(c) H(z|c)``, ``measured = sum_c p(c) sum_u pi(u|c) l_u`` and
    ``upper = sum_c p(c) sum_z pi(z|c) ceil(-log2 pi(z|c))``. The classical system
    codes ``z`` without the context: its lower bound is ``H(z)`` of the marginal,
    its measured length a Huffman code on that marginal and its upper bound the
    marginal Shannon-code length; the worst-context expression is also reported.
    """
    marginals = dict(marginals) if marginals is not None else context_marginals(world)
    codebooks = dict(codebooks) if codebooks is not None else esc_codebooks(marginals)
    lower = measured = upper = 0.0
    worst = 0.0
    marginal_z: dict = {}
    for c in world.contexts:
        prior = np.asarray(c.state_prior, dtype=np.float64)
        lower += c.prior * entropy_bits(prior)
        upper += c.prior * shannon_length(prior)
        worst = max(worst, shannon_length(prior))
        m = np.asarray(marginals[c.id], dtype=np.float64)
        measured += c.prior * codebooks[c.id].average_length(m / m.sum())
        for z, pz in zip(c.states, prior):
            marginal_z[z] = marginal_z.get(z, 0.0) + c.prior * pz
    pz = np.array([marginal_z[z] for z in sorted(marginal_z)])
    pz /= pz.sum()
    classical = huffman_codebook(pz)
    return BoundsReport(
        lower=lower,
        measured=measured,
        upper=upper,
        satisfied=bool(lower - SLACK <= measured <= upper + SLACK),
        classical_lower=entropy_bits(pz),
        classical_measured=classical.average_length(pz),
        classical_upper=shannon_length(pz),
        classical_upper_worst_context=worst,
    )


# ---------------------------------------------------------------------------
# Error-probability bounds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ErrorSample:
    """One trial: the semantic side (ESC) and the syntactic side (classical)."""

    context: ContextId
    meaning: Hashable  # copresheaf identity of the true state
    decoded: Hashable  # listener's decoded state
    uncovered: frozenset  # H^z minus (H^z ∩ H^ẑ)
    semantic_error: bool  # H^z != H^ẑ
    classical_true: Hashable
    classical_decoded: Hashable


@dataclass(frozen=True)
class ErrorBoundsReport:
    n_samples: int
    n_states: int
    h_z_given_zhat: float
    h_e_given_zhat: float
    h_zc_hat_given_zc: float
    semantic_bound: float
    classical_bound: float
    semantic_error: float
    syntactic_error: float
    ordering_holds: bool
    semantic_above_bound: bool
    syntactic_above_bound: bool
    insufficient_samples: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def check_error_bounds(samples: Sequence[ErrorSample], n_states: int) -> ErrorBoundsReport:
    """Fano-style lower bounds on the semantic and syntactic error probabilities.

    ``classical = (H(ẑ_c | z_c) - 1) / log2 |W|`` and
    ``semantic = (H(z | ẑ) - H(e | ẑ)) / log2 |W|`` with ``z`` entering through
    its copresheaf identity and the decoded side keyed by ``(context, ẑ)``.
    Entropies are Miller–Madow corrected plug-in estimates in bits.
    """
    if n_states < 2:
        raise ValueError("need at least two states")
    n = len(samples)
    zhat = [(s.context, s.decoded) for s in samples]
    meaning = [(s.context, s.meaning) for s in samples]
    h_z = conditional_entropy(meaning, zhat)
    h_e = conditional_entropy([s.uncovered for s in samples], zhat)
    h_c = conditional_entropy([s.classical_decoded for s in samples], [s.classical_true for s in samples])
    log_w = math.log2(n_states)
    sem_bound = (h_z - h_e) / log_w
    cls_bound = (h_c - 1.0) / log_w
    s_e = float(np.mean([s.semantic_error for s in samples])) if n else 0.0
    p_e = float(np.mean([s.classical_decoded != s.classical_true for s in samples])) if n else 0.0
    return ErrorBoundsReport(
        n_samples=n,
        n_states=n_states,
        h_z_given_zhat=h_z,
        h_e_given_zhat=h_e,
        h_zc_hat_given_zc=h_c,
        semantic_bound=sem_bound,
        classical_bound=cls_bound,
        semantic_error=s_e,
        syntactic_error=p_e,
        ordering_holds=bool(cls_bound >= sem_bound - SLACK),
        semantic_above_bound=bool(s_e >= sem_bound - SLACK),
        syntactic_above_bound=bool(p_e >= cls_bound - SLACK),
        insufficient_samples=n < MIN_ERROR_SAMPLES,
    )
