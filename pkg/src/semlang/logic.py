"""Real-valued logic over reconstructed state descriptions.

A formula is ``(l_1 and ... and l_{D-1}) implies l_D``. Literals read one
coordinate of the state description (the concatenated fragments of a chain),
optionally negated. The antecedent is a left fold of trainable logistic
conjunctions starting from the constant ``true``; implication is the
Łukasiewicz residuum.
"""
from __future__ import annotations

import json
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

SATURATED_BETA = 20.0
SATURATED_WEIGHT = 40.0


@dataclass(frozen=True)
class Literal:
    coord: int
    negated: bool = False

    def __call__(self, z: np.ndarray) -> float:
        v = float(np.clip(z[self.coord], 0.0, 1.0))
        return 1.0 - v if self.negated else v


@dataclass(frozen=True)
class Formula:
    literals: tuple[Literal, ...]

    def __post_init__(self) -> None:
        if len(self.literals) < 2:
            raise ValueError("a formula needs at least two literals")

    @property
    def D(self) -> int:
        return len(self.literals)

    def to_dict(self) -> dict:
        return {
            "literals": [{"coord": l.coord, "negated": l.negated} for l in self.literals],
            "structure": "and-chain-implies",
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> Formula:
        if doc.get("structure", "and-chain-implies") != "and-chain-implies":
            raise ValueError(f"unsupported structure {doc['structure']!r}")
        return cls(tuple(Literal(int(l["coord"]), bool(l.get("negated", False))) for l in doc["literals"]))


@dataclass(frozen=True)
class Connective:
    """Logistic conjunction ``f(beta - w_a.(1 - a) - w_b.(1 - b))``."""

    beta: float
    w_a: np.ndarray
    w_b: np.ndarray

    def __post_init__(self) -> None:
        w_a = np.atleast_1d(np.asarray(self.w_a, dtype=np.float64))
        w_b = np.atleast_1d(np.asarray(self.w_b, dtype=np.float64))
        if np.any(w_a < 0) or np.any(w_b < 0):
            raise ValueError("connective weights must be nonnegative")
        object.__setattr__(self, "w_a", w_a)
        object.__setattr__(self, "w_b", w_b)
        object.__setattr__(self, "beta", float(self.beta))

    def to_list(self) -> list:
        return [self.beta, self.w_a.tolist(), self.w_b.tolist()]

    @classmethod
    def from_list(cls, doc: Sequence) -> Connective:
        return cls(doc[0], np.asarray(doc[1]), np.asarray(doc[2]))


def initial_connective(len_a: int = 1, len_b: int = 1) -> Connective:
    return Connective(1.0, np.ones(len_a), np.ones(len_b))


def saturated_connective(len_a: int = 1, len_b: int = 1) -> Connective:
    return Connective(SATURATED_BETA, np.full(len_a, SATURATED_WEIGHT), np.full(len_b, SATURATED_WEIGHT))


@dataclass(frozen=True)
class FragmentChain:
    fragments: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        frags = tuple(np.atleast_1d(np.asarray(f, dtype=np.float64)) for f in self.fragments)
        if len(frags) < 2:
            raise ValueError("a chain needs at least two fragments")
        for f in frags:
            if np.any((f < 0) | (f > 1)):
                raise ValueError("fragment entries must lie in [0, 1]")
        object.__setattr__(self, "fragments", frags)

    @property
    def R(self) -> int:
        return len(self.fragments)

    def description(self) -> np.ndarray:
        return np.concatenate(self.fragments)


def conjoin(conn: Connective, z_a: np.ndarray, z_b: np.ndarray) -> float:
    z_a = np.atleast_1d(np.asarray(z_a, dtype=np.float64))
    z_b = np.atleast_1d(np.asarray(z_b, dtype=np.float64))
    if z_a.shape != conn.w_a.shape or z_b.shape != conn.w_b.shape:
        raise ValueError("fragment lengths must match connective weights")
    return float(expit(conn.beta - conn.w_a @ (1.0 - z_a) - conn.w_b @ (1.0 - z_b)))


def implies(a: float, b: float) -> float:
    """Łukasiewicz residuum ``min(1, 1 - a + b)``."""
    return min(1.0, 1.0 - a + b)


def fold_chain(
    connectives: Sequence[Connective], fragments: Sequence[np.ndarray], order: str = "left"
) -> float:
    """Fold fragments pairwise through ``conjoin``; each result becomes a 1-vector.

    ``order="left"`` computes ``((z_1, z_2), z_3) ...``; ``"right"`` computes
    ``(z_1, (z_2, (z_3, ...)))``. Connective ``k`` joins the ``k``-th pair in
    evaluation order.
    """
    frags = [np.atleast_1d(np.asarray(f, dtype=np.float64)) for f in fragments]
    if len(connectives) != len(frags) - 1:
        raise ValueError("need one connective per adjacent pair")
    if order == "left":
        acc = frags[0]
        for conn, z in zip(connectives, frags[1:]):
            acc = np.array([conjoin(conn, acc, z)])
    elif order == "right":
        acc = frags[-1]
        for conn, z in zip(connectives, reversed(frags[:-1])):
            acc = np.array([conjoin(conn, z, acc)])
    else:
        raise ValueError("order must be 'left' or 'right'")
    return float(acc[0])


def literal_values(formula: Formula, chain: FragmentChain) -> np.ndarray:
    z = chain.description()
    for l in formula.literals:
        if not 0 <= l.coord < len(z):
            raise ValueError(f"literal coordinate {l.coord} outside the state description")
    return np.array([l(z) for l in formula.literals])


def evaluate_formula(formula: Formula, chain: FragmentChain, connectives: Sequence[Connective]) -> float:
    """Truth degree of ``formula`` on ``chain``.

    The antecedent folds ``true, l_1, ..., l_{D-1}`` through the ``D - 1``
    scalar connectives; the result implies ``l_D``.
    """
    if len(connectives) != formula.D - 1:
        raise ValueError(f"formula with D={formula.D} needs {formula.D - 1} connectives")
    v = literal_values(formula, chain)
    a = fold_chain(connectives, [np.ones(1), *v[:-1, None]])
    return implies(a, float(v[-1]))


def boolean_value(formula: Formula, chain: FragmentChain) -> bool:
    v = literal_values(formula, chain) >= 0.5
    return (not bool(np.all(v[:-1]))) or bool(v[-1])


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LogicConfig:
    epochs: int = 500
    lr: float = 0.5


def _pack(connectives: Sequence[Connective]) -> np.ndarray:
    return np.array([[c.beta, float(c.w_a[0]), float(c.w_b[0])] for c in connectives])


def _unpack(theta: np.ndarray) -> list[Connective]:
    return [Connective(b, np.array([wa]), np.array([wb])) for b, wa, wb in theta]


def loss_and_grad(
    theta: np.ndarray, values: np.ndarray, targets: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean squared error of the formula output and its gradient.

    Args:
        theta: ``(D - 1, 3)`` rows of ``(beta, w_a, w_b)`` for scalar connectives.
        values: ``(M, D)`` literal values per example.
        targets: ``(M,)`` targets in {0, 1}.
    """
    m, d = values.shape
    acts = np.empty((m, d))  # acts[:, k] = antecedent after k literals
    acts[:, 0] = 1.0
    for k in range(d - 1):
        beta, wa, wb = theta[k]
        acts[:, k + 1] = expit(beta - wa * (1 - acts[:, k]) - wb * (1 - values[:, k]))
    a = acts[:, -1]
    raw = 1.0 - a + values[:, -1]
    y = np.minimum(1.0, raw)
    err = y - targets
    loss = float(np.mean(err**2))
    # d y / d a is -1 below the cap and 0 on it
    g_a = np.where(raw < 1.0, -2.0 * err / m, 0.0)
    grad = np.zeros_like(theta)
    for k in range(d - 2, -1, -1):
        beta, wa, wb = theta[k]
        out = acts[:, k + 1]
        g_s = g_a * out * (1 - out)
        grad[k, 0] = g_s.sum()
        grad[k, 1] = -(g_s * (1 - acts[:, k])).sum()
        grad[k, 2] = -(g_s * (1 - values[:, k])).sum()
        g_a = g_s * wa
    return loss, grad


@dataclass(frozen=True)
class TrainedConnectives:
    connectives: tuple[Connective, ...]
    losses: tuple[float, ...]

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")

    def to_json(self) -> str:
        return json.dumps({"connectives": [c.to_list() for c in self.connectives], "losses": list(self.losses)})

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> TrainedConnectives:
        doc = json.loads(Path(path).read_text())
        return cls(tuple(Connective.from_list(c) for c in doc["connectives"]), tuple(doc["losses"]))


def train_connectives(
    formula: Formula,
    dataset: Iterable[tuple[FragmentChain, float]],
    cfg: LogicConfig = LogicConfig(),
    seed: int = 0,
    init: Sequence[Connective] | None = None,
) -> TrainedConnectives:
    """Full-batch gradient descent on the squared error, weights clamped at zero.

    Examples are visited in a seeded order only to fix the floating-point
    summation order; the result is deterministic for a given seed.
    """
    data = list(dataset)
    if not data:
        raise ValueError("dataset is empty")
    order = np.random.default_rng(seed).permutation(len(data))
    values = np.array([literal_values(formula, data[i][0]) for i in order])
    targets = np.array([float(data[i][1]) for i in order])
    conns = list(init) if init is not None else [initial_connective() for _ in range(formula.D - 1)]
    theta = _pack(conns)
    losses = []
    for _ in range(cfg.epochs):
        loss, grad = loss_and_grad(theta, values, targets)
        losses.append(loss)
        theta -= cfg.lr * grad
        theta[:, 1:] = np.maximum(theta[:, 1:], 0.0)
    if cfg.epochs:
        losses.append(loss_and_grad(theta, values, targets)[0])
        conns = _unpack(theta)
    return TrainedConnectives(tuple(conns), tuple(losses))


def accuracy(
    formula: Formula, connectives: Sequence[Connective], dataset: Iterable[tuple[FragmentChain, float]]
) -> float:
    hits = [(evaluate_formula(formula, c, connectives) > 0.5) == bool(t) for c, t in dataset]
    return float(np.mean(hits))
