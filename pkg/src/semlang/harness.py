"""Command-line entry point and experiment orchestration.

Every command is a pure function of the configuration, its input files and
the seed. Metric files are CSV (header row, floats at 12 significant digits,
trailing ``# config_hash=...`` line) or JSON with sorted keys; wall-clock time
is written only to ``run_record.json``.

Exit codes: 0 success, 2 invalid config, 3 missing or mismatched artifact,
4 non-convergence under ``--strict``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import time
from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import MISSING, asdict, dataclass, field, fields
from importlib import metadata
from pathlib import Path

import numpy as np

from .causal import (
    GflowConfig,
    chain_scm,
    exact_posterior,
    load_data,
    random_er_scm,
    sample_scm,
    save_data,
    terminal_distribution,
    train_gflownet,
)
from .channel import AwgnQam, Bsc, ChannelModel
from .game import GameConfig, PolicyPair, prepare, solve_language
from .metrics import check_error_bounds, check_length_bounds, effectiveness
from .pipeline import (
    Codec,
    PipelineRun,
    SemanticTable,
    error_samples,
    policy_codec,
    run_pipeline,
    score_run,
    synonym_codec,
    voronoi_codec,
)
from .world import World, WorldError, make_world, random_world, world_to_dict

log = logging.getLogger("semlang")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ARTIFACT = 3
EXIT_NOT_CONVERGED = 4
FLOAT_FMT = ".12g"


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration."""


class ArtifactError(RuntimeError):
    """A required input file is missing or was produced under another configuration."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _tuple(obj, name: str) -> None:
    val = getattr(obj, name)
    if val is not None and not isinstance(val, tuple):
        _require(isinstance(val, Sequence) and not isinstance(val, str), f"{name} must be a list")
        object.__setattr__(obj, name, tuple(val))


@dataclass(frozen=True)
class WorldParams:
    n_states: int = 100
    n_contexts: int = 35
    min_states: int = 5
    max_states: int = 20
    edge_prob: float = 0.15
    alias_prob: float = 0.1
    prior_concentration: float | None = None
    task: int = 0
    task_concentration: float = 5.0

    def __post_init__(self) -> None:
        _require(self.n_states > 0 and self.n_contexts > 0, "world sizes must be positive")
        _require(1 <= self.min_states <= self.max_states <= self.n_states, "need 1 <= min_states <= max_states <= n_states")
        _require(0 <= self.edge_prob <= 1 and 0 <= self.alias_prob <= 1, "world probabilities must lie in [0, 1]")
        _require(self.task >= 0 and self.task_concentration > 0, "task must be >= 0 with positive concentration")


@dataclass(frozen=True)
class GameParams:
    vocab_size: int = 5
    lambda_s: float = 20.0
    D: float | str | None = None
    rounds: int = 100
    nmse_stop_db: float = -50.0
    cost: tuple[float, ...] | None = None
    anchor: str = "prior"
    init_jitter: float = 1e-4

    def __post_init__(self) -> None:
        _tuple(self, "cost")
        _require(self.vocab_size > 0, "vocab_size must be positive")
        try:
            self.to_game_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def to_game_config(self) -> GameConfig:
        return GameConfig(
            vocab_size=self.vocab_size,
            lambda_s=self.lambda_s,
            D=self.D,
            cost=self.cost,
            max_rounds=self.rounds,
            nmse_stop_db=self.nmse_stop_db,
            anchor=self.anchor,
            init_jitter=self.init_jitter,
        )


@dataclass(frozen=True)
class CausalParams:
    n_nodes: int = 3
    graph: str = "chain"
    avg_edges: float = 1.0
    edge_weight: float = 1.0
    noise_variance: float = 0.01
    samples: int = 100
    batches: int = 50_000
    batch_size: int = 100
    lr: float = 1e-3
    variance: str = "pooled"

    def __post_init__(self) -> None:
        _require(1 <= self.n_nodes <= 5, "n_nodes must lie in [1, 5]")
        _require(self.graph in ("chain", "er"), "graph must be 'chain' or 'er'")
        _require(self.samples > 0 and self.batches > 0 and self.batch_size > 0, "causal sizes must be positive")
        _require(self.noise_variance > 0 and self.lr > 0, "noise_variance and lr must be positive")
        _require(self.variance in ("pooled", "per_node"), "variance must be 'pooled' or 'per_node'")

    def to_gflow_config(self) -> GflowConfig:
        return GflowConfig(n_batches=self.batches, batch_size=self.batch_size, lr=self.lr, variance=self.variance)


@dataclass(frozen=True)
class ChannelParams:
    kind: str = "bsc"
    p: tuple[float, ...] = (0.0, 0.05, 0.1, 0.2, 0.3, 0.5)
    snr_db: tuple[float, ...] = (10.0, 15.0, 20.0, 25.0, 30.0)
    qam_order: int = 64

    def __post_init__(self) -> None:
        _tuple(self, "p")
        _tuple(self, "snr_db")
        _require(self.kind in ("bsc", "awgn"), "channel kind must be 'bsc' or 'awgn'")
        _require(all(0 <= p <= 0.5 for p in self.p), "crossover probabilities must lie in [0, 0.5]")

    def grid(self) -> list[tuple[float, ChannelModel]]:
        if self.kind == "bsc":
            return [(p, Bsc(p)) for p in self.p]
        try:
            return [(s, AwgnQam(s, self.qam_order)) for s in self.snr_db]
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


@dataclass(frozen=True)
class TransmitParams:
    n_trials: int = 10_000
    delta: float = 0.01
    encoder: str = "synonym"
    code: str = "huffman"
    voronoi_k: int = 5

    def __post_init__(self) -> None:
        _require(self.n_trials >= 100, "n_trials must be at least 100")
        _require(self.delta > 0 and self.voronoi_k > 0, "delta and voronoi_k must be positive")
        _require(self.encoder in ("synonym", "voronoi", "policy"), "encoder must be synonym, voronoi or policy")
        _require(self.code in ("huffman", "fixed"), "code must be 'huffman' or 'fixed'")


def _error_world() -> WorldParams:
    return WorldParams(n_states=32, n_contexts=4, min_states=8, max_states=16, edge_prob=0.15, alias_prob=0.3)


@dataclass(frozen=True)
class BoundsParams:
    length_seeds: tuple[int, ...] = ()
    error_seeds: tuple[int, ...] = ()
    error_p: tuple[float, ...] = (0.05, 0.1)
    error_trials: int = 10_000
    error_world: WorldParams = field(default_factory=_error_world)

    def __post_init__(self) -> None:
        for name in ("length_seeds", "error_seeds", "error_p"):
            _tuple(self, name)
        _require(self.error_trials > 0, "error_trials must be positive")
        _require(all(0 <= p <= 0.5 for p in self.error_p), "error_p must lie in [0, 0.5]")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a command needs; ``seed`` has no default."""

    seed: int
    experiment: str = "default"
    out: str = "runs"
    world: WorldParams = field(default_factory=WorldParams)
    game: GameParams = field(default_factory=GameParams)
    causal: CausalParams = field(default_factory=CausalParams)
    channel: ChannelParams = field(default_factory=ChannelParams)
    transmit: TransmitParams = field(default_factory=TransmitParams)
    bounds: BoundsParams = field(default_factory=BoundsParams)

    def __post_init__(self) -> None:
        _require(isinstance(self.seed, int) and not isinstance(self.seed, bool) and self.seed >= 0,
                 "seed must be a nonnegative integer")
        _require(bool(self.experiment), "experiment must be named")

    @classmethod
    def from_dict(cls, doc: Mapping) -> ExperimentConfig:
        return _build(cls, doc, "config")

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        """Hash of everything but the output directory."""
        doc = self.to_dict()
        doc.pop("out")
        return canonical_hash(doc)

    def section_hash(self, *names: str) -> str:
        doc = self.to_dict()
        return canonical_hash({"seed": self.seed, **{n: doc[n] for n in names}})


def _build(cls, doc, path: str):
    if not isinstance(doc, Mapping):
        raise ConfigError(f"{path} must be an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(doc) - set(known))
    if unknown:
        raise ConfigError(f"unknown keys in {path}: {', '.join(unknown)}")
    kwargs = {}
    for name, f in known.items():
        if name not in doc:
            if f.default is MISSING and f.default_factory is MISSING:
                raise ConfigError(f"{path}.{name} is required")
            continue
        val = doc[name]
        sub = _SECTIONS.get(f.type) if isinstance(f.type, str) else None
        kwargs[name] = _build(sub, val, f"{path}.{name}") if sub else val
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


_SECTIONS = {
    cls.__name__: cls
    for cls in (WorldParams, GameParams, CausalParams, ChannelParams, TransmitParams, BoundsParams)
}


def canonical_hash(doc: Mapping) -> str:
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def apply_overrides(doc: dict, overrides: Sequence[str]) -> dict:
    """Apply ``a.b.c=value`` overrides; values parse as JSON, else as strings."""
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        node = doc
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = val
    return doc


def load_config(path: str | None, overrides: Sequence[str] = (), seed: int | None = None, out: str | None = None) -> ExperimentConfig:
    doc: dict = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    doc = apply_overrides(doc, overrides)
    if seed is not None:
        doc["seed"] = seed
    if out is not None:
        doc["out"] = out
    return ExperimentConfig.from_dict(doc)


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), FLOAT_FMT)
    return str(v)


def csv_text(columns: Sequence[str], rows: Sequence[Mapping], config_hash: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    buf.write(f"# config_hash={config_hash}\n")
    return buf.getvalue()


def read_csv(path: str | Path) -> tuple[list[str], list[dict], str | None]:
    """Parse a harness CSV into header, rows and the trailing config hash."""
    lines = Path(path).read_text().splitlines()
    tag = None
    if lines and lines[-1].startswith("# config_hash="):
        tag = lines.pop().split("=", 1)[1]
    reader = csv.reader(lines)
    header = next(reader)
    return header, [dict(zip(header, r)) for r in reader], tag


def _json_text(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def code_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


@dataclass
class RunRecord:
    command: str
    config_hash: str
    version: str
    rows: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    wall_clock_s: float = 0.0

    def save(self, out_dir: Path) -> None:
        (out_dir / "run_record.json").write_text(_json_text(asdict(self)))


class Outputs:
    """Writes a command's artifacts into the output directory."""

    def __init__(self, cfg: ExperimentConfig, command: str):
        self.cfg = cfg
        self.dir = Path(cfg.out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.hash = cfg.hash()
        self.record = RunRecord(command, self.hash, code_version())

    def path(self, name: str) -> Path:
        return self.dir / name

    def text(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text(text)
        self.record.outputs.append(name)
        return p

    def csv(self, name: str, columns: Sequence[str], rows: Sequence[Mapping]) -> Path:
        return self.text(name, csv_text(columns, rows, self.hash))

    def json(self, name: str, doc) -> Path:
        return self.text(name, _json_text(doc))


def _provenance(doc: Mapping, expected: str, name: str) -> None:
    # hand-built artifacts carry no provenance and are accepted as is
    got = doc.get("provenance", {}).get("config_hash")
    if got is not None and got != expected:
        raise ArtifactError(f"{name} was produced under config hash {got}, expected {expected}")


def _read_json(path: Path, name: str) -> dict:
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise ArtifactError(f"{name} not found at {path}") from None


# ---------------------------------------------------------------------------
# World generation
# ---------------------------------------------------------------------------


def task_variant(world: World, task: int, seed: int, concentration: float = 5.0) -> World:
    """Same states and contexts with Dirichlet-redrawn state priors; task 0 is the base world."""
    if task == 0:
        return world
    rng = np.random.default_rng([seed, task])
    doc = world_to_dict(world)
    for c in doc["contexts"]:
        sp = rng.dirichlet(np.full(len(c["states"]), concentration))
        c["state_prior"] = list(sp / sp.sum())
    return make_world(doc["contexts"], doc["states"])


def build_world(p: WorldParams, seed: int) -> World:
    w = random_world(
        p.n_states,
        p.n_contexts,
        p.min_states,
        p.max_states,
        seed,
        edge_prob=p.edge_prob,
        alias_prob=p.alias_prob,
        prior_concentration=p.prior_concentration,
    )
    return task_variant(w, p.task, seed, p.task_concentration)


def cmd_gen_world(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    out = Outputs(cfg, "gen-world")
    world = build_world(cfg.world, cfg.seed)
    doc = world_to_dict(world)
    doc["provenance"] = {"config_hash": cfg.section_hash("world")}
    out.json("world.json", doc)
    sizes = [len(c.states) for c in world.contexts]
    out.record.rows = [{"n_states": len(world.states), "n_contexts": len(world.contexts),
                        "min_context_size": min(sizes), "max_context_size": max(sizes)}]
    return finish(out)


def _load_world(cfg: ExperimentConfig, path: str | None) -> World:
    p = Path(path) if path else Path(cfg.out) / "world.json"
    doc = _read_json(p, "world file")
    _provenance(doc, cfg.section_hash("world"), "world file")
    try:
        return make_world(doc["contexts"], doc["states"])
    except (KeyError, WorldError) as exc:
        raise ArtifactError(f"world file {p} is invalid: {exc}") from None


# ---------------------------------------------------------------------------
# Language training
# ---------------------------------------------------------------------------


def cmd_train_language(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    world = _load_world(cfg, args.world)
    out = Outputs(cfg, "train-language")
    game = cfg.game.to_game_config()
    init = None
    if args.init:
        init = PolicyPair.from_dict(_read_json(Path(args.init), "initial policy"))
    space = prepare(world)
    try:
        pair, trace = solve_language(space, game, cfg.seed, init=init)
    except ValueError as exc:
        raise ArtifactError(str(exc)) from None
    doc = pair.to_dict()
    doc["meta"] = {
        "converged": trace.converged,
        "rounds": trace.rounds,
        "rounds_to_threshold": trace.rounds_to(game.nmse_stop_db),
        "guard_activations": trace.guard_activations,
        "floored_rows": trace.floored_rows,
        "warm_start": init is not None,
    }
    doc["provenance"] = {"config_hash": cfg.section_hash("world", "game")}
    out.json("policy.json", doc)
    out.text("trace.csv", trace.to_csv(FLOAT_FMT) + f"# config_hash={out.hash}\n")
    out.record.rows = [doc["meta"]]
    converged = trace.converged or game.max_rounds == 0
    return finish(out, converged=converged, strict=args.strict)


def _load_policy(cfg: ExperimentConfig, path: str | None) -> PolicyPair:
    p = Path(path) if path else Path(cfg.out) / "policy.json"
    doc = _read_json(p, "policy file")
    _provenance(doc, cfg.section_hash("world", "game"), "policy file")
    return PolicyPair.from_dict(doc)


# ---------------------------------------------------------------------------
# GFlowNet training
# ---------------------------------------------------------------------------


def _scm(p: CausalParams, seed: int):
    if p.graph == "chain":
        return chain_scm(p.n_nodes, p.edge_weight, p.noise_variance)
    return random_er_scm(p.n_nodes, p.avg_edges, seed, p.noise_variance)


def cmd_train_gflownet(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    p = cfg.causal
    if args.data:
        try:
            data = load_data(args.data)
        except FileNotFoundError:
            raise ArtifactError(f"data file not found at {args.data}") from None
        if data.ndim != 2 or data.shape[1] != p.n_nodes:
            raise ArtifactError(f"data file has {data.shape[-1]} columns, expected {p.n_nodes}")
        out = Outputs(cfg, "train-gflownet")
    else:
        out = Outputs(cfg, "train-gflownet")
        data = sample_scm(_scm(p, cfg.seed), p.samples, cfg.seed)
        save_data(data, out.path("data.csv"))
        out.record.outputs.append("data.csv")
    losses: list[tuple[int, float]] = []
    model = train_gflownet(data, p.n_nodes, p.to_gflow_config(), cfg.seed,
                           on_batch=lambda b, loss: losses.append((b, loss)))
    model.meta["provenance"] = {"config_hash": cfg.section_hash("causal")}
    out.json("model.json", model.to_dict())
    out.csv("loss.csv", ("batch", "loss"), [{"batch": b, "loss": v} for b, v in losses])
    exact = exact_posterior(p.n_nodes, model.log_reward)
    learned = terminal_distribution(model)
    summary = {
        "final_loss": model.final_loss,
        "converged": bool(model.meta["converged"]),
        "l1_vs_exact": learned.l1(exact),
        "mode": learned.mode(),
        "exact_mode": exact.mode(),
    }
    out.json("posterior.json", {**summary, "learned": learned.probs, "exact": exact.probs})
    out.record.rows = [summary]
    return finish(out, converged=summary["converged"], strict=args.strict)


# ---------------------------------------------------------------------------
# Transmission
# ---------------------------------------------------------------------------


TRANSMIT_COLUMNS = (
    "channel",
    "param",
    "n_trials",
    "reliability",
    "half_width",
    "semantic_error",
    "syntactic_error",
    "classical_error",
    "mean_distortion",
    "effectiveness",
    "esc_bits",
    "classical_bits",
)

BASELINE_COLUMNS = (
    "channel",
    "param",
    "n_trials",
    "esc_bits",
    "classical_bits",
    "esc_reliability",
    "classical_reliability",
    "esc_semantic_error",
    "classical_error",
)


def build_codec(cfg: ExperimentConfig, world: World, policy_path: str | None) -> Codec:
    t = cfg.transmit
    if t.encoder == "synonym":
        return synonym_codec(world, t.code)
    if t.encoder == "voronoi":
        return voronoi_codec(world, t.voronoi_k, cfg.seed, t.code)
    pair = _load_policy(cfg, policy_path)
    space = prepare(world)
    if pair.pairs != space.pairs:
        raise ArtifactError("policy file does not match the world")
    return policy_codec(pair, space, t.code)


def run_effectiveness(run: PipelineRun, table: SemanticTable) -> float:
    """``1 / (1 + mean KL)`` with the listener's action taken as the decoded meaning.

    Per (context, true state) the action distribution under the true state is a
    point mass on its meaning, so the divergence reduces to ``-log q`` where ``q``
    is the empirical probability that the decoded meaning matches.
    """
    hits: Counter = Counter()
    totals: Counter = Counter()
    for c, z, zh in zip(run.contexts, run.states, run.decoded):
        key = (int(c), int(z))
        totals[key] += 1
        hits[key] += table.support(key[0], key[1]) == table.support(key[0], int(zh))
    kl = sum(n * -math.log(max(hits[k] / n, 1e-12)) for k, n in totals.items()) / run.n_trials
    return effectiveness(max(0.0, kl))


def _channel_name(cfg: ExperimentConfig) -> str:
    return "bsc" if cfg.channel.kind == "bsc" else f"awgn-qam{cfg.channel.qam_order}"


def cmd_transmit(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    world = _load_world(cfg, args.world)
    codec = build_codec(cfg, world, args.policy)
    grid = cfg.channel.grid()
    out = Outputs(cfg, "transmit")
    table = SemanticTable(world)
    rows = []
    for param, channel in grid:
        run = run_pipeline(world, codec, channel, cfg.transmit.n_trials, cfg.seed)
        m = score_run(run, table, cfg.transmit.delta)
        rows.append(
            {
                "channel": _channel_name(cfg),
                "param": param,
                "n_trials": run.n_trials,
                "reliability": m.semantic_reliability,
                "half_width": m.half_width,
                "semantic_error": m.semantic_error,
                "syntactic_error": m.syntactic_error,
                "classical_error": m.classical_error,
                "mean_distortion": m.mean_distortion,
                "effectiveness": run_effectiveness(run, table),
                "esc_bits": m.esc_bits,
                "classical_bits": m.classical_bits,
            }
        )
        log.info("transmit %s=%s reliability=%.4f", _channel_name(cfg), param, m.semantic_reliability)
    out.csv("transmit.csv", TRANSMIT_COLUMNS, rows)
    out.record.rows = rows
    return finish(out)


def classical_reliability(run: PipelineRun, table: SemanticTable, delta: float) -> float:
    """Fraction of baseline decodes within ``delta`` of the truth; erasures and out-of-context states fail."""
    ok = 0
    for c, z, zc in zip(run.contexts, run.states, run.classical_decoded):
        c, z, zc = int(c), int(z), int(zc)
        if zc == z:
            ok += 1
        elif zc in table.world.context(c).states:
            ok += table.distortion(c, z, zc) < delta
    return ok / run.n_trials


def cmd_compare_baseline(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    world = _load_world(cfg, args.world)
    codec = build_codec(cfg, world, args.policy)
    grid = cfg.channel.grid()
    out = Outputs(cfg, "compare-baseline")
    table = SemanticTable(world)
    rows = []
    for param, channel in grid:
        run = run_pipeline(world, codec, channel, cfg.transmit.n_trials, cfg.seed)
        m = score_run(run, table, cfg.transmit.delta)
        rows.append(
            {
                "channel": _channel_name(cfg),
                "param": param,
                "n_trials": run.n_trials,
                "esc_bits": m.esc_bits,
                "classical_bits": m.classical_bits,
                "esc_reliability": m.semantic_reliability,
                "classical_reliability": classical_reliability(run, table, cfg.transmit.delta),
                "esc_semantic_error": m.semantic_error,
                "classical_error": m.classical_error,
            }
        )
    out.csv("baseline.csv", BASELINE_COLUMNS, rows)
    out.record.rows = rows
    return finish(out)


# ---------------------------------------------------------------------------
# Bound verification
# ---------------------------------------------------------------------------


def length_sweep_world(seed: int) -> World:
    """Random world with ``|W| <= 32`` and at least two valid states per context."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 33))
    return random_world(n, int(rng.integers(1, 6)), 2, min(8, n), seed, prior_concentration=1.0)


def length_row(seed: int, world: World) -> dict:
    rep = check_length_bounds(world)
    return {
        "seed": seed,
        "n_states": len(world.states),
        "lower": rep.lower,
        "measured": rep.measured,
        "upper": rep.upper,
        "satisfied": rep.satisfied,
        "classical_lower": rep.classical_lower,
        "esc_lower_le_classical": bool(rep.lower <= rep.classical_lower + 1e-9),
    }


def error_row(seed: int, p: float, world: World, n_trials: int) -> dict:
    table = SemanticTable(world)
    run = run_pipeline(world, synonym_codec(world, "fixed"), Bsc(p), n_trials, seed)
    m = score_run(run, table, 0.01)
    rep = check_error_bounds(error_samples(run, table), len(world.states))
    return {
        "seed": seed,
        "p": p,
        "semantic_error": rep.semantic_error,
        "syntactic_error": rep.syntactic_error,
        "semantic_bound": rep.semantic_bound,
        "classical_bound": rep.classical_bound,
        "ordering_holds": rep.ordering_holds,
        "semantic_le_syntactic": bool(m.semantic_error <= m.classical_error),
        "insufficient_samples": rep.insufficient_samples,
    }


def _fraction(rows: Sequence[Mapping], key: str) -> float | None:
    return sum(bool(r[key]) for r in rows) / len(rows) if rows else None


def cmd_verify_bounds(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    b = cfg.bounds
    artifact = None
    if args.world:
        w = _load_world(cfg, args.world)
        artifact = length_row(cfg.seed, w)
    out = Outputs(cfg, "verify-bounds")
    length = [length_row(s, length_sweep_world(s)) for s in b.length_seeds]
    err = [
        error_row(s, p, build_world(b.error_world, s), b.error_trials)
        for s in b.error_seeds
        for p in b.error_p
    ]
    summary = {
        "length_worlds": len(length),
        "length_satisfied": _fraction(length, "satisfied"),
        "esc_lower_le_classical": _fraction(length, "esc_lower_le_classical"),
        "error_runs": len(err),
        "ordering_holds": _fraction(err, "ordering_holds"),
        "semantic_le_syntactic": _fraction(err, "semantic_le_syntactic"),
    }
    out.json("bounds.json", {"length": length, "error": err, "artifact": artifact, "summary": summary})
    out.record.rows = [summary]
    return finish(out)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


COMMANDS = {
    "gen-world": cmd_gen_world,
    "train-language": cmd_train_language,
    "train-gflownet": cmd_train_gflownet,
    "transmit": cmd_transmit,
    "verify-bounds": cmd_verify_bounds,
    "compare-baseline": cmd_compare_baseline,
}

_START: list[float] = []


def finish(out: Outputs, converged: bool = True, strict: bool = False) -> int:
    out.record.wall_clock_s = time.perf_counter() - _START[-1] if _START else 0.0
    out.record.save(out.dir)
    if not converged:
        log.warning("%s did not converge", out.record.command)
        if strict:
            return EXIT_NOT_CONVERGED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--strict", action="store_true", help="exit 4 when training does not converge")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-path config override, e.g. game.lambda_s=20")
    parser = argparse.ArgumentParser(prog="semlang", description="Semantic communication experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-world", parents=[common], help="sample a world")
    p = sub.add_parser("train-language", parents=[common], help="solve the signaling game")
    p.add_argument("--world")
    p.add_argument("--init", help="warm-start policy file")
    p = sub.add_parser("train-gflownet", parents=[common], help="learn a DAG posterior")
    p.add_argument("--data", help="CSV of samples; synthesized from the config when omitted")
    for name in ("transmit", "compare-baseline"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--world")
        p.add_argument("--policy")
    p = sub.add_parser("verify-bounds", parents=[common], help="check length and error bounds")
    p.add_argument("--world", help="also check this world's length bounds")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("SEMLANG_LOG", "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    _START.append(time.perf_counter())
    try:
        cfg = load_config(args.config, args.set, args.seed, args.out)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        log.error("invalid config: %s", exc)
        return EXIT_CONFIG
    except ArtifactError as exc:
        log.error("%s", exc)
        return EXIT_ARTIFACT
    finally:
        _START.pop()


if __name__ == "__main__":
    sys.exit(main())
