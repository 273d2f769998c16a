"""Experiment orchestration: configs, metrics, traces, comparisons, robustness runs."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections.abc import Callable
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

from . import algorithms as alg
from . import graph as gr
from . import problem as pb
from .dither import DitherSchedule
from .estimator import LossConfig, MlpArch, arch_from_size, xavier_init

__all__ = [
    "ConfigError",
    "ALGORITHMS",
    "CSV_COLUMNS",
    "GraphSpec",
    "DitherSpec",
    "EstimatorSpec",
    "ZoSpec",
    "PerturbationSpec",
    "RunConfig",
    "MetricRecord",
    "RunTrace",
    "Comparison",
    "load_config",
    "build_instance",
    "run_experiment",
    "robustness_experiment",
    "descent_direction",
    "compute_metrics",
    "write_trace",
    "read_trace",
    "compare_runs",
    "plateau",
]

log = logging.getLogger(__name__)

ALGORITHMS = ("delta", "dagt", "zo")
CSV_COLUMNS = ("k", "rel_cost_error", "descent_error", "s_track_error", "y_track_error",
               "s_residual", "y_residual")
OPTIMUM_TOL = 1e-10


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GraphSpec:
    kind: str = "erdos_renyi"
    p: float = 0.5
    seed: int | None = None


@dataclass(frozen=True)
class DitherSpec:
    amplitude: float = 5.0
    period: int = 4
    phases: tuple[float, ...] = ()


@dataclass(frozen=True)
class EstimatorSpec:
    hidden_width: int = 32
    init_seed: int | None = None
    regularizer_weight: float = 1e-3


@dataclass(frozen=True)
class ZoSpec:
    delta_smooth: float = 0.1
    seed: int | None = None


@dataclass(frozen=True)
class PerturbationSpec:
    trigger_iteration: int
    magnitude_range: tuple[float, float] = (0.0, 0.1)
    seed: int | None = None


@dataclass(frozen=True)
class RunConfig:
    """Everything a run depends on. Unset seeds derive from ``seed``."""

    algorithm: str = "delta"
    n_agents: int = 20
    graph: GraphSpec = field(default_factory=GraphSpec)
    seed: int = 0
    problem_seed: int | None = None
    x0_seed: int | None = None
    x0_scale: float = 1.0
    gamma: float = 1e-4
    iterations: int = 1000
    dither: DitherSpec = field(default_factory=DitherSpec)
    estimator: EstimatorSpec = field(default_factory=EstimatorSpec)
    zo: ZoSpec = field(default_factory=ZoSpec)
    perturbation: PerturbationSpec | None = None
    stride: int = 100
    output: str | None = None

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.iterations < 1:
            raise ConfigError("iterations must be at least 1")
        if self.stride < 1:
            raise ConfigError("stride must be at least 1")
        if self.n_agents < 1:
            raise ConfigError("n_agents must be positive")
        if not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        if self.graph.kind not in ("erdos_renyi", "complete", "path"):
            raise ConfigError(f"unknown graph kind {self.graph.kind!r}")

    # derived seeds use fixed offsets so that overriding ``seed`` moves all of them
    def resolved_seeds(self) -> dict[str, int]:
        s = self.seed
        pert = self.perturbation
        return {
            "graph": s if self.graph.seed is None else self.graph.seed,
            "problem": s if self.problem_seed is None else self.problem_seed,
            "init": s + 1 if self.estimator.init_seed is None else self.estimator.init_seed,
            "x0": s + 2 if self.x0_seed is None else self.x0_seed,
            "zo": s + 3 if self.zo.seed is None else self.zo.seed,
            "perturbation": s + 4 if pert is None or pert.seed is None else pert.seed,
        }

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> RunConfig:
        doc = dict(doc)
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known - {"algorithms"}
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        doc.pop("algorithms", None)
        nested = {"graph": GraphSpec, "dither": DitherSpec, "estimator": EstimatorSpec, "zo": ZoSpec}
        try:
            for key, typ in nested.items():
                if key in doc and doc[key] is not None:
                    doc[key] = typ(**doc[key])
            if doc.get("dither") is not None:
                doc["dither"] = replace(doc["dither"], phases=tuple(doc["dither"].phases or ()))
            if doc.get("perturbation") is not None:
                p = dict(doc["perturbation"])
                if "magnitude_range" in p:
                    p["magnitude_range"] = tuple(p["magnitude_range"])
                doc["perturbation"] = PerturbationSpec(**p)
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> tuple[RunConfig, list[str]]:
    """Parse a JSON config. Returns the config and its ``algorithms`` list (for comparisons)."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    algos = list(doc.get("algorithms") or [doc.get("algorithm", "delta")])
    for a in algos:
        if a not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {a!r}")
    return RunConfig.from_dict(doc), algos


@dataclass(frozen=True)
class MetricRecord:
    k: int
    rel_cost_error: float
    descent_error: float
    s_track_error: float
    y_track_error: float
    s_residual: float
    y_residual: float

    def row(self) -> tuple:
        return tuple(getattr(self, c) for c in CSV_COLUMNS)


@dataclass
class RunTrace:
    config: RunConfig
    seeds: dict[str, int]
    records: list[MetricRecord] = field(default_factory=list)
    sample_counts: np.ndarray | None = None
    x_star: np.ndarray | None = None
    f_star: float | None = None
    optima: list[dict] = field(default_factory=list)
    final_state: alg.NetworkState | None = None
    final_rel_cost_error: float | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


# -- instance construction -----------------------------------------------------


def build_instance(cfg: RunConfig) -> tuple[gr.GraphWeights, pb.AggProblem, np.ndarray]:
    seeds = cfg.resolved_seeds()
    n = cfg.n_agents
    if n == 1:
        topo = gr.GraphTopology(1)
    elif cfg.graph.kind == "erdos_renyi":
        topo = gr.generate_erdos_renyi(n, cfg.graph.p, seeds["graph"])
    elif cfg.graph.kind == "complete":
        topo = gr.complete_graph(n)
    else:
        topo = gr.path_graph(n)
    weights = gr.metropolis_weights(topo)
    problem = pb.generate_problem(n, seeds["problem"])
    x0 = cfg.x0_scale * np.random.default_rng(seeds["x0"]).standard_normal(n)
    return weights, problem, x0


def _initial_theta(cfg: RunConfig, arch: MlpArch) -> np.ndarray:
    ss = np.random.SeedSequence(cfg.resolved_seeds()["init"])
    return np.stack([xavier_init(arch, child) for child in ss.spawn(cfg.n_agents)])


def _step_config(cfg: RunConfig) -> alg.StepConfig:
    return alg.StepConfig(
        gamma=cfg.gamma,
        dither=DitherSchedule(cfg.dither.period, cfg.dither.amplitude, tuple(cfg.dither.phases)),
        loss_cfg=LossConfig(cfg.estimator.regularizer_weight),
        arch=MlpArch(2, cfg.estimator.hidden_width),
    )


# -- metrics -------------------------------------------------------------------


def descent_direction(net: alg.NetworkState, problem: pb.AggProblem, g1=None, g2=None) -> np.ndarray:
    """Stacked local descent directions ``g1_i + dphi_i (g2_i + y_i)``.

    Without explicit surrogates, DELTA states (``theta`` set) use their
    networks and baseline states use the exact partial derivatives.
    """
    if g1 is None or g2 is None:
        if net.theta is not None:
            g1, g2 = alg.nn_surrogates(net, problem, arch_from_size(net.theta.shape[1], 2))
        else:
            g1, g2 = alg.exact_surrogates(net, problem)
    return (g1 + problem.pi[:, None] * (g2 + net.y))[:, 0]


def _g2_at_true_aggregate(net: alg.NetworkState, problem: pb.AggProblem) -> np.ndarray:
    sigma = pb.aggregate(problem, net.x[:, 0])
    at_sigma = replace(net, s=np.full_like(net.s, sigma) - problem.pi[:, None] * net.x)
    if net.theta is not None:
        _, g2 = alg.nn_surrogates(at_sigma, problem, arch_from_size(net.theta.shape[1], 2))
    else:
        _, g2 = alg.exact_surrogates(at_sigma, problem)
    return g2


def compute_metrics(net: alg.NetworkState, problem: pb.AggProblem, f_star: float,
                    g1: np.ndarray, g2: np.ndarray, algorithm: str) -> MetricRecord:
    x = net.x[:, 0]
    sigma = pb.aggregate(problem, x)
    f = pb.global_cost(problem, x)
    u_hat = descent_direction(net, problem, g1, g2)
    shat = alg.local_aggregate_estimates(net, problem)
    if algorithm == "zo":
        # a fresh estimate at sigma(x) would cost an extra sample; use this round's estimates
        target = g2.mean(axis=0)
    else:
        target = _g2_at_true_aggregate(net, problem).mean(axis=0)
    s_res, y_res = alg.audit_conservation(net)
    return MetricRecord(
        k=int(net.k),
        rel_cost_error=(f - f_star) / abs(f_star),
        descent_error=float(np.linalg.norm(u_hat - pb.global_grad(problem, x))),
        s_track_error=float(np.max(np.abs(shat - sigma))),
        y_track_error=float(np.max(np.abs(net.y + g2 - target))),
        s_residual=s_res,
        y_residual=y_res,
    )


# -- runs ----------------------------------------------------------------------


def run_experiment(cfg: RunConfig, observer: Callable[[alg.NetworkState, pb.AggProblem], None] | None = None
                   ) -> RunTrace:
    """Run one algorithm for ``cfg.iterations`` rounds, recording every ``cfg.stride``-th round.

    Record ``k`` describes the round-``k`` state and the gradient surrogates
    the agents used in that round. If ``cfg.perturbation`` is set the local
    costs change at its trigger iteration and the optimum is re-solved;
    agent states carry over untouched.

    ``observer``, if given, is called with the round-``k`` state and the
    current problem at every recorded round.
    """
    seeds = cfg.resolved_seeds()
    weights, problem, x0 = build_instance(cfg)
    step_cfg = _step_config(cfg)
    x_star, f_star = pb.solve_optimum(problem, OPTIMUM_TOL)
    trace = RunTrace(cfg, seeds, x_star=x_star, f_star=f_star)
    trace.optima.append({"k": 0, "f_star": f_star, "x_star": x_star.tolist()})

    pert = None
    if cfg.perturbation is not None:
        if not 0 <= cfg.perturbation.trigger_iteration < cfg.iterations:
            raise ConfigError("perturbation trigger must lie in [0, iterations)")
        pert = pb.Perturbation(cfg.perturbation.trigger_iteration,
                               tuple(cfg.perturbation.magnitude_range), seeds["perturbation"])

    theta0 = _initial_theta(cfg, step_cfg.arch) if cfg.algorithm == "delta" else None
    net = alg.init_state(x0, theta0)
    oracle = pb.FeedbackOracle(problem)
    zo_rng = np.random.default_rng(seeds["zo"])

    for k in range(cfg.iterations):
        if pert is not None and k == pert.trigger_iteration:
            problem = pb.apply_perturbation(problem, pert)
            oracle.problem = problem
            x_star, f_star = pb.solve_optimum(problem, OPTIMUM_TOL, x0=x_star)
            trace.optima.append({"k": k, "f_star": f_star, "x_star": x_star.tolist()})
        if cfg.algorithm == "delta":
            nxt, (g1, g2) = alg.delta_update(net, problem, weights, step_cfg, oracle)
        elif cfg.algorithm == "dagt":
            g1, g2 = alg.exact_surrogates(net, problem)
            nxt = alg.tracking_update(net, problem, weights, cfg.gamma, g1, g2)
        else:
            oracle.begin_iteration(k)
            g1, g2 = alg.zo_surrogates(net, problem, oracle, zo_rng, cfg.zo.delta_smooth)
            nxt = alg.tracking_update(net, problem, weights, cfg.gamma, g1, g2)
        if k % cfg.stride == 0:
            trace.records.append(compute_metrics(net, problem, f_star, g1, g2, cfg.algorithm))
            if observer is not None:
                observer(net, problem)
        net = alg.check_state(nxt, k)

    trace.x_star, trace.f_star = x_star, f_star
    trace.sample_counts = oracle.total.copy()
    trace.final_state = net
    trace.final_rel_cost_error = (pb.global_cost(problem, net.x[:, 0]) - f_star) / abs(f_star)
    return trace


def robustness_experiment(cfg: RunConfig) -> RunTrace:
    if cfg.perturbation is None:
        raise ConfigError("robustness experiment needs a perturbation spec")
    return run_experiment(cfg)


# -- output --------------------------------------------------------------------


def _fmt(v) -> str:
    return str(v) if isinstance(v, (int, np.integer)) else format(float(v), ".17g")


def write_trace(trace: RunTrace, path: str | Path) -> Path:
    """CSV of the records plus a JSON sidecar (same stem) with config and seeds."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for rec in trace.records:
                w.writerow([_fmt(v) for v in rec.row()])
        sidecar = {
            "config": trace.config.to_dict(),
            "resolved_seeds": trace.seeds,
            "f_star": trace.f_star,
            "optima": trace.optima,
            "final_rel_cost_error": trace.final_rel_cost_error,
            "sample_counts": None if trace.sample_counts is None else trace.sample_counts.tolist(),
        }
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, default=_json_default))
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc}") from exc
    return path


def _json_default(o: Any):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def read_trace(path: str | Path) -> list[MetricRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != CSV_COLUMNS:
        raise ValueError(f"unexpected header in {path}: {rows[0]}")
    return [MetricRecord(int(r[0]), *(float(v) for v in r[1:])) for r in rows[1:]]


# -- comparisons ---------------------------------------------------------------


def plateau(values) -> float:
    """Median of the final 5% of the records (at least one)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return math.nan
    tail = max(1, int(math.ceil(0.05 * values.size)))
    return float(np.median(values[-tail:]))


_SHARED = ("n_agents", "graph", "seed", "problem_seed", "x0_seed", "x0_scale", "gamma",
           "iterations", "stride", "perturbation")


@dataclass
class Comparison:
    traces: dict[str, RunTrace]
    summary: dict[str, dict[str, float]]

    def merged_rows(self) -> list[list]:
        algos = list(self.traces)
        ks = sorted({r.k for t in self.traces.values() for r in t.records})
        cols = {a: {r.k: r.rel_cost_error for r in t.records} for a, t in self.traces.items()}
        return [[k] + [cols[a].get(k, math.nan) for a in algos] for k in ks]

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        algos = list(self.traces)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k"] + [f"rel_cost_error_{a}" for a in algos])
            for row in self.merged_rows():
                w.writerow([_fmt(v) for v in row])
        with open(path.with_name(path.stem + "_summary.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["algorithm", "final", "plateau"])
            for a in algos:
                w.writerow([a, _fmt(self.summary[a]["final"]), _fmt(self.summary[a]["plateau"])])
        for a, t in self.traces.items():
            write_trace(t, path.with_name(f"{path.stem}_{a}.csv"))
        return path


def compare_runs(cfgs: list[RunConfig], workers: int = 1) -> Comparison:
    """Run several algorithms on one shared instance and summarize their cost errors."""
    if not cfgs:
        raise ConfigError("nothing to compare")
    ref = cfgs[0]
    for c in cfgs[1:]:
        for name in _SHARED:
            if getattr(c, name) != getattr(ref, name):
                raise ConfigError(f"compared runs disagree on shared field {name!r}")
        if c.resolved_seeds()["problem"] != ref.resolved_seeds()["problem"]:
            raise ConfigError("compared runs use different problem seeds")
    names = [c.algorithm for c in cfgs]
    if len(set(names)) != len(names):
        raise ConfigError("each algorithm may appear once per comparison")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(run_experiment, cfgs))
    else:
        traces = [run_experiment(c) for c in cfgs]
    by_alg = dict(zip(names, traces))
    summary = {
        a: {"final": float(t.final_rel_cost_error), "plateau": plateau(t.column("rel_cost_error"))}
        for a, t in by_alg.items()
    }
    return Comparison(by_alg, summary)
