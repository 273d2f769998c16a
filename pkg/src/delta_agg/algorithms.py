"""Synchronous-round kernels for DELTA and the two tracking baselines.

Every step reads only the round-``k`` snapshot and returns a fresh
:class:`NetworkState`; agents never see each other's round-``k+1`` values.
All three methods share the tracking skeleton in :func:`tracking_update`
and differ only in the gradient surrogates they feed it:

* ``delta``: per-agent neural surrogates trained on one dithered sample per round,
* ``dagt``: exact partial derivatives of the local costs,
* ``zo``: a one-sample sphere-smoothing estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .dither import DitherSchedule
from .estimator import LossConfig, MlpArch
from .graph import GraphWeights
from .problem import AggProblem, FeedbackOracle

__all__ = [
    "DivergenceError",
    "AgentState",
    "NetworkState",
    "StepConfig",
    "DIVERGENCE_BOUND",
    "check_state",
    "init_state",
    "local_aggregate_estimates",
    "nn_surrogates",
    "exact_surrogates",
    "zo_surrogates",
    "tracking_update",
    "delta_update",
    "delta_step",
    "dagt_step",
    "zo_step",
    "audit_conservation",
    "frozen_consensus_decay",
]

DIVERGENCE_BOUND = 1e12


class DivergenceError(RuntimeError):
    def __init__(self, iteration: int, detail: str = ""):
        super().__init__(f"state diverged at iteration {iteration}" + (f": {detail}" if detail else ""))
        self.iteration = iteration


@dataclass(frozen=True)
class AgentState:
    theta: np.ndarray | None
    x: np.ndarray
    s_tracker: np.ndarray
    y_tracker: np.ndarray


@dataclass
class NetworkState:
    """Stacked agent states. ``x`` is ``(N, n_i)``; ``s`` and ``y`` are ``(N, d)``.

    ``theta`` is ``(N, m)`` for DELTA and ``None`` for the baselines.
    """

    x: np.ndarray
    s: np.ndarray
    y: np.ndarray
    theta: np.ndarray | None = None
    k: int = 0

    @property
    def n_agents(self) -> int:
        return self.x.shape[0]

    @property
    def agents(self) -> list[AgentState]:
        return [
            AgentState(None if self.theta is None else self.theta[i], self.x[i], self.s[i], self.y[i])
            for i in range(self.n_agents)
        ]

    def copy(self) -> NetworkState:
        return NetworkState(self.x.copy(), self.s.copy(), self.y.copy(),
                            None if self.theta is None else self.theta.copy(), self.k)


@dataclass(frozen=True)
class StepConfig:
    gamma: float = 1e-4
    dither: DitherSchedule = field(default_factory=DitherSchedule)
    loss_cfg: LossConfig = field(default_factory=LossConfig)
    arch: MlpArch = field(default_factory=MlpArch)

    def __post_init__(self) -> None:
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")


def init_state(x0, theta0=None, d: int = 1) -> NetworkState:
    """Trackers start at exactly zero so that their network sums stay zero."""
    x = np.array(x0, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    theta = None if theta0 is None else np.array(theta0, dtype=np.float64)
    return NetworkState(x, np.zeros((n, d)), np.zeros((n, d)), theta, 0)


def _phi(problem: AggProblem, x: np.ndarray) -> np.ndarray:
    return problem.phi_all(x[:, 0])[:, None]


def _phi_jac(problem: AggProblem) -> np.ndarray:
    return problem.pi[:, None]


def local_aggregate_estimates(net: NetworkState, problem: AggProblem) -> np.ndarray:
    """``sigma_hat_i = s_i + phi_i(x_i)`` for every agent."""
    return net.s + _phi(problem, net.x)


def nn_surrogates(net: NetworkState, problem: AggProblem, arch: MlpArch) -> tuple[np.ndarray, np.ndarray]:
    shat = local_aggregate_estimates(net, problem)
    u = np.concatenate([net.x, shat], axis=1)
    _, gin = kernels.get_backend().mlp_value_input_grad(net.theta, u, arch.hidden_width)
    nx = net.x.shape[1]
    return gin[:, :nx], gin[:, nx:]


def exact_surrogates(net: NetworkState, problem: AggProblem) -> tuple[np.ndarray, np.ndarray]:
    shat = local_aggregate_estimates(net, problem)
    g1, g2 = problem.partials(net.x[:, 0], shat[:, 0])
    return g1[:, None], g2[:, None]


def zo_surrogates(net: NetworkState, problem: AggProblem, oracle: FeedbackOracle,
                  rng: np.random.Generator, delta_smooth: float) -> tuple[np.ndarray, np.ndarray]:
    """One-point sphere estimate ``(dim / delta) f(z + delta u) u`` per agent.

    ``u`` is uniform on the unit sphere of the joint ``(x_i, sigma_hat_i)``
    space. Consumes one oracle sample per agent.
    """
    if not delta_smooth > 0:
        raise ValueError("delta_smooth must be positive")
    shat = local_aggregate_estimates(net, problem)
    nx, d = net.x.shape[1], shat.shape[1]
    dim = nx + d
    u = rng.standard_normal((net.n_agents, dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    y_obs = oracle.sample_all(net.x[:, 0] + delta_smooth * u[:, 0], shat[:, 0] + delta_smooth * u[:, nx])
    g = (dim / delta_smooth) * y_obs[:, None] * u
    return g[:, :nx], g[:, nx:]


def tracking_update(net: NetworkState, problem: AggProblem, weights: GraphWeights, gamma: float,
                    g1: np.ndarray, g2: np.ndarray, theta_next=None) -> NetworkState:
    """Optimization and tracking blocks given round-``k`` gradient surrogates."""
    kern = kernels.get_backend()
    phi = _phi(problem, net.x)
    x_next = net.x - gamma * (g1 + _phi_jac(problem) * (net.y + g2))
    s_next = kern.mix(weights.indptr, weights.indices, weights.data, net.s + phi) - phi
    y_next = kern.mix(weights.indptr, weights.indices, weights.data, net.y + g2) - g2
    return NetworkState(x_next, s_next, y_next, theta_next, net.k + 1)


def check_state(net: NetworkState, k: int) -> NetworkState:
    for name in ("x", "s", "y", "theta"):
        arr = getattr(net, name)
        if arr is None:
            continue
        if not np.all(np.isfinite(arr)):
            raise DivergenceError(k, f"non-finite {name}")
        if np.max(np.abs(arr), initial=0.0) > DIVERGENCE_BOUND:
            raise DivergenceError(k, f"|{name}| exceeds {DIVERGENCE_BOUND:g}")
    return net


def delta_update(net: NetworkState, problem: AggProblem, weights: GraphWeights, cfg: StepConfig,
                 oracle: FeedbackOracle) -> tuple[NetworkState, tuple[np.ndarray, np.ndarray]]:
    """One unchecked DELTA round; also returns the surrogates used by the agents."""
    kern = kernels.get_backend()
    h = cfg.arch.hidden_width
    shat = local_aggregate_estimates(net, problem)
    dx, ds = cfg.dither.values(net.k, net.n_agents)
    ux = net.x[:, 0] + dx
    us = shat[:, 0] + ds
    oracle.begin_iteration(net.k)
    y_obs = oracle.sample_all(ux, us)
    _, g3 = kern.mlp_loss_param_grad(net.theta, np.stack([ux, us], axis=1), y_obs,
                                     float(cfg.loss_cfg.regularizer_weight), h)
    theta_next = net.theta - cfg.gamma * g3
    _, gin = kern.mlp_value_input_grad(net.theta, np.concatenate([net.x, shat], axis=1), h)
    nx = net.x.shape[1]
    g1, g2 = gin[:, :nx], gin[:, nx:]
    return tracking_update(net, problem, weights, cfg.gamma, g1, g2, theta_next), (g1, g2)


def delta_step(net: NetworkState, problem: AggProblem, weights: GraphWeights, cfg: StepConfig,
               oracle: FeedbackOracle | None = None) -> NetworkState:
    if oracle is None:
        oracle = FeedbackOracle(problem)
    nxt, _ = delta_update(net, problem, weights, cfg, oracle)
    return check_state(nxt, net.k)


def dagt_step(net: NetworkState, problem: AggProblem, weights: GraphWeights, gamma: float) -> NetworkState:
    g1, g2 = exact_surrogates(net, problem)
    return check_state(tracking_update(net, problem, weights, gamma, g1, g2), net.k)


def zo_step(net: NetworkState, problem: AggProblem, weights: GraphWeights, gamma: float,
            delta_smooth: float, rng: np.random.Generator,
            oracle: FeedbackOracle | None = None) -> NetworkState:
    if oracle is None:
        oracle = FeedbackOracle(problem)
    oracle.begin_iteration(net.k)
    g1, g2 = zo_surrogates(net, problem, oracle, rng, delta_smooth)
    return check_state(tracking_update(net, problem, weights, gamma, g1, g2), net.k)


def audit_conservation(net: NetworkState) -> tuple[float, float]:
    """Norms of the network sums of both trackers; zero when tracking is consistent."""
    return float(np.linalg.norm(net.s.sum(axis=0))), float(np.linalg.norm(net.y.sum(axis=0)))


def frozen_consensus_decay(net: NetworkState, problem: AggProblem, weights: GraphWeights,
                           n_steps: int) -> list[float]:
    """Consensus error of the aggregate tracker with decisions and parameters held fixed.

    Returns ``e_0, ..., e_{n_steps}`` with ``e_k = |sigma_hat^k - 1 sigma(x)|``.
    """
    kern = kernels.get_backend()
    phi = _phi(problem, net.x)
    sigma = phi.mean(axis=0)
    s = net.s.copy()
    errs = [float(np.linalg.norm(s + phi - sigma))]
    for _ in range(n_steps):
        s = kern.mix(weights.indptr, weights.indices, weights.data, s + phi) - phi
        errs.append(float(np.linalg.norm(s + phi - sigma)))
    return errs


def with_iteration(net: NetworkState, k: int) -> NetworkState:
    return replace(net, k=k)
