"""Synthetic aggregative cost family with exact oracles.

Agent ``i`` owns a scalar decision ``x_i`` and the cost

    f_i(x_i, s) = 0.5 v^T Q_i v + r_i^T v + a_i exp(b_i (x_i + s)) + const_i,   v = (x_i, s)

where ``s`` stands for the aggregate ``sigma(x) = sum_i pi_i x_i / N``. The
simulator treats ``f_i`` as a black box for the data-driven algorithms and
uses the analytic derivatives below only for baselines and ground truth.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

__all__ = [
    "ProblemError",
    "ProtocolViolation",
    "NonConvergenceError",
    "LocalCost",
    "AggProblem",
    "Perturbation",
    "FeedbackOracle",
    "generate_problem",
    "phi",
    "phi_grad",
    "aggregate",
    "eval_cost",
    "exact_grads",
    "global_cost",
    "global_grad",
    "global_hessian",
    "solve_optimum",
    "minimize_global_cost",
    "sample_feedback",
    "apply_perturbation",
]

log = logging.getLogger(__name__)

# exp(EXP_CAP) is still finite in double precision
EXP_CAP = 700.0
PD_FLOOR = 1e-3
MAX_GEN_ATTEMPTS = 100
MAX_NEWTON_ITERS = 10_000


class ProblemError(ValueError):
    """Invalid problem data or failed instance generation."""


class ProtocolViolation(RuntimeError):
    """An agent requested more cost samples than its per-iteration budget."""


class NonConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class LocalCost:
    Q: np.ndarray
    r: np.ndarray
    a: float
    b: float
    c: float
    const: float
    pi: float

    def to_dict(self) -> dict:
        return {
            "Q": np.asarray(self.Q).tolist(),
            "r": np.asarray(self.r).tolist(),
            "a": self.a,
            "b": self.b,
            "c": self.c,
            "const": self.const,
            "pi": self.pi,
        }


@dataclass(frozen=True, eq=False)
class AggProblem:
    """Stacked parameters of all local costs.

    Arrays are indexed by agent: ``Q`` is ``(N, 2, 2)``, ``r`` is ``(N, 2)``
    and the remaining coefficients are ``(N,)``.
    """

    Q: np.ndarray
    r: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    const: np.ndarray
    pi: np.ndarray
    seed: int | None = None
    metadata: dict = field(default_factory=dict, compare=False)

    dim_local = 1
    dim_agg = 1

    def __post_init__(self) -> None:
        arrays = {}
        for name in ("Q", "r", "a", "b", "c", "const", "pi"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            arrays[name] = arr
            object.__setattr__(self, name, arr)
        n = arrays["pi"].shape[0]
        if arrays["Q"].shape != (n, 2, 2) or arrays["r"].shape != (n, 2):
            raise ProblemError("inconsistent parameter shapes")
        if not np.allclose(arrays["Q"], np.swapaxes(arrays["Q"], 1, 2), rtol=0, atol=1e-14):
            raise ProblemError("Q_i must be symmetric")
        if np.any(np.linalg.eigvalsh(arrays["Q"])[:, 0] <= 0):
            raise ProblemError("Q_i must be positive definite")

    def __eq__(self, other) -> bool:
        if not isinstance(other, AggProblem):
            return NotImplemented
        return all(np.array_equal(getattr(self, n), getattr(other, n))
                   for n in ("Q", "r", "a", "b", "c", "const", "pi"))

    __hash__ = None

    @property
    def n_agents(self) -> int:
        return int(self.pi.shape[0])

    @property
    def costs(self) -> list[LocalCost]:
        return [
            LocalCost(self.Q[i], self.r[i], float(self.a[i]), float(self.b[i]),
                      float(self.c[i]), float(self.const[i]), float(self.pi[i]))
            for i in range(self.n_agents)
        ]

    # -- vectorized oracles over all agents ---------------------------------

    def values(self, x: np.ndarray, s: np.ndarray) -> np.ndarray:
        """``f_i(x_i, s_i)`` for every agent; ``x`` and ``s`` are ``(N,)``."""
        x = np.asarray(x, dtype=np.float64)
        s = np.asarray(s, dtype=np.float64)
        q = self.Q
        quad = 0.5 * (q[:, 0, 0] * x * x + 2.0 * q[:, 0, 1] * x * s + q[:, 1, 1] * s * s)
        lin = self.r[:, 0] * x + self.r[:, 1] * s
        return quad + lin + self.a * _safe_exp(self.b * (x + s)) + self.const

    def partials(self, x: np.ndarray, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Exact ``(d f_i / d x_i, d f_i / d s)`` for every agent."""
        x = np.asarray(x, dtype=np.float64)
        s = np.asarray(s, dtype=np.float64)
        q = self.Q
        e = self.a * self.b * _safe_exp(self.b * (x + s))
        g1 = q[:, 0, 0] * x + q[:, 0, 1] * s + self.r[:, 0] + e
        g2 = q[:, 1, 0] * x + q[:, 1, 1] * s + self.r[:, 1] + e
        return g1, g2

    def phi_all(self, x: np.ndarray) -> np.ndarray:
        return self.pi * np.asarray(x, dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "n_agents": self.n_agents,
            "seed": self.seed,
            "metadata": self.metadata,
            "costs": [c.to_dict() for c in self.costs],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> AggProblem:
        costs = doc["costs"]
        return cls(
            Q=[c["Q"] for c in costs],
            r=[c["r"] for c in costs],
            a=[c["a"] for c in costs],
            b=[c["b"] for c in costs],
            c=[c["c"] for c in costs],
            const=[c["const"] for c in costs],
            pi=[c["pi"] for c in costs],
            seed=doc.get("seed"),
            metadata=dict(doc.get("metadata", {})),
        )

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load_json(cls, path: str | Path) -> AggProblem:
        return cls.from_dict(json.loads(Path(path).read_text()))


_warned_overflow = False


def _safe_exp(z):
    global _warned_overflow
    z = np.asarray(z, dtype=np.float64)
    if np.any(z > EXP_CAP):
        if not _warned_overflow:
            log.warning("exponential term saturated (argument %.3g > %g)", float(np.max(z)), EXP_CAP)
            _warned_overflow = True
        z = np.minimum(z, EXP_CAP)
    return np.exp(z)


@dataclass(frozen=True)
class Perturbation:
    trigger_iteration: int
    magnitude_range: tuple[float, float] = (0.0, 0.1)
    seed: int = 0

    def __post_init__(self) -> None:
        lo, hi = self.magnitude_range
        if self.trigger_iteration < 0:
            raise ProblemError("trigger_iteration must be nonnegative")
        if not 0.0 <= lo <= hi < 1.0:
            raise ProblemError(f"magnitude_range must lie in [0, 1), got {self.magnitude_range}")


def _draw_problem(n: int, rng: np.random.Generator) -> dict:
    pi = rng.uniform(0.0, 1.0, n)
    a = rng.uniform(0.0, 1.0, n)
    b = rng.uniform(0.0, 1.0, n)
    c = rng.uniform(0.0, 1.0, n)
    m = rng.uniform(0.0, 1.0, (n, 2, 2))
    q = m @ np.swapaxes(m, 1, 2) + np.eye(2)
    q = 0.5 * (q + np.swapaxes(q, 1, 2))
    r = rng.uniform(0.0, 20.0, (n, 2))
    const = rng.uniform(0.0, 20.0, n)
    return dict(Q=q, r=r, a=a, b=b, c=c, const=const, pi=pi)


def _certify_strong_convexity(problem: AggProblem, rng: np.random.Generator, n_points: int = 50) -> bool:
    for _ in range(n_points):
        x = rng.uniform(-20.0, 20.0, problem.n_agents)
        if np.linalg.eigvalsh(global_hessian(problem, x))[0] <= 0:
            return False
    return True


def generate_problem(n: int, seed: int) -> AggProblem:
    """Random instance with ``n`` agents, deterministic in ``seed``."""
    if n < 1:
        raise ProblemError(f"need at least one agent, got {n}")
    for attempt in range(MAX_GEN_ATTEMPTS):
        rng = np.random.default_rng([seed, attempt])
        params = _draw_problem(n, rng)
        problem = AggProblem(**params, seed=seed, metadata={"generator_attempt": attempt})
        if _certify_strong_convexity(problem, rng):
            return problem
    raise ProblemError(f"no strongly convex instance after {MAX_GEN_ATTEMPTS} attempts")


# -- per-agent API ------------------------------------------------------------


def phi(problem: AggProblem, i: int, x_i: float) -> float:
    """Contribution ``pi_i x_i`` of agent ``i`` to the aggregate."""
    return float(problem.pi[i] * x_i)


def phi_grad(problem: AggProblem, i: int, x_i: float = 0.0) -> float:
    return float(problem.pi[i])


def aggregate(problem: AggProblem, x) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != problem.n_agents:
        raise ProblemError(f"x has {x.shape[0]} entries, expected {problem.n_agents}")
    return float(np.sum(problem.pi * x) / problem.n_agents)


def eval_cost(problem: AggProblem, i: int, x_i: float, s: float) -> float:
    sl = slice(i, i + 1)
    sub = _agent_view(problem, sl)
    return float(sub.values(np.array([x_i]), np.array([s]))[0])


def exact_grads(problem: AggProblem, i: int, x_i: float, s: float) -> tuple[float, float]:
    sub = _agent_view(problem, slice(i, i + 1))
    g1, g2 = sub.partials(np.array([x_i]), np.array([s]))
    return float(g1[0]), float(g2[0])


def _agent_view(problem: AggProblem, sl: slice) -> AggProblem:
    return AggProblem(problem.Q[sl], problem.r[sl], problem.a[sl], problem.b[sl],
                      problem.c[sl], problem.const[sl], problem.pi[sl])


def global_cost(problem: AggProblem, x) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    sigma = aggregate(problem, x)
    return float(np.sum(problem.values(x, np.full_like(x, sigma))))


def global_grad(problem: AggProblem, x) -> np.ndarray:
    """Chain rule: ``d_i F = d1 f_i + (pi_i / N) sum_j d2 f_j`` at ``sigma(x)``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    sigma = aggregate(problem, x)
    g1, g2 = problem.partials(x, np.full_like(x, sigma))
    return g1 + problem.pi / problem.n_agents * np.sum(g2)


def global_hessian(problem: AggProblem, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    n = problem.n_agents
    sigma = aggregate(problem, x)
    e = problem.a * problem.b**2 * _safe_exp(problem.b * (x + sigma))
    h11 = problem.Q[:, 0, 0] + e
    h12 = problem.Q[:, 0, 1] + e
    h22 = problem.Q[:, 1, 1] + e
    w = problem.pi / n
    hess = np.diag(h11)
    hess += np.outer(h12, w) + np.outer(w, h12)
    hess += np.sum(h22) * np.outer(w, w)
    return hess


def minimize_global_cost(problem: AggProblem, tol: float = 1e-10, x0=None,
                         max_iter: int = MAX_NEWTON_ITERS) -> tuple[np.ndarray, float, int]:
    """Damped Newton with Armijo backtracking. Returns ``(x, F(x), iterations)``.

    The Hessian is analytic and positive definite on the generated family, so
    the Newton direction is a descent direction; the negative gradient is used
    if the solve fails.
    """
    x = np.zeros(problem.n_agents) if x0 is None else np.array(x0, dtype=np.float64)
    f = global_cost(problem, x)
    g = global_grad(problem, x)
    for it in range(max_iter):
        gnorm = np.linalg.norm(g)
        if gnorm <= tol:
            return x, f, it
        try:
            d = np.linalg.solve(global_hessian(problem, x), g)
        except np.linalg.LinAlgError:
            d = g
        slope = float(g @ d)
        if not np.isfinite(slope) or slope <= 0:
            d, slope = g, float(g @ g)
        step = 1.0
        # near the optimum F is flat below rounding; then a gradient-norm decrease decides
        slack = 1e-13 * (1.0 + abs(f))
        while True:
            x_new = x - step * d
            f_new = global_cost(problem, x_new)
            if f_new <= f - 1e-4 * step * slope:
                g_new = global_grad(problem, x_new)
                break
            if f_new <= f + slack:
                g_new = global_grad(problem, x_new)
                if np.linalg.norm(g_new) < gnorm:
                    break
            if step < 1e-20:
                raise NonConvergenceError(f"line search failed at |grad|={gnorm:.3e} > tol={tol:.1e}")
            step *= 0.5
        x, f, g = x_new, f_new, g_new
    raise NonConvergenceError(f"Newton iteration exceeded {max_iter} iterations")


def solve_optimum(problem: AggProblem, tol: float = 1e-10, x0=None) -> tuple[np.ndarray, float]:
    x, f, _ = minimize_global_cost(problem, tol, x0)
    return x, f


def sample_feedback(problem: AggProblem, i: int, u_x: float, u_s: float) -> float:
    return eval_cost(problem, i, u_x, u_s)


class FeedbackOracle:
    """Black-box cost access with a per-agent, per-iteration sample budget.

    Algorithms call :meth:`begin_iteration` once per round and then
    :meth:`sample` (or :meth:`sample_all`). Exceeding ``budget`` samples for an
    agent within one round raises :class:`ProtocolViolation`.
    """

    def __init__(self, problem: AggProblem, budget: int = 1):
        self.problem = problem
        self.budget = budget
        self.iteration = -1
        self.total = np.zeros(problem.n_agents, dtype=np.int64)
        self._round = np.zeros(problem.n_agents, dtype=np.int64)

    def begin_iteration(self, k: int) -> None:
        self.iteration = k
        self._round[:] = 0

    def _charge(self, idx) -> None:
        self._round[idx] += 1
        if np.any(self._round[idx] > self.budget):
            raise ProtocolViolation(
                f"agent(s) {np.flatnonzero(self._round > self.budget).tolist()} exceeded "
                f"{self.budget} sample(s) in iteration {self.iteration}"
            )
        self.total[idx] += 1

    def sample(self, i: int, u_x: float, u_s: float) -> float:
        self._charge(i)
        return sample_feedback(self.problem, i, u_x, u_s)

    def sample_all(self, u_x: np.ndarray, u_s: np.ndarray) -> np.ndarray:
        self._charge(slice(None))
        return self.problem.values(u_x, u_s)


def apply_perturbation(problem: AggProblem, pert: Perturbation) -> AggProblem:
    """Subtract independent uniform draws from every scalar cost parameter.

    ``Q_i`` keeps its symmetry (the off-diagonal pair receives one draw) and is
    shifted by a multiple of the identity if its smallest eigenvalue falls
    below ``PD_FLOOR``.
    """
    lo, hi = pert.magnitude_range
    n = problem.n_agents
    rng = np.random.default_rng(pert.seed)

    def draw(shape):
        if hi == lo:
            return np.full(shape, lo)
        return rng.uniform(lo, hi, shape)

    q = np.array(problem.Q)
    dq = draw((n, 3))
    q[:, 0, 0] -= dq[:, 0]
    q[:, 0, 1] -= dq[:, 1]
    q[:, 1, 0] = q[:, 0, 1]
    q[:, 1, 1] -= dq[:, 2]
    lam_min = np.linalg.eigvalsh(q)[:, 0]
    shift = np.where(lam_min < PD_FLOOR, PD_FLOOR - lam_min, 0.0)
    q += shift[:, None, None] * np.eye(2)
    meta = dict(problem.metadata)
    meta["perturbation"] = {"seed": pert.seed, "magnitude_range": list(pert.magnitude_range)}
    return replace(
        problem,
        Q=q,
        r=problem.r - draw((n, 2)),
        a=problem.a - draw(n),
        b=problem.b - draw(n),
        c=problem.c - draw(n),
        const=problem.const - draw(n),
        pi=problem.pi - draw(n),
        metadata=meta,
    )
