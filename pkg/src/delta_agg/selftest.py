"""Fast invariant checks runnable without pytest (``delta-agg selftest``)."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np

from . import algorithms as alg
from . import graph as gr
from . import problem as pb
from .estimator import LossConfig, MlpArch, eval_loss_grad, forward, input_grads, xavier_init


def _central_diff(f, x, h=1e-5):
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def check_weights() -> str:
    for seed in range(5):
        w = gr.metropolis_weights(gr.generate_erdos_renyi(12, 0.4, seed))
        a = np.asarray(w.weights)
        assert np.abs(a.sum(0) - 1).max() <= 1e-12 and np.abs(a.sum(1) - 1).max() <= 1e-12
        assert gr.consensus_contraction_factor(w) < 1
    return "5 random graphs doubly stochastic, rho < 1"


def check_problem_gradients() -> str:
    prob = pb.generate_problem(6, 3)
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(20):
        x = rng.uniform(-5, 5, 6)
        fd = _central_diff(lambda z: pb.global_cost(prob, z), x)
        g = pb.global_grad(prob, x)
        worst = max(worst, np.max(np.abs(fd - g) / np.maximum(1.0, np.abs(g))))
    assert worst <= 1e-6, worst
    return f"global gradient vs finite differences, worst rel err {worst:.1e}"


def check_estimator_gradients() -> str:
    arch = MlpArch(2, 16)
    rng = np.random.default_rng(1)
    worst = 0.0
    for t in range(10):
        th = xavier_init(arch, t)
        x, s = rng.uniform(-3, 3, 2)
        fd = _central_diff(lambda z: forward(arch, th, z[0], z[1]), np.array([x, s]))
        g1, g2 = input_grads(arch, th, x, s)
        g = np.concatenate([g1, g2])
        worst = max(worst, np.max(np.abs(fd - g) / np.maximum(1.0, np.abs(g))))
        y = rng.normal() * 5
        _, g3 = eval_loss_grad(arch, th, LossConfig(1e-3), x, s, y)
        idx = rng.choice(arch.n_params, 5, replace=False)
        for j in idx:
            e = np.zeros(arch.n_params)
            e[j] = 1e-5
            lp, _ = eval_loss_grad(arch, th + e, LossConfig(1e-3), x, s, y)
            lm, _ = eval_loss_grad(arch, th - e, LossConfig(1e-3), x, s, y)
            worst = max(worst, abs((lp - lm) / 2e-5 - g3[j]) / max(1.0, abs(g3[j])))
    assert worst <= 1e-5, worst
    return f"network input/parameter gradients, worst rel err {worst:.1e}"


def check_conservation() -> str:
    n = 8
    w = gr.metropolis_weights(gr.generate_erdos_renyi(n, 0.5, 0))
    prob = pb.generate_problem(n, 0)
    arch = MlpArch(2, 8)
    cfg = alg.StepConfig(1e-4, arch=arch)
    net = alg.init_state(np.random.default_rng(0).standard_normal(n),
                         np.stack([xavier_init(arch, i) for i in range(n)]))
    oracle = pb.FeedbackOracle(prob)
    for _ in range(500):
        net = alg.delta_step(net, prob, w, cfg, oracle)
    s_res, y_res = alg.audit_conservation(net)
    scale = 1.0 + np.abs(net.s).sum() + np.abs(net.y).sum()
    assert s_res <= 1e-9 * scale and y_res <= 1e-9 * scale
    assert np.all(oracle.total == 500)
    return f"500 DELTA rounds: tracker sums {s_res:.1e}, {y_res:.1e}; one sample per agent per round"


def check_frozen_decay() -> str:
    rng = np.random.default_rng(2)
    for seed in range(5):
        w = gr.metropolis_weights(gr.generate_erdos_renyi(10, 0.4, seed))
        prob = pb.generate_problem(10, seed)
        s = rng.normal(size=(10, 1))
        s -= s.mean()
        net = alg.NetworkState(rng.normal(size=(10, 1)), s, np.zeros((10, 1)))
        rho = gr.consensus_contraction_factor(w)
        e = alg.frozen_consensus_decay(net, prob, w, 30)
        assert all(b <= rho * a + 1e-9 for a, b in zip(e, e[1:]))
    return "frozen tracker error contracts by rho each step"


CHECKS: dict[str, Callable[[], str]] = {
    "weights": check_weights,
    "problem_gradients": check_problem_gradients,
    "estimator_gradients": check_estimator_gradients,
    "conservation": check_conservation,
    "frozen_decay": check_frozen_decay,
}


def run_selftest() -> list[tuple[str, bool, str]]:
    results = []
    for name, fn in CHECKS.items():
        try:
            results.append((name, True, fn()))
        except AssertionError as exc:
            results.append((name, False, f"assertion failed: {exc}"))
    return results
