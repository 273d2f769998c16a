"""Acceptance checks at desk scale.

Each test records one line in the session summary and then asserts. The
long runs are shared through module fixtures so every run happens once.
"""

import json
import subprocess
import sys
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE_RESULTS, central_diff

from delta_agg import algorithms as alg
from delta_agg import estimator as est
from delta_agg import graph as gr
from delta_agg import harness as h
from delta_agg import problem as pb


def report(num, name, ok, detail):
    ACCEPTANCE_RESULTS.append((num, name, bool(ok), detail))
    assert ok, detail


def reference_config(**kw):
    """N=20 instance with the default dithers and a width-32 network."""
    base = dict(algorithm="delta", n_agents=20, seed=0, gamma=1e-4, stride=100,
                graph=h.GraphSpec(p=0.5), estimator=h.EstimatorSpec(hidden_width=32),
                dither=h.DitherSpec(amplitude=5.0, period=4))
    base.update(kw)
    return h.RunConfig(**base)


@pytest.fixture(scope="module")
def delta_short():
    """DELTA run of 2e4 rounds, checking tracker sums and the mean identity at each stride."""
    worst_cons, worst_mean = [], []

    def observe(net, problem):
        s_res, y_res = alg.audit_conservation(net)
        scale = 1.0 + np.abs(net.s).sum() + np.abs(net.y).sum()
        worst_cons.append(max(s_res, y_res) / scale)
        sigma = pb.aggregate(problem, net.x[:, 0])
        mean_hat = alg.local_aggregate_estimates(net, problem).mean()
        worst_mean.append(abs(mean_hat - sigma) / (1.0 + abs(sigma)))

    t0 = time.perf_counter()
    trace = h.run_experiment(reference_config(iterations=20_000), observer=observe)
    return trace, np.array(worst_cons), np.array(worst_mean), time.perf_counter() - t0


@pytest.fixture(scope="module")
def comparison():
    t0 = time.perf_counter()
    comp = h.compare_runs([reference_config(algorithm=a, iterations=100_000) for a in ("dagt", "delta", "zo")])
    return comp, time.perf_counter() - t0


def test_c01_conservation(delta_short):
    trace, cons, _, secs = delta_short
    ok = len(cons) == 200 and cons.max() <= 1e-9 and secs < 60
    report(1, "tracker sums stay zero", ok,
           f"{len(cons)} strides, worst relative residual {cons.max():.2e} (<= 1e-9), {secs:.1f} s")


def test_c02_mean_tracking_identity(delta_short):
    _, _, mean_err, _ = delta_short
    report(2, "mean of aggregate estimates equals aggregate", mean_err.max() <= 1e-9,
           f"worst relative gap {mean_err.max():.2e} over {len(mean_err)} strides (<= 1e-9)")


def test_c03_frozen_tracker_contraction():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = -np.inf
    for pair in range(20):
        n = int(rng.integers(4, 31))
        w = gr.metropolis_weights(gr.generate_erdos_renyi(n, float(rng.uniform(0.2, 0.8)), 1000 + pair))
        prob = pb.generate_problem(n, 2000 + pair)
        s = rng.normal(scale=10, size=(n, 1))
        s -= s.mean()
        net = alg.NetworkState(rng.normal(scale=5, size=(n, 1)), s, np.zeros((n, 1)))
        rho = gr.consensus_contraction_factor(w)
        e = np.array(alg.frozen_consensus_decay(net, prob, w, 50))
        worst = max(worst, np.max(e[1:] - rho * e[:-1]))
    secs = time.perf_counter() - t0
    report(3, "frozen tracker error contracts by rho", worst <= 1e-9 and secs < 5,
           f"max(e_next - rho e) = {worst:.2e} over 20 pairs x 50 steps (<= 1e-9), {secs:.2f} s")


def test_c04_exact_gradient_convergence():
    t0 = time.perf_counter()
    trace = h.run_experiment(h.RunConfig(algorithm="dagt", n_agents=10, seed=0, gamma=1e-3,
                                         iterations=20_000, stride=100))
    secs = time.perf_counter() - t0
    e = trace.column("rel_cost_error")
    k = trace.column("k")
    # fit the descent segment: from the start until the error first hits the rounding floor
    floor = np.flatnonzero(e <= 1e-13)
    end = floor[0] if floor.size else e.size
    seg = e[:end]
    slope = np.polyfit(k[:end], np.log10(seg), 1)[0]
    decades = np.log10(seg.max() / seg.min())
    reached = np.flatnonzero(e <= 1e-6)
    ok = reached.size > 0 and slope < 0 and decades >= 6 and secs < 120
    report(4, "exact-gradient tracking converges", ok,
           f"rel error {e[0]:.2e} -> {e[-1]:.2e}, <= 1e-6 at k={int(k[reached[0]]) if reached.size else None}, "
           f"log10 slope {slope:.2e}/iter over {decades:.1f} decades, {secs:.1f} s")


def test_c05_gradient_checks():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    prob = pb.generate_problem(20, 42)
    worst_prob = 0.0
    for _ in range(50):
        i = int(rng.integers(20))
        z = rng.uniform(-8, 8, 2)
        fd = central_diff(lambda v: pb.eval_cost(prob, i, v[0], v[1]), z)
        g = np.array(pb.exact_grads(prob, i, *z))
        worst_prob = max(worst_prob, np.max(np.abs(g - fd) / np.maximum(np.abs(g), 1e-8)))
        x = rng.uniform(-10, 5, 20)
        fd = central_diff(lambda v: pb.global_cost(prob, v), x)
        g = pb.global_grad(prob, x)
        worst_prob = max(worst_prob, np.max(np.abs(g - fd) / np.maximum(np.abs(g), 1e-8)))
    arch = est.MlpArch(2, 32)
    cfg = est.LossConfig(1e-3)
    worst_in = worst_par = 0.0
    for t in range(50):
        theta = est.xavier_init(arch, t)
        z = rng.uniform(-5, 5, 2)
        fd = central_diff(lambda v: est.forward(arch, theta, v[0], v[1]), z)
        g = np.concatenate(est.input_grads(arch, theta, z[0], z[1]))
        worst_in = max(worst_in, np.max(np.abs(g - fd) / np.maximum(np.abs(g), 1e-8)))
        y = rng.uniform(-20, 40)
        _, g3 = est.eval_loss_grad(arch, theta, cfg, z[0], z[1], y)
        j = int(rng.integers(arch.n_params))
        e = np.zeros(arch.n_params)
        e[j] = 1e-5
        fd_j = (est.eval_loss_grad(arch, theta + e, cfg, z[0], z[1], y)[0]
                - est.eval_loss_grad(arch, theta - e, cfg, z[0], z[1], y)[0]) / 2e-5
        worst_par = max(worst_par, abs(g3[j] - fd_j) / max(abs(g3[j]), 1e-8))
    secs = time.perf_counter() - t0
    ok = worst_prob <= 1e-6 and worst_in <= 1e-6 and worst_par <= 1e-5 and secs < 10
    report(5, "finite-difference gradient checks", ok,
           f"cost {worst_prob:.1e}, network input {worst_in:.1e} (<= 1e-6), "
           f"network parameter {worst_par:.1e} (<= 1e-5), 50 points each, {secs:.1f} s")


def test_c06_baseline_ordering(comparison):
    comp, secs = comparison
    p = {a: comp.summary[a]["plateau"] for a in comp.summary}
    ok = p["dagt"] < p["delta"] < p["zo"] and p["delta"] <= 0.5 * p["zo"] and secs < 600
    report(6, "plateau ordering exact < DELTA < zeroth-order", ok,
           f"plateaus dagt {p['dagt']:.2e}, delta {p['delta']:.2e}, zo {p['zo']:.2e} "
           f"(delta/zo = {p['delta'] / p['zo']:.3f} <= 0.5), {secs:.0f} s")


def _smoothed_cost(prob, i, z, delta, n_r=40, n_t=96):
    """Average of the cost over the disc of radius delta: Gauss-Legendre in r, trapezoid in angle."""
    r, wr = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * delta * (r + 1.0)
    wr = 0.5 * delta * wr
    t = 2 * np.pi * np.arange(n_t) / n_t
    rr, tt = np.meshgrid(r, t, indexing="ij")
    sub = pb.AggProblem(prob.Q[i:i + 1], prob.r[i:i + 1], prob.a[i:i + 1], prob.b[i:i + 1],
                        prob.c[i:i + 1], prob.const[i:i + 1], prob.pi[i:i + 1])
    vals = sub.values((z[0] + rr * np.cos(tt)).ravel(), (z[1] + rr * np.sin(tt)).ravel()).reshape(rr.shape)
    integral = np.sum(wr[:, None] * r[:, None] * vals) * (2 * np.pi / n_t)
    return integral / (np.pi * delta**2)


def test_c07_zeroth_order_estimator_mean():
    t0 = time.perf_counter()
    prob = pb.generate_problem(20, 42)
    i, z, delta, n_mc = 3, np.array([1.5, -2.0]), 0.1, 100_000
    # n_mc identical copies of agent i: one library call draws n_mc independent estimates
    idx = np.full(n_mc, i)
    copies = pb.AggProblem(prob.Q[idx], prob.r[idx], prob.a[idx], prob.b[idx], prob.c[idx],
                           prob.const[idx], prob.pi[idx])
    net = alg.init_state(np.full(n_mc, z[0]))
    net.s[:, 0] = z[1] - copies.pi * z[0]
    oracle = pb.FeedbackOracle(copies)
    oracle.begin_iteration(0)
    g1, g2 = alg.zo_surrogates(net, copies, oracle, np.random.default_rng(7), delta)
    est_all = np.concatenate([g1, g2], axis=1)
    mean = est_all.mean(axis=0)
    se = est_all.std(axis=0, ddof=1) / np.sqrt(n_mc)
    target = central_diff(lambda v: _smoothed_cost(prob, i, v, delta), z, h=1e-4)
    zscore = np.abs(mean - target) / se
    secs = time.perf_counter() - t0
    report(7, "zeroth-order estimate is unbiased for the smoothed cost", np.all(zscore <= 3) and secs < 30,
           f"mean {np.round(mean, 3).tolist()} vs smoothed gradient {np.round(target, 3).tolist()}, "
           f"|z| = {np.round(zscore, 2).tolist()} (<= 3), {secs:.1f} s")


def test_c08_robustness_to_cost_change():
    t0 = time.perf_counter()
    T = 100_000
    # dither amplitude 2: at 5 the estimation floor sits above the error the cost change causes
    cfg = reference_config(iterations=T, dither=h.DitherSpec(amplitude=2.0),
                           perturbation=h.PerturbationSpec(trigger_iteration=T // 2, magnitude_range=(0.0, 0.1)))
    trace = h.robustness_experiment(cfg)
    secs = time.perf_counter() - t0
    e, k = trace.column("rel_cost_error"), trace.column("k")
    pre = h.plateau(e[k < T // 2])
    at = e[k == T // 2][0]
    end = h.plateau(e[k >= T // 2])
    ok = at >= 10 * pre and end <= 10 * pre and secs < 600
    report(8, "recovers after a cost change", ok,
           f"pre-change plateau {pre:.2e}, at change {at:.2e} ({at / pre:.0f}x >= 10x), "
           f"end {end:.2e} ({end / pre:.2f}x <= 10x), {secs:.0f} s")


def test_c09_determinism(tmp_path):
    t0 = time.perf_counter()
    doc = reference_config(iterations=3000).to_dict()
    doc["algorithms"] = ["delta", "dagt", "zo"]
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(doc))
    outs = []
    for run, workers in enumerate(("1", "3")):
        out = tmp_path / f"run{run}.csv"
        subprocess.run([sys.executable, "-m", "delta_agg.cli", "compare", str(cfg_path), "--out", str(out),
                        "--workers", workers], check=True, capture_output=True)
        outs.append(out)
    names = ["", "_summary", "_delta", "_dagt", "_zo"]
    same = all(
        (tmp_path / f"run0{n}.csv").read_bytes() == (tmp_path / f"run1{n}.csv").read_bytes() for n in names
    )
    secs = time.perf_counter() - t0
    report(9, "byte-identical CSV across executions", same and secs < 60,
           f"two processes (1 and 3 workers), {len(names)} CSV files each identical, {secs:.1f} s")


def test_c10_sample_budget(delta_short, comparison):
    comp, _ = comparison
    counts = {
        "delta (2e4)": (delta_short[0].sample_counts, 20_000),
        "delta (1e5)": (comp.traces["delta"].sample_counts, 100_000),
        "zo (1e5)": (comp.traces["zo"].sample_counts, 100_000),
    }
    ok = all(np.all(c == T) for c, T in counts.values())
    # the oracle itself refuses a second sample within a round
    oracle = pb.FeedbackOracle(pb.generate_problem(3, 0))
    oracle.begin_iteration(0)
    oracle.sample_all(np.zeros(3), np.zeros(3))
    try:
        oracle.sample(1, 0.0, 0.0)
        refused = False
    except pb.ProtocolViolation:
        refused = True
    report(10, "exactly one cost sample per agent per round", ok and refused,
           "; ".join(f"{n}: min {c.min()} max {c.max()}" for n, (c, _) in counts.items())
           + f"; second sample refused: {refused}")


def test_wider_network_has_lower_plateau(comparison):
    comp, _ = comparison
    narrow = h.run_experiment(reference_config(iterations=100_000, estimator=h.EstimatorSpec(hidden_width=8)))
    p8 = h.plateau(narrow.column("rel_cost_error"))
    p32 = comp.summary["delta"]["plateau"]
    assert p32 < p8, (p32, p8)
