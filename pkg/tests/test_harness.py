import json

import numpy as np
import pytest

from delta_agg import algorithms as alg
from delta_agg import harness as h
from delta_agg import problem as pb


def small(algorithm="delta", **kw):
    base = dict(algorithm=algorithm, n_agents=6, seed=3, gamma=1e-4, iterations=300, stride=50,
                estimator=h.EstimatorSpec(hidden_width=8))
    base.update(kw)
    return h.RunConfig(**base)


def test_same_config_gives_identical_csv(tmp_path):
    for algo in h.ALGORITHMS:
        a = h.write_trace(h.run_experiment(small(algo)), tmp_path / f"a_{algo}.csv")
        b = h.write_trace(h.run_experiment(small(algo)), tmp_path / f"b_{algo}.csv")
        assert a.read_bytes() == b.read_bytes()


def test_different_seed_changes_csv(tmp_path):
    a = h.write_trace(h.run_experiment(small()), tmp_path / "a.csv")
    b = h.write_trace(h.run_experiment(small(seed=4)), tmp_path / "b.csv")
    assert a.read_bytes() != b.read_bytes()


def test_record_count_and_round_trip(tmp_path):
    trace = h.run_experiment(small(iterations=101, stride=50))
    assert [r.k for r in trace.records] == [0, 50, 100]
    path = h.write_trace(trace, tmp_path / "t.csv")
    assert h.read_trace(path) == trace.records
    side = json.loads(path.with_suffix(".json").read_text())
    assert side["resolved_seeds"] == small().resolved_seeds()
    assert h.RunConfig.from_dict(side["config"]) == trace.config


def test_single_iteration_run():
    trace = h.run_experiment(small(iterations=1))
    assert len(trace.records) == 1 and trace.records[0].k == 0


def test_header_only_csv(tmp_path):
    trace = h.RunTrace(small(), {})
    path = h.write_trace(trace, tmp_path / "empty.csv")
    assert path.read_text() == ",".join(h.CSV_COLUMNS) + "\n"
    assert h.read_trace(path) == []
    assert np.isnan(h.plateau([]))


def test_sample_counts_one_per_round():
    for algo in ("delta", "zo"):
        trace = h.run_experiment(small(algo, iterations=77))
        assert np.all(trace.sample_counts == 77)
    assert np.all(h.run_experiment(small("dagt", iterations=5)).sample_counts == 0)


def test_seed_derivation():
    seeds = small(seed=10).resolved_seeds()
    assert seeds == {"graph": 10, "problem": 10, "init": 11, "x0": 12, "zo": 13, "perturbation": 14}
    assert small(seed=10, problem_seed=1).resolved_seeds()["problem"] == 1


def test_descent_direction_exact_at_consensus():
    w, prob, x0 = h.build_instance(small("dagt"))
    net = alg.init_state(x0)
    sigma = pb.aggregate(prob, x0)
    net.s[:, 0] = sigma - prob.pi * x0
    _, g2 = prob.partials(x0, np.full(6, sigma))
    net.y[:, 0] = g2.mean() - g2
    np.testing.assert_allclose(h.descent_direction(net, prob), pb.global_grad(prob, x0), rtol=1e-12, atol=1e-12)
    rec = h.compute_metrics(net, prob, -1.0, *alg.exact_surrogates(net, prob), "dagt")
    assert rec.descent_error <= 1e-10 and rec.s_track_error <= 1e-12 and rec.y_track_error <= 1e-10


def test_residual_columns_are_tiny():
    trace = h.run_experiment(small(iterations=500))
    for name in ("s_residual", "y_residual"):
        assert trace.column(name).max() <= 1e-9


def test_dagt_error_decreases():
    trace = h.run_experiment(small("dagt", gamma=1e-3, iterations=3000, stride=100))
    e = trace.column("rel_cost_error")
    assert e[-1] < 1e-3 * e[0]


def test_plateau_uses_last_five_percent():
    values = np.r_[np.full(95, 10.0), np.arange(5.0)]
    assert h.plateau(values) == 2.0
    assert h.plateau([7.0]) == 7.0


def test_config_validation():
    with pytest.raises(h.ConfigError):
        h.RunConfig(algorithm="adam")
    with pytest.raises(h.ConfigError):
        h.RunConfig(iterations=0)
    with pytest.raises(h.ConfigError):
        h.RunConfig.from_dict({"gamma": 1e-3, "bogus": 1})
    with pytest.raises(h.ConfigError):
        h.run_experiment(small(perturbation=h.PerturbationSpec(trigger_iteration=10_000)))
    with pytest.raises(h.ConfigError):
        h.robustness_experiment(small())


def test_load_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"algorithms": ["dagt", "zo"], "n_agents": 4, "gamma": 1e-3,
                                "perturbation": {"trigger_iteration": 5, "magnitude_range": [0, 0.05]}}))
    cfg, algos = h.load_config(path)
    assert algos == ["dagt", "zo"] and cfg.n_agents == 4
    assert cfg.perturbation.magnitude_range == (0, 0.05)
    path.write_text("{not json")
    with pytest.raises(h.ConfigError):
        h.load_config(path)


def test_compare_rejects_mismatched_instances():
    with pytest.raises(h.ConfigError, match="gamma"):
        h.compare_runs([small("dagt"), small("zo", gamma=1e-3)])
    with pytest.raises(h.ConfigError, match="problem_seed"):
        h.compare_runs([small("dagt"), small("zo", problem_seed=99)])
    with pytest.raises(h.ConfigError):
        h.compare_runs([small("dagt"), small("dagt")])
    with pytest.raises(h.ConfigError):
        h.compare_runs([])


def test_compare_writes_outputs(tmp_path):
    comp = h.compare_runs([small(a, iterations=200) for a in h.ALGORITHMS])
    path = comp.write(tmp_path / "cmp.csv")
    header = path.read_text().splitlines()[0]
    assert header == "k,rel_cost_error_delta,rel_cost_error_dagt,rel_cost_error_zo"
    assert (tmp_path / "cmp_summary.csv").exists()
    assert all((tmp_path / f"cmp_{a}.csv").exists() for a in h.ALGORITHMS)
    assert set(comp.summary) == set(h.ALGORITHMS)


def test_compare_is_independent_of_worker_count(tmp_path):
    cfgs = [small(a, iterations=100) for a in ("dagt", "zo")]
    one = h.compare_runs(cfgs, workers=1).write(tmp_path / "one.csv")
    two = h.compare_runs(cfgs, workers=2).write(tmp_path / "two.csv")
    assert one.read_bytes() == two.read_bytes()


def test_perturbation_resolves_new_optimum():
    cfg = small("dagt", gamma=1e-3, iterations=200,
                perturbation=h.PerturbationSpec(trigger_iteration=100))
    trace = h.robustness_experiment(cfg)
    assert [o["k"] for o in trace.optima] == [0, 100]
    assert trace.optima[0]["f_star"] != trace.optima[1]["f_star"]
    assert trace.f_star == trace.optima[1]["f_star"]


def test_three_records_give_four_lines(tmp_path):
    trace = h.run_experiment(small("dagt", iterations=3, stride=1))
    path = h.write_trace(trace, tmp_path / "three.csv")
    assert len(path.read_text().splitlines()) == 4


def test_descent_direction_single_agent():
    from delta_agg.estimator import MlpArch, input_grads, xavier_init

    arch = MlpArch(2, 8)
    prob = pb.generate_problem(1, 2)
    theta = xavier_init(arch, 5)
    net = alg.init_state([0.8], theta[None, :])
    g1, g2 = input_grads(arch, theta, 0.8, prob.pi[0] * 0.8)
    assert h.descent_direction(net, prob)[0] == pytest.approx(g1[0] + prob.pi[0] * g2[0], rel=1e-14)


def test_dagt_monotone_trend():
    trace = h.run_experiment(h.RunConfig(algorithm="dagt", n_agents=10, seed=1, gamma=1e-4,
                                         iterations=30_000, stride=10))
    e = trace.column("rel_cost_error")
    assert e.min() >= -1e-9
    # windows of 100 strides after a 1000-iteration burn-in
    windows = e[100:].reshape(-1, 100).mean(axis=1)
    assert np.all(np.diff(windows) <= 0)


def test_converged_dagt_descent_error():
    trace = h.run_experiment(h.RunConfig(algorithm="dagt", n_agents=10, seed=1, gamma=1e-3,
                                         iterations=20_000, stride=1000))
    assert trace.final_rel_cost_error <= 1e-6
    assert trace.records[-1].descent_error <= 1e-6


def test_every_record_respects_optimality(tmp_path):
    for algo in h.ALGORITHMS:
        assert h.run_experiment(small(algo)).column("rel_cost_error").min() >= -1e-9


def test_single_algorithm_comparison_summary():
    comp = h.compare_runs([small("dagt")])
    trace = comp.traces["dagt"]
    assert comp.summary["dagt"]["final"] == trace.final_rel_cost_error
    assert comp.summary["dagt"]["plateau"] == h.plateau(trace.column("rel_cost_error"))


def test_zero_perturbation_matches_unperturbed_run(tmp_path):
    plain = h.write_trace(h.run_experiment(small()), tmp_path / "plain.csv")
    zero = small(perturbation=h.PerturbationSpec(trigger_iteration=100, magnitude_range=(0.0, 0.0)))
    pert = h.write_trace(h.robustness_experiment(zero), tmp_path / "zero.csv")
    assert plain.read_bytes() == pert.read_bytes()
