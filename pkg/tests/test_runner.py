"""Experiment orchestration: sweeps, fingerprints, aggregation, rate probe."""

import math

import numpy as np
import pytest
from scipy.stats import binom

from pushopt import rng
from pushopt.graph import cyclic_er_rings
from pushopt.oracle import make_pl_sine, make_quadratic
from pushopt.runner import (
    PL_SINE_ALPHA_GRID,
    PL_SINE_BETA_GRID,
    PRESETS,
    ExperimentConfig,
    aggregate,
    build_objective,
    build_schedule,
    canonical_json,
    child_seed,
    fingerprint,
    group_traces,
    rate_probe,
    run_experiment,
    sign_test_p,
)


def small_config(**overrides):
    base = dict(
        objective={"kind": "pl-sine", "n": 8, "sigma": 0.5},
        topology={"mode": "cyclic-er-rings", "n": 8, "p": 0.3, "seed": 3},
        algorithms=[
            {"variant": "push-asgd", "alpha": 0.01, "beta": 0.05, "init_batch": 1, "T": 30},
            {"variant": "push-sgd", "alpha": 0.01, "beta": 0.0, "init_batch": 1, "T": 30},
        ],
        seeds=[0, 1, 2],
        x0=2.0,
        probe_stride=10,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def test_cell_count_and_order():
    traces = run_experiment(small_config(), backend="numpy")
    assert len(traces) == 6  # 2 algorithms x 3 seeds
    assert [tr.meta["algo_index"] for tr in traces] == [0, 0, 0, 1, 1, 1]
    assert [tr.seed for tr in traces] == [0, 1, 2, 0, 1, 2]
    assert traces[0].variant == "push-asgd" and traces[3].variant == "push-sgd"


def test_rerun_identical():
    cfg = small_config()
    a = run_experiment(cfg, backend="numpy")
    b = run_experiment(cfg, backend="numpy")
    for ta, tb in zip(a, b):
        assert ta.meta["fingerprint"] == tb.meta["fingerprint"]
        assert np.array_equal(ta.gap, tb.gap)
        assert np.array_equal(ta.grad_norm_sq, tb.grad_norm_sq)


def test_fingerprint_golden_and_exec_field_exclusion():
    cfg = {
        "objective": {"kind": "pl-sine", "n": 10, "sigma": 0.5},
        "topology": {"mode": "cyclic-er-rings", "n": 10, "p": 0.2, "seed": 3},
        "algorithms": [{"variant": "push-asgd", "alpha": 0.01, "beta": 0.015,
                        "init_batch": 1, "T": 50}],
        "seeds": [0, 1],
        "workers": 4,
        "out_dir": "somewhere",
    }
    assert fingerprint(cfg) == "f42b1b5a34b259df"
    changed = dict(cfg, workers=1, out_dir="elsewhere")
    assert fingerprint(changed) == fingerprint(cfg)
    assert fingerprint(dict(cfg, seeds=[0, 2])) != fingerprint(cfg)


def test_cell_fingerprints_distinguish_algorithms():
    cfg = small_config()
    assert fingerprint(cfg, 0) != fingerprint(cfg, 1)


def test_canonical_json_roundtrip_stable():
    cfg = small_config()
    text = canonical_json(cfg)
    import json

    rebuilt = ExperimentConfig(**json.loads(text))
    assert canonical_json(rebuilt) == text


def test_child_seed_documented_formula():
    assert child_seed(5, 1, 2) == rng.derive_key(5, rng.STREAM_CHILD, 1, 2)
    assert child_seed(5, 1, 2) != child_seed(5, 0, 2)


def test_aggregate_single_seed_is_identity():
    traces = run_experiment(small_config(seeds=[4]), backend="numpy")
    groups = group_traces(traces)
    agg = aggregate(groups[0], "gap")
    assert np.array_equal(agg["median"], groups[0][0].gap)
    assert np.array_equal(agg["q25"], agg["q75"])


def test_aggregate_constant_metric_collapses_quantiles():
    traces = run_experiment(small_config(), backend="numpy")
    groups = group_traces(traces)
    agg = aggregate(groups[0], "sfo")  # sfo identical across seeds
    assert np.array_equal(agg["q25"], agg["median"])
    assert np.array_equal(agg["q75"], agg["median"])
    with pytest.raises(KeyError):
        aggregate(groups[0], "bogus")
    with pytest.raises(ValueError):
        aggregate([], "gap")


def test_workers_do_not_change_results():
    cfg1 = small_config(workers=1)
    cfg4 = small_config(workers=4)
    a = run_experiment(cfg1, backend="numpy")
    b = run_experiment(cfg4, backend="numpy")
    for ta, tb in zip(a, b):
        assert np.array_equal(ta.gap, tb.gap)
        assert np.array_equal(ta.est_err, tb.est_err)


def test_divergence_is_nonfatal_to_siblings():
    cfg = small_config(algorithms=[
        {"variant": "push-asgd", "alpha": 1e8, "beta": 0.5, "init_batch": 1, "T": 50},
        {"variant": "push-sgd", "alpha": 0.01, "beta": 0.0, "init_batch": 1, "T": 50},
    ])
    traces = run_experiment(cfg, backend="numpy")
    assert all(tr.diverged for tr in traces[:3])
    assert all(tr.divergence_step > 0 for tr in traces[:3])
    assert not any(tr.diverged for tr in traces[3:])


def test_sign_test_exact_values():
    # cross-checked against the binomial tail
    for wins, losses in ((15, 5), (14, 6), (8, 2), (0, 0)):
        expected = 1.0 if wins + losses == 0 else float(
            binom.sf(wins - 1, wins + losses, 0.5))
        assert sign_test_p(wins, losses) == pytest.approx(expected, rel=1e-12)
    assert sign_test_p(15, 5) < 0.05 < sign_test_p(14, 6)


def test_rate_probe_step_size_schedule():
    obj = make_pl_sine(9, 0.5)
    sched = cyclic_er_rings(9, 0.3, seed=2)
    res = rate_probe(obj, sched, [64, 216, 512], [0], x0=2.0, backend="numpy")
    for T, alpha, beta, b in zip(res.T_values, res.alphas, res.betas, res.batches):
        assert alpha == pytest.approx(0.5 / (3 * T ** (1 / 3)))
        assert beta == pytest.approx(min(1.0, T ** (-2 / 3)))
        assert b == max(1, math.ceil(T ** (1 / 3) / 9))
    assert all(m >= 0 for m in res.medians)
    with pytest.raises(ValueError):
        rate_probe(obj, sched, [10, 20], [0])


def test_rate_probe_deterministic_quadratic_slope():
    # With the T^(-1/3) step-size coupling the saturated gradient-norm sum
    # grows like 1/alpha, so the averaged metric decays as T^(-2/3); the
    # fit lands near -0.67 and must stay clearly negative.
    obj = make_quadratic(12, 3, seed=3)
    sched = cyclic_er_rings(12, 0.25, seed=5)
    res = rate_probe(obj, sched, [100, 300, 1000], [0, 1], x0=2.0, backend="numpy")
    assert res.slope <= -0.55
    assert not res.diverged_cells


def test_presets_reference_values():
    pl = PRESETS["pl-sine"]
    assert pl["objective"]["n"] == 100
    assert pl["objective"]["sigma"] == 0.5  # noise std 1/2
    assert pl["topology"]["mode"] == "cyclic-er-rings"
    assert len(pl["seeds"]) == 20
    for spec in pl["algorithms"]:
        assert spec["alpha"] in PL_SINE_ALPHA_GRID
        if spec["variant"] == "push-asgd":
            assert spec["beta"] in PL_SINE_BETA_GRID
    logi = PRESETS["logistic"]
    assert logi["algorithms"][0]["alpha"] == 6e-5
    assert logi["algorithms"][0]["beta"] == 0.015
    assert logi["objective"]["lam"] == 1e-4
    assert logi["objective"]["samples_per_node"] == 12


def test_build_objective_and_schedule_from_specs():
    obj = build_objective({"kind": "quadratic", "n": 4, "d": 2, "data_seed": 1})
    assert obj.n == 4 and obj.dim == 2
    obj2 = build_objective({"kind": "logistic", "n": 3, "d": 4,
                            "samples_per_node": 5, "lam": 0.01})
    assert obj2.n == 3
    sched = build_schedule({"mode": "static-ring", "n": 6})
    assert sched.mode == "static"
    sched2 = build_schedule({"mode": "er-random", "n": 6, "p": 0.4, "seed": 2})
    assert sched2.mode == "er-random"
    with pytest.raises(ValueError):
        build_objective({"kind": "bogus"})
    with pytest.raises(ValueError):
        build_schedule({"mode": "bogus", "n": 4})


def test_experiment_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(objective={}, topology={}, algorithms=[], seeds=[1])
    with pytest.raises(ValueError):
        ExperimentConfig(objective={}, topology={}, algorithms=[{}], seeds=[])
