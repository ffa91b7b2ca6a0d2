import json

import numpy as np
import pytest

import fedbilevel as fb


def test_version():
    assert fb.__version__.count(".") == 2


def test_prox():
    np.testing.assert_allclose(fb.soft_threshold(np.array([3.0, -0.5, 1.0]), 1.0), [2.0, 0.0, 0.0])
    value, grad = fb.moreau_l1(np.array([2.0]), 1.0)
    assert value == pytest.approx(1.5)
    np.testing.assert_allclose(grad, [1.0])
    assert fb.huber(0.5, 1.0) == pytest.approx(0.125)
    with pytest.raises(ValueError):
        fb.prox_lsp(np.array([1.0]), 1.0, 0.1)


def test_min_norm_reference_matches_pinv():
    inst = fb.make_overparam_ls(10, 4, 2, seed=3)
    a, b = inst.affine_solution_set
    x_star, f_star, h_star = fb.min_norm_reference(inst)
    np.testing.assert_allclose(x_star, np.linalg.pinv(a) @ b, atol=1e-10)
    assert f_star == pytest.approx(0.5 * x_star @ x_star)
    assert h_star == 0.0


def test_training_reduces_inner_objective():
    inst = fb.make_overparam_ls(12, 5, 3, seed=1)
    sched = fb.make_schedule("fedavg-sc", inst, R=300, K=2, S=3, enforce_caps=False)
    assert sched.eta > 0 and sched.gamma_local > 0
    x_bar, x_final = fb.run_training(inst, sched, method="scaffold", seed=2, stochastic=True)
    assert inst.inner_value(x_bar) < inst.inner_value(np.zeros(12))
    m = fb.metrics(inst, x_bar)
    assert m["h_gap"] >= -1e-10


def test_workers_do_not_change_results():
    inst = fb.make_overparam_ls(12, 5, 4, seed=5)
    sched = fb.make_schedule("fedavg-sc", inst, R=50, K=3, S=2, enforce_caps=False)
    a = fb.run_training(inst, sched, seed=9, stochastic=True, workers=1)
    b = fb.run_training(inst, sched, seed=9, stochastic=True, workers=3)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_err_eta_zero_at_optimum():
    inst = fb.make_overparam_ls(8, 3, 2, seed=0)
    x, _ = fb.solve_regularized(inst, 0.5)
    assert fb.measure_err_eta(inst, 0.5, x) <= 1e-12


def test_two_loop_round_count():
    inst = fb.make_overparam_ls(8, 3, 2, seed=0)
    out = fb.run_two_loop(inst, fb.LocalObjective.moreau_lsp(0.01, 0.1), T=5, K=2, seed=1)
    assert out["total_inner_rounds"] == 15
    assert len(out["dist_to_xh"]) == 5


def test_run_config_and_errors():
    cfg = {
        "problem": {"kind": "overparam-ls", "n": 10, "m": 4, "clients": 2},
        "method": {"name": "fedavg"},
        "schedule": {"R": 5, "enforce_caps": False},
    }
    runs = fb.run_config(json.dumps(cfg))
    assert len(runs) == 1
    assert runs[0]["csv"].count("\n") == 6
    assert "config_hash" in json.loads(runs[0]["manifest"])
    cfg["schedule"]["R"] = 0
    with pytest.raises(fb.ConfigError):
        fb.run_config(json.dumps(cfg))
