import math

import pytest

import podlab


def test_pade_unity_at_zero_delay():
    tf = podlab.pade_approx(0.0, 4)
    assert tf.num == [1.0] and tf.den == [1.0]


def test_surrogate_order_four_meets_ten_degrees():
    err = podlab.validate_surrogate(podlab.pade_approx(0.3, 4), 0.3)
    assert err < 10.0
    assert podlab.validate_surrogate(podlab.pade_approx(0.3, 1), 0.3) >= 10.0


def test_nyquist_and_limits():
    assert podlab.nyquist_limit(3.2) == pytest.approx(1.6, abs=1e-15)
    p_l, q_l = podlab.power_limits(0.1, 0.5, 0.0, 1.0)
    assert p_l == pytest.approx(0.05)
    assert q_l == pytest.approx(math.sqrt(1 - 0.55**2))
    with pytest.raises(podlab.DomainError):
        podlab.power_limits(0.5, 0.8, 0.0, 1.0)


def test_leadlag_phase():
    tf = podlab.leadlag_tf(1.0, 0.1, 1.0, 1.0)
    assert podlab.phase_at(tf, 1.0) == pytest.approx(math.degrees(math.atan(1.0) - math.atan(0.1)), abs=1e-9)


def test_dogleg_linear():
    res = podlab.dogleg_solve(lambda x: [x[0] + x[1] - 3.0, x[0] - x[1] - 1.0], [0.0, 0.0])
    assert res["converged"]
    assert res["x"] == pytest.approx([2.0, 1.0], abs=1e-10)


def test_plant_modes():
    plant = podlab.build_plant()
    freqs = [m["freq_hz"] for m in plant["modes"]]
    assert freqs == pytest.approx([0.45, 0.90], rel=1e-9)


def test_design_phases_near_zero():
    report = podlab.design()
    for loop in ("active", "reactive"):
        for budget in report[loop]["phase_budgets"]:
            assert abs(budget["phi_G_deg"]) < 5.0
        assert report[loop]["gain"] > 0.0


def test_small_ensemble_is_reproducible():
    cfg = podlab.default_config()
    cfg["simulation"]["runs"] = 3
    cfg["simulation"]["duration_s"] = 20.0
    cfg["simulation"]["window_s"] = [1.0, 20.0]
    a = podlab.ensemble(cfg, seed=5)
    b = podlab.ensemble(cfg, seed=5)
    assert a == b
    assert a["n_runs"] == 3
    assert a["median_ratio"] < 1.0


def test_unknown_config_key_rejected():
    cfg = podlab.default_config()
    cfg["plant"]["bogus"] = 1
    with pytest.raises(podlab.DomainError):
        podlab.design(cfg)
