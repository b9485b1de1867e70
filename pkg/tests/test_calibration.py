"""Conduction-velocity measurement and surrogate-based tissue calibration."""

import numpy as np
import pytest

from sicurve.calibration import (
    CV_TARGETS,
    PENALTY,
    CalibrationError,
    CVMeasurement,
    MeasurementError,
    calibrate,
    cv_objective,
    history_csv_rows,
    measure_cv,
    sigma_tensors,
)


# ----------------------------------------------------------- measurement data


def test_cv_measurement_validation():
    pos = (0.5, 1.0, 1.5)
    CVMeasurement("x", pos, (1.0, 2.0, 3.0), 50.0)
    with pytest.raises(MeasurementError, match="increasing"):
        CVMeasurement("x", pos, (1.0, 3.0, 2.0), 50.0)
    with pytest.raises(MeasurementError, match="positive"):
        CVMeasurement("x", pos, (1.0, 2.0, 3.0), -1.0)


def test_sigma_tensors_ties_transverse_axes():
    sigma_i, sigma_e = sigma_tensors([0.3, 0.02, 0.9, 0.2])
    assert sigma_i == (0.3, 0.02, 0.02)
    assert sigma_e == (0.9, 0.2, 0.2)


# ------------------------------------------------------------ cv measurement


def test_measure_cv_anisotropy(coarse_sheet_model):
    """Fibers run along x: longitudinal CV exceeds transverse CV."""
    cv_x = measure_cv(coarse_sheet_model, "x")
    cv_y = measure_cv(coarse_sheet_model, "y")
    assert cv_x.cv > cv_y.cv > 0.0
    # velocity between adjacent samples is positive and roughly uniform
    dx = np.diff(cv_x.sample_positions)
    dt = np.diff(cv_x.activation_times)
    speeds = dx / dt * 100.0
    assert np.all(speeds > 0)
    assert np.max(speeds) / np.min(speeds) < 2.0


def test_measure_cv_sample_layout(coarse_sheet_model):
    meas = measure_cv(coarse_sheet_model, "x")
    lo = coarse_sheet_model.mesh.bounding_box.lo[0]
    ext = (coarse_sheet_model.mesh.bounding_box.hi
           - coarse_sheet_model.mesh.bounding_box.lo)[0]
    fracs = [(p - lo) / ext for p in meas.sample_positions]
    assert fracs == pytest.approx([0.20, 0.35, 0.50, 0.65, 0.80])


def test_measure_cv_subthreshold_raises(coarse_sheet_model):
    with pytest.raises(MeasurementError):
        measure_cv(coarse_sheet_model, "x", amplitude=1.0)


def test_cv_objective_penalizes_unexcitable(coarse_sheet_mesh, cell_params):
    value, cvs = cv_objective([1e-6, 1e-7, 1e-6, 1e-7], coarse_sheet_mesh,
                              cell_params)
    assert value == PENALTY
    assert all(np.isnan(c) for c in cvs)


def test_cv_objective_rejects_nonpositive_sigma(coarse_sheet_mesh, cell_params):
    with pytest.raises(ValueError, match="positive"):
        cv_objective([0.25, -0.02, 0.8, 0.2], coarse_sheet_mesh, cell_params)


def test_cv_objective_at_defaults(coarse_sheet_mesh, cell_params):
    value, (cvx, cvy) = cv_objective([0.2525, 0.0222, 0.821, 0.215],
                                     coarse_sheet_mesh, cell_params)
    assert np.isfinite(value) and value < PENALTY
    assert cvx > cvy > 0.0
    assert value == pytest.approx((cvx - CV_TARGETS[0]) ** 2
                                  + (cvy - CV_TARGETS[1]) ** 2)


# ----------------------------------------------------------------- optimizer


def quadratic(center):
    center = np.asarray(center, dtype=float)

    def f(x):
        return float(np.sum((np.asarray(x) - center) ** 2)), (None, None)

    return f


def test_calibrate_validates_inputs():
    with pytest.raises(ValueError, match="budget"):
        calibrate(quadratic([0.5]), [(0.01, 1.0)], budget=5)
    with pytest.raises(ValueError, match="bounds"):
        calibrate(quadratic([0.5]), [(0.0, 1.0)], budget=20)
    with pytest.raises(ValueError, match="bounds"):
        calibrate(quadratic([0.5]), [(1.0, 0.5)], budget=20)


def test_calibrate_respects_budget_and_bounds():
    bounds = [(0.1, 0.9), (0.2, 0.8)]
    res = calibrate(quadratic([0.4, 0.6]), bounds, budget=20, seed=3)
    assert res.evaluations == 20
    assert len(res.history) == 20
    for h in res.history:
        for xi, (lo, hi) in zip(h["params"], bounds):
            assert lo <= xi <= hi
    assert res.objective == min(h["objective"] for h in res.history)


def test_calibrate_improves_on_initial_guess():
    center = [0.35, 0.65, 0.5, 0.25]
    x0 = [0.9, 0.1, 0.9, 0.9]
    res = calibrate(quadratic(center), [(0.01, 1.0)] * 4, budget=50, seed=0,
                    x0=x0)
    assert res.history[0]["params"] == pytest.approx(x0)
    assert res.objective < quadratic(center)(x0)[0] / 10.0
    assert np.max(np.abs(np.array(res.params) - center)) < 0.2


def test_calibrate_converges_1d():
    res = calibrate(quadratic([0.25]), [(0.01, 1.0)], budget=12, seed=4)
    assert abs(res.params[0] - 0.25) < 0.1


def test_calibrate_deterministic():
    a = calibrate(quadratic([0.3, 0.7]), [(0.01, 1.0)] * 2, budget=15, seed=7)
    b = calibrate(quadratic([0.3, 0.7]), [(0.01, 1.0)] * 2, budget=15, seed=7)
    assert a.params == b.params
    assert a.objective == b.objective
    assert [h["params"] for h in a.history] == [h["params"] for h in b.history]


def test_calibrate_vs_grid_oracle():
    """Surrogate search matches a brute-force grid to within grid pitch."""
    f = quadratic([0.42])
    grid = np.linspace(0.01, 1.0, 100)
    best_grid = grid[np.argmin([f([g])[0] for g in grid])]
    res = calibrate(f, [(0.01, 1.0)], budget=15, seed=1)
    assert abs(res.params[0] - best_grid) < 0.05


def test_calibrate_all_penalized_raises():
    def dead(x):
        return PENALTY, (float("nan"), float("nan"))

    with pytest.raises(CalibrationError, match="failed"):
        calibrate(dead, [(0.01, 1.0)], budget=12, seed=0)


def test_calibrate_four_params_reports_tensors():
    res = calibrate(quadratic([0.5, 0.5, 0.5, 0.5]), [(0.01, 1.0)] * 4,
                    budget=12, seed=0)
    assert res.sigma_i == (res.params[0], res.params[1], res.params[1])
    assert res.sigma_e == (res.params[2], res.params[3], res.params[3])
    res1 = calibrate(quadratic([0.5]), [(0.01, 1.0)], budget=12, seed=0)
    assert res1.sigma_i is None and res1.sigma_e is None


def test_history_csv_rows_shape():
    f = quadratic([0.5, 0.5, 0.5, 0.5])
    res = calibrate(f, [(0.01, 1.0)] * 4, budget=12, seed=0)
    rows = list(history_csv_rows(res))
    header, body = rows[0], rows[1:]
    assert header == ("eval_id", "sigma_ix", "sigma_it", "sigma_ex",
                      "sigma_et", "cv_long_cm_s", "cv_trans_cm_s",
                      "objective")
    assert len(body) == res.evaluations
    assert [r[0] for r in body] == list(range(1, res.evaluations + 1))


def test_cv_targets_value():
    assert CV_TARGETS == (61.12, 22.08)
