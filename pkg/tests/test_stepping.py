"""Operator-split time stepping: configs, stimuli, runs, and records."""

import numpy as np
import pytest

from sicurve.cell_model import CellParams
from sicurve.geometry import BoxSpec
from sicurve.stepping import (
    ActiveStimulus,
    SteppingConfig,
    StepError,
    godunov_step,
    run,
)


# ---------------------------------------------------------------- config


def test_config_validation():
    with pytest.raises(ValueError):
        SteppingConfig(dt=0.0)
    with pytest.raises(ValueError):
        SteppingConfig(M=0)
    with pytest.raises(ValueError):
        SteppingConfig(t0=5.0, t_end=5.0)
    cfg = SteppingConfig(dt=0.1, t0=2.0, t_end=4.0)
    assert cfg.num_steps == 20


def test_stimulus_active_window_half_open():
    stim = ActiveStimulus(sites=np.array([0]), amplitude=1.0, onset=10.0,
                          duration=2.0)
    dt = 0.1
    # the step [t, t+dt) overlaps [onset, onset+duration)
    assert not stim.active(9.8, dt)
    assert stim.active(9.95, dt)      # step straddles the onset
    assert stim.active(10.0, dt)
    assert stim.active(11.9, dt)
    assert not stim.active(12.0, dt)  # pulse already over


# ---------------------------------------------------------------- stepping


def test_godunov_refuses_to_pass_t_end(coarse_sheet_model):
    cfg = SteppingConfig(dt=0.1, t_end=0.1)
    state = coarse_sheet_model.rest_state()
    state = godunov_step(coarse_sheet_model, state, [], cfg)
    with pytest.raises(StepError):
        godunov_step(coarse_sheet_model, state, [], cfg)


def test_rest_drift_is_negligible(coarse_sheet_model):
    """Unstimulated tissue stays at the resting potential."""
    model = coarse_sheet_model
    cfg = SteppingConfig(dt=0.1, t_end=20.0)
    rec = run(model, [], cfg)
    v_rest = model.cell.V_rest
    assert np.max(np.abs(model.site_potentials(rec.final_state) - v_rest)) < 1e-3


def test_run_rejects_mismatched_initial_time(coarse_sheet_model):
    state = coarse_sheet_model.rest_state(t0=5.0)
    cfg = SteppingConfig(dt=0.1, t0=0.0, t_end=1.0)
    with pytest.raises(ValueError, match="initial state time"):
        run(coarse_sheet_model, [], cfg, initial_state=state)


def test_run_rejects_out_of_window_stimulus(coarse_sheet_model):
    cfg = SteppingConfig(dt=0.1, t_end=1.0)
    stim = ActiveStimulus(sites=np.array([0]), amplitude=1.0, onset=5.0,
                          duration=2.0)
    with pytest.raises(ValueError, match="onset"):
        run(coarse_sheet_model, [stim], cfg)


def _center_stimulus(model, amplitude=300.0, onset=0.0):
    lo = model.mesh.vertices.min(axis=0)
    hi = model.mesh.vertices.max(axis=0)
    box = BoxSpec(tuple(lo), tuple(np.maximum(hi - lo, 1e-3) * [0.2, 1.0, 1.0]))
    sites = model.electrode_sites(box)
    assert len(sites) > 0
    return ActiveStimulus(sites=sites, amplitude=amplitude, onset=onset,
                          duration=2.0)


def test_propagation_and_activation_interpolation(coarse_sheet_model):
    """A suprathreshold pulse activates remote sites; activation times are
    sub-dt via linear interpolation of the 0 mV upcrossing."""
    model = coarse_sheet_model
    cfg = SteppingConfig(dt=0.1, t_end=25.0)
    stim = _center_stimulus(model)
    far = model.nearest_site(model.mesh.vertices.max(axis=0))
    rec = run(model, [stim], cfg, probes=[model.mesh.vertices.max(axis=0)])
    assert rec.site_peak[far] > 0.0
    t_act = rec.activation_time[far]
    assert np.isfinite(t_act)
    # interpolated: strictly between two consecutive sample times
    k = int(np.searchsorted(rec.times, t_act))
    assert rec.times[k - 1] < t_act <= rec.times[k]
    # the probe trace brackets 0 mV around the activation time
    trace = rec.probe_traces[:, 0]
    assert trace[k - 1] <= 0.0 < trace[k]


def test_peak_and_activation_windows(coarse_sheet_model):
    """Samples before peak_from / activation_from are ignored."""
    model = coarse_sheet_model
    cfg = SteppingConfig(dt=0.1, t_end=25.0)
    stim = _center_stimulus(model)
    late = run(model, [stim], cfg, peak_from=24.5, activation_from=24.5)
    # by 24.5 ms the early activity is over: no upcrossings counted
    assert np.all(np.isnan(late.activation_time))
    full = run(model, [stim], cfg)
    assert np.max(full.site_peak) > np.max(late.site_peak)


def test_snapshot_cadence(coarse_sheet_model):
    model = coarse_sheet_model
    cfg = SteppingConfig(dt=0.1, t_end=2.0)
    rec = run(model, [], cfg, snapshot_every=0.5)
    times = [t for t, _ in rec.snapshots]
    assert times == pytest.approx([0.0, 0.5, 1.0, 1.5, 2.0])
    # snapshots are deep copies, not views of the evolving state
    rec.snapshots[0][1].field.v[:] = 123.0
    assert not np.any(model.site_potentials(rec.final_state) == 123.0)


def test_run_is_deterministic(coarse_sheet_model):
    model = coarse_sheet_model
    cfg = SteppingConfig(dt=0.1, t_end=5.0)
    stim = _center_stimulus(model)
    probe = [model.mesh.vertices.mean(axis=0)]
    a = run(model, [stim], cfg, probes=probe)
    b = run(model, [stim], cfg, probes=probe)
    assert np.array_equal(a.probe_traces, b.probe_traces)
    assert np.array_equal(model.site_potentials(a.final_state),
                          model.site_potentials(b.final_state))


def test_restart_matches_continuous_run(coarse_sheet_model):
    """Stopping at t=2 and restarting reproduces the uninterrupted run."""
    model = coarse_sheet_model
    stim = _center_stimulus(model)
    whole = run(model, [stim], SteppingConfig(dt=0.1, t_end=4.0))
    first = run(model, [stim], SteppingConfig(dt=0.1, t_end=2.0))
    # the 2 ms pulse is over by t=2, so the restart leg carries no stimulus
    second = run(model, [], SteppingConfig(dt=0.1, t0=2.0, t_end=4.0),
                 initial_state=first.final_state)
    va = model.site_potentials(whole.final_state)
    vb = model.site_potentials(second.final_state)
    assert np.max(np.abs(va - vb)) < 1e-12


def test_record_to_csv(tmp_path, coarse_sheet_model):
    model = coarse_sheet_model
    cfg = SteppingConfig(dt=0.1, t_end=1.0)
    probe = [model.mesh.vertices.mean(axis=0)]
    rec = run(model, [], cfg, probes=probe)
    path = tmp_path / "trace.csv"
    rec.to_csv(path, header_comment="hello")
    lines = path.read_text().splitlines()
    assert lines[0] == "# hello"
    assert lines[1] == "t_ms,probe1_mV"
    assert len(lines) == 2 + len(rec.times)
    t0, v0 = lines[2].split(",")
    assert float(t0) == 0.0
    assert float(v0) == pytest.approx(model.cell.V_rest, abs=1e-3)
