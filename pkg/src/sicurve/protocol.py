"""S1-S2 stimulus experiments and strength-interval curve assembly.

An S1 pulse at t = 0 (amplitude = the resting threshold) conditions the
tissue; an S2 test pulse follows after a chosen coupling interval.  The S2
threshold at each interval is located by geometric bracket expansion from
1 uA/uF followed by bisection on the resolution grid, judging each trial
by the propagation verdict.  Thresholds normalized by the resting
threshold give curves comparable across models and with experimental data.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import BoxSpec, TaggedMesh
from .stepping import ActiveStimulus, ModelState, SimulationRecord, SteppingConfig, run

log = logging.getLogger(__name__)

AMPLITUDE_CAP = 2.0 ** 16


class ProtocolError(RuntimeError):
    pass


class UnexcitableError(ProtocolError):
    """No propagation even at the amplitude cap."""


@dataclass(frozen=True)
class StimulusSpec:
    region: BoxSpec
    amplitude: float        # uA/uF
    onset: float            # ms
    duration: float = 2.0   # ms

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")
        if self.duration <= 0:
            raise ValueError("duration must be positive")

    def resolve(self, model) -> ActiveStimulus:
        return ActiveStimulus(model.electrode_sites(self.region),
                              self.amplitude, self.onset, self.duration)


@dataclass(frozen=True)
class ProbeSet:
    """Four sample points, one per quadrant of the tissue sheet."""

    points: tuple

    def __post_init__(self):
        if len(self.points) != 4:
            raise ValueError("exactly four probe points are required")

    @classmethod
    def quadrants(cls, mesh: TaggedMesh) -> "ProbeSet":
        # quadrant centers: 25% in from each x/y boundary, z mid-plane
        lo, hi = mesh.bounding_box.lo, mesh.bounding_box.hi
        ext = hi - lo
        zmid = lo[2] + 0.5 * ext[2]
        pts = tuple(
            (lo[0] + fx * ext[0], lo[1] + fy * ext[1], zmid)
            for fy in (0.25, 0.75) for fx in (0.25, 0.75)
        )
        return cls(pts)


def default_electrode(mesh: TaggedMesh) -> BoxSpec:
    """Unipolar cathode patch: centered in x, in the lower-y third, full z.

    The fractions reproduce a 0.5 x 0.1 x 0.025 mm patch (21 x 5 x 2 nodes
    at 0.025 mm pitch, spanning y in [0.05, 0.15] mm) on the
    4 x 0.625 x 0.025 mm reference sheet and scale proportionally on other
    domains.
    """
    lo, hi = mesh.bounding_box.lo, mesh.bounding_box.hi
    ext = hi - lo
    origin = (lo[0] + 0.4375 * ext[0], lo[1] + 0.08 * ext[1], lo[2])
    extents = (0.125 * ext[0], 0.16 * ext[1], ext[2])
    return BoxSpec(origin, extents)


@dataclass
class S1S2Protocol:
    electrode: BoxSpec
    probes: ProbeSet
    s1_amplitude: float | None = None     # the resting threshold, uA/uF
    intervals: tuple = tuple(range(142, 158))
    resolution: float = 1.0               # uA/uF
    pulse_duration: float = 2.0           # ms
    trial_horizon: float = 60.0           # ms simulated past each pulse onset
    depolarized_cutoff: float = 0.95
    stepping: SteppingConfig = field(default_factory=SteppingConfig)

    def __post_init__(self):
        if list(self.intervals) != sorted(self.intervals):
            raise ValueError("intervals must be sorted ascending")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")

    @classmethod
    def for_mesh(cls, mesh: TaggedMesh, **kw) -> "S1S2Protocol":
        return cls(electrode=default_electrode(mesh),
                   probes=ProbeSet.quadrants(mesh), **kw)


@dataclass(frozen=True)
class PropagationVerdict:
    propagated: bool
    probe_peaks: tuple
    depolarized_fraction: float
    cutoff: float


@dataclass(frozen=True)
class SICurvePoint:
    interval: float          # ms
    threshold: float         # uA/uF (normalized if the curve says so)
    mechanism: str           # "make" | "break"


@dataclass
class SICurve:
    points: list
    resting_threshold: float
    normalized: bool = False

    def __post_init__(self):
        ivals = [p.interval for p in self.points]
        if ivals != sorted(ivals):
            raise ValueError("curve points must be sorted by interval")
        if any(p.threshold <= 0 for p in self.points):
            raise ValueError("thresholds must be positive")


def detect_propagation(record: SimulationRecord, s2_onset: float,
                       cutoff: float = 0.95) -> PropagationVerdict:
    """Did the pulse at s2_onset capture the whole domain?"""
    if record.probe_traces.shape[1] == 0:
        raise ProtocolError("record has no probe traces")
    if record.peak_from > s2_onset + 1e-9:
        raise ProtocolError("record does not track peaks from the pulse onset")
    after = record.times >= s2_onset - 1e-9
    if not np.any(after):
        raise ProtocolError("record does not cover the pulse onset")
    peaks = tuple(float(x) for x in record.probe_traces[after].max(axis=0))
    fraction = float(np.mean(record.site_peak > 0.0))
    ok = all(p > 0.0 for p in peaks) and fraction >= cutoff
    return PropagationVerdict(ok, peaks, fraction, cutoff)


def classify_excitation(record: SimulationRecord, s2_window,
                        electrode_sites=None) -> str:
    """Make vs. break from the earliest activation outside the electrode.

    Activation at or after pulse termination is classed as break (documented
    boundary convention).
    """
    onset, pulse_end = s2_window
    act = record.activation_time.copy()
    if record.activation_from > onset + 1e-9:
        raise ProtocolError("record does not track activations from the pulse onset")
    if electrode_sites is not None and len(electrode_sites):
        act[np.asarray(electrode_sites)] = np.nan
    if not np.any(np.isfinite(act)):
        raise ProtocolError("no activation found outside the electrode")
    first = float(np.nanmin(act))
    return "make" if first < pulse_end - 1e-9 else "break"


def _pulse_trial(model, protocol: S1S2Protocol, amplitude: float, onset: float,
                 initial_state: ModelState | None) -> SimulationRecord:
    """Simulate one test pulse; peaks/activations tracked from its onset."""
    spec = StimulusSpec(protocol.electrode, amplitude, onset, protocol.pulse_duration)
    cfg = replace(protocol.stepping, t0=onset if initial_state is not None else 0.0,
                  t_end=onset + protocol.trial_horizon)
    return run(model, [spec.resolve(model)], cfg, probes=protocol.probes,
               peak_from=onset, activation_from=onset, initial_state=initial_state)


def _grid_search(trial, resolution: float) -> float:
    """Bracket by doubling from 1 uA/uF, then bisect on the resolution grid.

    ``trial(amplitude) -> bool`` must be deterministic; results are cached so
    the final confirmation pair re-verifies the bracketing contract.
    """
    results: dict[float, bool] = {}

    def probe(a: float) -> bool:
        if a not in results:
            results[a] = bool(trial(a))
        return results[a]

    grid = lambda k: round(k) * resolution
    lo_k, hi_k = 0, max(1, int(np.ceil(1.0 / resolution)))
    while not probe(grid(hi_k)):
        lo_k = hi_k
        hi_k *= 2
        if grid(hi_k) > AMPLITUDE_CAP:
            raise UnexcitableError(
                f"no propagation up to {AMPLITUDE_CAP:g} uA/uF")
    while hi_k - lo_k > 1:
        mid = (lo_k + hi_k) // 2
        if probe(grid(mid)):
            hi_k = mid
        else:
            lo_k = mid
    threshold = grid(hi_k)
    # confirmation pair
    if not probe(threshold) or (lo_k > 0 and probe(grid(lo_k))):
        raise ProtocolError("bracketing contract failed on confirmation")
    amps = sorted(results)
    flips = [a for prev, a in zip(amps, amps[1:])
             if results[prev] and not results[a]]
    if flips:
        log.warning("non-monotone propagation verdicts near %s uA/uF; "
                    "keeping the highest bracketing pair", flips)
    return threshold


def find_resting_threshold(model, electrode: BoxSpec | None = None,
                           resolution: float = 1.0,
                           protocol: S1S2Protocol | None = None) -> float:
    """Smallest S1 amplitude (to resolution) that captures resting tissue."""
    if protocol is None:
        protocol = S1S2Protocol.for_mesh(model.mesh, resolution=resolution)
    if electrode is not None:
        protocol = replace(protocol, electrode=electrode)

    def trial(a: float) -> bool:
        rec = _pulse_trial(model, protocol, a, 0.0, None)
        return detect_propagation(rec, 0.0, protocol.depolarized_cutoff).propagated

    return _grid_search(trial, protocol.resolution)


def s1_prefix_states(model, protocol: S1S2Protocol) -> dict:
    """One conditioning run; snapshots of the state at every interval time."""
    if protocol.s1_amplitude is None:
        raise ProtocolError("protocol.s1_amplitude (resting threshold) is unset")
    s1 = StimulusSpec(protocol.electrode, protocol.s1_amplitude, 0.0,
                      protocol.pulse_duration)
    cfg = replace(protocol.stepping, t0=0.0, t_end=float(max(protocol.intervals)))
    wanted = {float(i) for i in protocol.intervals}
    states: dict[float, ModelState] = {}
    from .stepping import godunov_step
    state = model.rest_state(0.0)
    stimuli = [s1.resolve(model)]
    n = cfg.num_steps
    for k in range(n + 1):
        t = cfg.t0 + k * cfg.dt
        for want in wanted:
            if abs(t - want) < 1e-9:
                snap = state.copy()
                snap.time = want  # strip accumulated round-off
                states[want] = snap
        if k < n:
            state = godunov_step(model, state, stimuli, cfg)
    missing = wanted - set(states)
    if missing:
        raise ProtocolError(f"intervals {sorted(missing)} not on the dt grid")
    return states


def find_s2_threshold(model, protocol: S1S2Protocol, interval: float,
                      prefix_state: ModelState | None = None) -> SICurvePoint:
    """S2 threshold and excitation mechanism at one coupling interval."""
    if float(interval) not in {float(i) for i in protocol.intervals}:
        raise ProtocolError(f"interval {interval} ms is not in the protocol")
    if prefix_state is None:
        prefix_state = s1_prefix_states(
            model, replace(protocol, intervals=(interval,)))[float(interval)]
    records: dict[float, SimulationRecord] = {}

    def trial(a: float) -> bool:
        rec = _pulse_trial(model, protocol, a, float(interval), prefix_state)
        records[a] = rec
        return detect_propagation(rec, float(interval),
                                  protocol.depolarized_cutoff).propagated

    threshold = _grid_search(trial, protocol.resolution)
    window = (float(interval), float(interval) + protocol.pulse_duration)
    mechanism = classify_excitation(records[threshold], window,
                                    model.electrode_sites(protocol.electrode))
    return SICurvePoint(float(interval), threshold, mechanism)


def build_si_curve(model, protocol: S1S2Protocol) -> SICurve:
    if protocol.s1_amplitude is None:
        protocol = replace(protocol, s1_amplitude=find_resting_threshold(
            model, protocol=protocol))
    prefixes = s1_prefix_states(model, protocol)
    points = [
        find_s2_threshold(model, protocol, i, prefixes[float(i)])
        for i in protocol.intervals
    ]
    return SICurve(points, protocol.s1_amplitude)


def normalize_si_curve(curve: SICurve) -> SICurve:
    if curve.normalized:
        raise ProtocolError("curve is already normalized")
    if curve.resting_threshold <= 0:
        raise ProtocolError("resting threshold must be positive")
    pts = [replace(p, threshold=p.threshold / curve.resting_threshold)
           for p in curve.points]
    return SICurve(pts, curve.resting_threshold, normalized=True)


def rrp_transition(curve: SICurve):
    """Smallest interval labelled make whose predecessor is labelled break."""
    for prev, cur in zip(curve.points, curve.points[1:]):
        if prev.mechanism == "break" and cur.mechanism == "make":
            return cur.interval
    return None
