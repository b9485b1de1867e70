"""First-order operator splitting driving either tissue model.

Each time step advances the coupled reaction-diffusion system in three
stages: (1) M equal explicit reaction substeps applied pointwise at every
cell-model site, (2) one backward-Euler solve of the assembled implicit
operator, (3) state reassignment.  Gates use the Rush-Larsen update while a
stimulus is active (or when forced), forward Euler otherwise.

Probe traces are sampled after stage 3 of every step.  The run loop also
tracks, online, each site's first upward zero crossing (linearly
interpolated between steps) and the per-site peak potential from a
configurable start time; threshold searches and conduction-velocity
measurements are built on those.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .cell_model import CellParams, CellState, reaction_steps, steady_state
from .fem.bidomain import BidomainField, BidomainParams, BidomainSystem
from .fem.emi import EmiField, EmiParams, EmiSystem
from .geometry import BoxSpec, TaggedMesh, region_select

log = logging.getLogger(__name__)


class StepError(RuntimeError):
    """A time step failed; carries the simulation time of the failure."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} (t = {time:g} ms)")
        self.time = time


@dataclass(frozen=True)
class SteppingConfig:
    dt: float = 0.1        # ms
    M: int = 100           # reaction substeps per dt
    t0: float = 0.0        # ms
    t_end: float = 10.0    # ms
    force_rl: bool = False

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.M < 1:
            raise ValueError("M must be at least 1")
        if not self.t0 < self.t_end:
            raise ValueError("t0 must precede t_end")

    @property
    def num_steps(self) -> int:
        return int(round((self.t_end - self.t0) / self.dt))


@dataclass
class ModelState:
    field: object          # BidomainField or EmiField
    time: float

    def copy(self) -> "ModelState":
        f = self.field
        if isinstance(f, BidomainField):
            new = BidomainField(f.v.copy(), f.u_e.copy(), f.cells.copy())
        else:
            new = EmiField(
                None if f.q is None else f.q.copy(),
                None if f.u is None else f.u.copy(),
                f.v_m.copy(), f.w_g.copy(), f.cells.copy(),
            )
        return ModelState(new, self.time)


@dataclass(frozen=True)
class ActiveStimulus:
    """A stimulus resolved onto model sites: amplitude in uA/uF."""

    sites: np.ndarray      # site indices
    amplitude: float
    onset: float           # ms
    duration: float        # ms

    def active(self, t: float, dt: float) -> bool:
        # a step [t, t+dt) counts as stimulated when it intersects the pulse
        return t < self.onset + self.duration and t + dt > self.onset


class BidomainModel:
    """Homogenized tissue on a cuboid; cell model at every P1 node."""

    kind = "bidomain"

    def __init__(self, mesh: TaggedMesh, params: BidomainParams,
                 cell: CellParams, dt: float):
        self.mesh = mesh
        self.params = params
        self.cell = cell
        self.system = BidomainSystem(mesh, params, dt)
        self.site_positions = mesh.vertices
        self.n_sites = len(mesh.vertices)

    def rest_state(self, t0: float = 0.0) -> ModelState:
        cells = steady_state(self.cell, self.cell.V_rest, self.n_sites)
        u_e = np.zeros(self.n_sites)
        return ModelState(BidomainField(cells.V.copy(), u_e, cells), t0)

    def electrode_sites(self, box: BoxSpec) -> np.ndarray:
        return region_select(self.mesh, box, "volume-nodes")

    def nearest_site(self, point) -> int:
        d = np.linalg.norm(self.site_positions - np.asarray(point), axis=1)
        return int(np.argmin(d))

    def site_potentials(self, state: ModelState) -> np.ndarray:
        return state.field.v

    def step(self, state: ModelState, i_stim: np.ndarray,
             cfg: SteppingConfig, use_rl: bool) -> ModelState:
        f = state.field
        cells = CellState(f.v, f.cells.m, f.cells.h)
        cells = reaction_steps(self.cell, cells, i_stim, cfg.dt, cfg.M, use_rl)
        v, u_e = self.system.implicit_step(cells.V)
        cells.V = v
        return ModelState(BidomainField(v, u_e, cells), state.time + cfg.dt)


class EmiModel:
    """Cell-resolved tissue; cell model at every membrane node."""

    kind = "emi"

    def __init__(self, mesh: TaggedMesh, params: EmiParams,
                 cell: CellParams, dt: float):
        self.mesh = mesh
        self.params = params
        self.cell = cell
        self.system = EmiSystem(mesh, params, dt)
        self.site_positions = mesh.vertices[mesh.membrane_nodes]
        self.n_sites = len(mesh.membrane_nodes)

    def rest_state(self, t0: float = 0.0) -> ModelState:
        cells = steady_state(self.cell, self.cell.V_rest, self.n_sites)
        w = np.zeros(self.system.nw)
        return ModelState(EmiField(None, None, cells.V.copy(), w, cells), t0)

    def electrode_sites(self, box: BoxSpec) -> np.ndarray:
        facets = region_select(self.mesh, box, "membrane-facets")
        nodes = np.unique(self.mesh.facets[facets])
        return np.sort(self.system.vdof_of_node[nodes])

    def nearest_site(self, point) -> int:
        d = np.linalg.norm(self.site_positions - np.asarray(point), axis=1)
        return int(np.argmin(d))

    def site_potentials(self, state: ModelState) -> np.ndarray:
        return state.field.v_m

    def step(self, state: ModelState, i_stim: np.ndarray,
             cfg: SteppingConfig, use_rl: bool) -> ModelState:
        f = state.field
        cells = CellState(f.v_m, f.cells.m, f.cells.h)
        cells = reaction_steps(self.cell, cells, i_stim, cfg.dt, cfg.M, use_rl)
        v, w = self.system.advance(cells.V, f.w_g)
        cells.V = v
        return ModelState(EmiField(None, None, v, w, cells), state.time + cfg.dt)

    def complete_field(self, state: ModelState) -> EmiField:
        """Materialize tet potentials and fluxes for output frames."""
        f = state.field
        if f.q is None:
            q, u = self.system.recover()
            f.q, f.u = q, u
        return f


def godunov_step(model, state: ModelState, stimuli, cfg: SteppingConfig) -> ModelState:
    if state.time + cfg.dt > cfg.t_end + 1e-9:
        raise StepError("step would pass t_end", state.time)
    i_stim = np.zeros(model.n_sites)
    any_active = False
    for stim in stimuli:
        if stim.active(state.time, cfg.dt):
            i_stim[stim.sites] += stim.amplitude
            any_active = True
    use_rl = any_active or cfg.force_rl
    try:
        new = model.step(state, i_stim, cfg, use_rl)
    except Exception as err:
        raise StepError(f"implicit step failed: {err}", state.time) from err
    v = model.site_potentials(new)
    if not np.all(np.isfinite(v)):
        raise StepError("non-finite potential after step", new.time)
    return new


@dataclass
class SimulationRecord:
    times: np.ndarray                  # (n+1,) sample times incl. t0
    probe_traces: np.ndarray           # (n+1, n_probes) site potentials
    probe_sites: np.ndarray
    site_peak: np.ndarray              # per-site max V from peak_from on
    peak_from: float
    activation_time: np.ndarray        # per-site first upward 0 mV crossing
    activation_from: float
    snapshots: list = field(default_factory=list)   # (time, ModelState)
    final_state: ModelState | None = None

    def to_csv(self, path, header_comment: str | None = None):
        cols = [f"probe{i + 1}_mV" for i in range(self.probe_traces.shape[1])]
        with open(path, "w") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            fh.write(",".join(["t_ms"] + cols) + "\n")
            for t, row in zip(self.times, self.probe_traces):
                fh.write(",".join([f"{t:.6g}"] + [f"{x:.6g}" for x in row]) + "\n")


def run(model, stimuli, cfg: SteppingConfig, probes=None,
        snapshot_every: float | None = None,
        peak_from: float | None = None,
        activation_from: float | None = None,
        initial_state: ModelState | None = None) -> SimulationRecord:
    """Advance the model from rest (or a supplied state) to t_end.

    ``probes`` is a sequence of points (or an object with ``.points``)
    resolved to nearest sites.  ``peak_from``/``activation_from`` default to
    t0.  Snapshots are taken at t0, every ``snapshot_every`` ms after, and
    at t_end.
    """
    for stim in stimuli:
        if stim.onset < cfg.t0 - 1e-9 or stim.onset > cfg.t_end + 1e-9:
            raise ValueError(f"stimulus onset {stim.onset} ms outside "
                             f"[{cfg.t0}, {cfg.t_end}] ms")
    points = getattr(probes, "points", probes)
    sites = np.array([model.nearest_site(p) for p in points] if points is not None
                     else [], dtype=np.int64)
    state = initial_state.copy() if initial_state is not None else model.rest_state(cfg.t0)
    if abs(state.time - cfg.t0) > 1e-9:
        raise ValueError("initial state time does not match cfg.t0")
    peak_from = cfg.t0 if peak_from is None else peak_from
    activation_from = cfg.t0 if activation_from is None else activation_from

    n = cfg.num_steps
    times = cfg.t0 + cfg.dt * np.arange(n + 1)
    traces = np.empty((n + 1, len(sites)))
    v = model.site_potentials(state)
    traces[0] = v[sites]
    peak = np.where(times[0] >= peak_from - 1e-9, v, -np.inf).astype(float)
    act = np.full(model.n_sites, np.nan)
    prev_v = v.copy()
    snaps = []

    def maybe_snapshot(k, t):
        if snapshot_every is None:
            return
        due = k == 0 or k == n
        if not due:
            offset = (t - cfg.t0) / snapshot_every
            due = abs(offset - round(offset)) < 1e-9
        if due:
            if hasattr(model, "complete_field"):
                model.complete_field(state)
            snaps.append((t, state.copy()))

    maybe_snapshot(0, times[0])
    for k in range(n):
        state = godunov_step(model, state, stimuli, cfg)
        v = model.site_potentials(state)
        t = times[k + 1]
        traces[k + 1] = v[sites]
        if t >= peak_from - 1e-9:
            np.maximum(peak, v, out=peak)
        if t - cfg.dt >= activation_from - 1e-9:
            crossing = np.isnan(act) & (prev_v <= 0.0) & (v > 0.0)
            if np.any(crossing):
                frac = -prev_v[crossing] / (v[crossing] - prev_v[crossing])
                act[crossing] = t - cfg.dt + frac * cfg.dt
        prev_v = v.copy()
        maybe_snapshot(k + 1, t)

    return SimulationRecord(
        times=times, probe_traces=traces, probe_sites=sites,
        site_peak=peak, peak_from=peak_from,
        activation_time=act, activation_from=activation_from,
        snapshots=snaps, final_state=state,
    )
