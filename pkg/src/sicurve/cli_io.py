"""Run configuration files, result/plot emission, and the command line.

Configs are sectioned ``key = value`` text (see ``render_config`` for the
canonical layout).  Every CSV written here carries a header comment with a
hash of the canonical config so results are traceable to their inputs.
Plots are SVG; volume/surface frames are legacy-ASCII VTK.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .calibration import (CV_TARGETS, calibrate_bidomain, history_csv_rows,
                          measure_cv)
from .cell_model import CellParams
from .chi_derivation import compute_chi, report_lines
from .fem.bidomain import BidomainParams
from .fem.emi import EmiParams
from .geometry import (GAP, MEMBRANE, BoxSpec, EmiCellLayout,
                       build_bidomain_mesh, build_emi_mesh)
from .protocol import (ProbeSet, S1S2Protocol, StimulusSpec, build_si_curve,
                       find_resting_threshold, normalize_si_curve,
                       rrp_transition)
from .stepping import BidomainModel, EmiModel, SteppingConfig, run

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


# ---------------------------------------------------------------------------
# configuration model


@dataclass(frozen=True)
class ProtocolConfig:
    intervals: tuple = tuple(range(142, 158))
    resolution: float = 1.0
    s1_amplitude: float | None = None
    pulse_duration: float = 2.0
    trial_horizon: float = 60.0
    depolarized_cutoff: float = 0.95
    electrode: BoxSpec | None = None      # None = scaled default placement


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    snapshot_every: float | None = None
    vtk: bool = False


@dataclass(frozen=True)
class RunConfig:
    model: str                                   # "bidomain" | "emi"
    geometry: object                             # BoxSpec | EmiCellLayout
    h: float
    tissue: object                               # BidomainParams | EmiParams
    cell: CellParams
    stepping: SteppingConfig
    protocol: ProtocolConfig
    output: OutputConfig


_BIDOMAIN_GEOM_KEYS = ("extent_x", "extent_y", "extent_z", "h")
_EMI_GEOM_KEYS = ("cells_x", "cells_y", "h")
_BIDOMAIN_TISSUE_KEYS = ("sigma_ix", "sigma_it", "sigma_ex", "sigma_et",
                         "chi", "C_m")
_EMI_TISSUE_KEYS = ("sigma_i", "sigma_e", "C_m", "C_gap", "R_gap", "gap_form")
_CELL_KEYS = tuple(f.name for f in fields(CellParams))
_STEPPING_KEYS = ("dt", "substeps", "t0", "t_end", "force_rl")
_PROTOCOL_KEYS = ("intervals", "resolution", "s1_amplitude", "pulse_duration",
                  "trial_horizon", "depolarized_cutoff", "electrode")
_OUTPUT_KEYS = ("directory", "snapshot_every", "vtk")
_SECTIONS = ("run", "geometry", "tissue", "cell", "stepping", "protocol",
             "output")


def _scan(text: str):
    """Yield (section, key, value, lineno) triples from config text."""
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in _SECTIONS:
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        if section is None:
            raise ConfigError("key outside any [section]", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        yield section, key, value, lineno


def _to_float(value: str, key: str, lineno: int) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {value!r}", lineno)


def _to_bool(value: str, key: str, lineno: int) -> bool:
    v = value.lower()
    if v in ("true", "yes", "1"):
        return True
    if v in ("false", "no", "0"):
        return False
    raise ConfigError(f"{key}: expected true/false, got {value!r}", lineno)


def _parse_intervals(value: str, lineno: int) -> tuple:
    try:
        if ":" in value:
            parts = [float(p) for p in value.split(":")]
            a, b = parts[0], parts[1]
            step = parts[2] if len(parts) > 2 else 1.0
            out = tuple(np.round(np.arange(a, b + step / 2, step), 9).tolist())
        else:
            out = tuple(float(p) for p in value.split(","))
    except (ValueError, IndexError):
        raise ConfigError(f"intervals: cannot parse {value!r}", lineno)
    if not out:
        raise ConfigError("intervals: empty", lineno)
    return out


def _parse_electrode(value: str, lineno: int) -> BoxSpec | None:
    if value.lower() == "auto":
        return None
    parts = value.split(",")
    if len(parts) != 6:
        raise ConfigError(
            "electrode: expected 'auto' or six numbers "
            "x0,y0,z0,ex,ey,ez", lineno)
    nums = [_to_float(p, "electrode", lineno) for p in parts]
    try:
        return BoxSpec(tuple(nums[:3]), tuple(nums[3:]))
    except ValueError as exc:
        raise ConfigError(f"electrode: {exc}", lineno)


def parse_config(text: str) -> RunConfig:
    data: dict[str, dict[str, tuple[str, int]]] = {s: {} for s in _SECTIONS}
    for section, key, value, lineno in _scan(text):
        if key in data[section]:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", lineno)
        data[section][key] = (value, lineno)

    def take(section, key, default=None):
        return data[section].pop(key, (default, None))

    for key, (_, lineno) in data["run"].items():
        if key != "model":
            raise ConfigError(f"unknown key {key!r} in [run]", lineno)
    model, ln = take("run", "model")
    if model is None:
        raise ConfigError("[run] model is required")
    model = model.lower()
    if model not in ("bidomain", "emi"):
        raise ConfigError(f"model must be 'bidomain' or 'emi', got {model!r}", ln)

    geom_keys = _BIDOMAIN_GEOM_KEYS if model == "bidomain" else _EMI_GEOM_KEYS
    tissue_keys = _BIDOMAIN_TISSUE_KEYS if model == "bidomain" else _EMI_TISSUE_KEYS
    for section, allowed in (("geometry", geom_keys), ("tissue", tissue_keys),
                             ("cell", _CELL_KEYS), ("stepping", _STEPPING_KEYS),
                             ("protocol", _PROTOCOL_KEYS),
                             ("output", _OUTPUT_KEYS), ("run", ())):
        for key, (_, lineno) in data[section].items():
            if key not in allowed:
                raise ConfigError(
                    f"unknown key {key!r} in [{section}] for model={model}",
                    lineno)

    def number(section, key, default):
        value, lineno = take(section, key)
        return default if value is None else _to_float(value, key, lineno)

    try:
        if model == "bidomain":
            h = number("geometry", "h", 0.025)
            geometry = BoxSpec((0.0, 0.0, 0.0),
                               (number("geometry", "extent_x", 4.0),
                                number("geometry", "extent_y", 0.625),
                                number("geometry", "extent_z", 0.025)))
            d = BidomainParams()
            sit = number("tissue", "sigma_it", d.sigma_i[1])
            set_ = number("tissue", "sigma_et", d.sigma_e[1])
            tissue = BidomainParams(
                sigma_i=(number("tissue", "sigma_ix", d.sigma_i[0]), sit, sit),
                sigma_e=(number("tissue", "sigma_ex", d.sigma_e[0]), set_, set_),
                chi=number("tissue", "chi", d.chi),
                C_m=number("tissue", "C_m", d.C_m))
        else:
            h = number("geometry", "h", 0.005)
            geometry = EmiCellLayout(nx=int(number("geometry", "cells_x", 25)),
                                     ny=int(number("geometry", "cells_y", 25)))
            d = EmiParams()
            gap_form, ln = take("tissue", "gap_form", d.gap_form)
            if gap_form not in ("literal", "dimensional"):
                raise ConfigError(
                    f"gap_form must be 'literal' or 'dimensional', got {gap_form!r}", ln)
            tissue = EmiParams(
                sigma_i=number("tissue", "sigma_i", d.sigma_i),
                sigma_e=number("tissue", "sigma_e", d.sigma_e),
                C_m=number("tissue", "C_m", d.C_m),
                C_gap=number("tissue", "C_gap", d.C_gap),
                R_gap=number("tissue", "R_gap", d.R_gap),
                gap_form=gap_form)

        cell_kwargs = {}
        for key in list(data["cell"]):
            value, lineno = take("cell", key)
            cell_kwargs[key] = _to_float(value, key, lineno)
        cell = CellParams(**cell_kwargs)

        force_rl, ln = take("stepping", "force_rl", "false")
        stepping = SteppingConfig(
            dt=number("stepping", "dt", 0.1),
            M=int(number("stepping", "substeps", 100)),
            t0=number("stepping", "t0", 0.0),
            t_end=number("stepping", "t_end", 10.0),
            force_rl=_to_bool(force_rl, "force_rl", ln))

        intervals_raw, ln = take("protocol", "intervals")
        intervals = (tuple(range(142, 158)) if intervals_raw is None
                     else _parse_intervals(intervals_raw, ln))
        electrode_raw, ln = take("protocol", "electrode", "auto")
        protocol = ProtocolConfig(
            intervals=intervals,
            resolution=number("protocol", "resolution", 1.0),
            s1_amplitude=number("protocol", "s1_amplitude", None),
            pulse_duration=number("protocol", "pulse_duration", 2.0),
            trial_horizon=number("protocol", "trial_horizon", 60.0),
            depolarized_cutoff=number("protocol", "depolarized_cutoff", 0.95),
            electrode=_parse_electrode(electrode_raw, ln))

        directory, _ = take("output", "directory", "out")
        vtk_raw, ln = take("output", "vtk", "false")
        output = OutputConfig(
            directory=directory,
            snapshot_every=number("output", "snapshot_every", None),
            vtk=_to_bool(vtk_raw, "vtk", ln))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc))

    return RunConfig(model, geometry, h, tissue, cell, stepping, protocol,
                     output)


def render_config(rc: RunConfig) -> str:
    """Canonical text form; ``parse_config(render_config(rc)) == rc``."""
    out = ["[run]", f"model = {rc.model}", "", "[geometry]"]
    if rc.model == "bidomain":
        ex, ey, ez = rc.geometry.extents
        out += [f"extent_x = {ex!r}", f"extent_y = {ey!r}", f"extent_z = {ez!r}"]
    else:
        out += [f"cells_x = {rc.geometry.nx}", f"cells_y = {rc.geometry.ny}"]
    out += [f"h = {rc.h!r}", "", "[tissue]"]
    t = rc.tissue
    if rc.model == "bidomain":
        out += [f"sigma_ix = {t.sigma_i[0]!r}", f"sigma_it = {t.sigma_i[1]!r}",
                f"sigma_ex = {t.sigma_e[0]!r}", f"sigma_et = {t.sigma_e[1]!r}",
                f"chi = {t.chi!r}", f"C_m = {t.C_m!r}"]
    else:
        out += [f"sigma_i = {t.sigma_i!r}", f"sigma_e = {t.sigma_e!r}",
                f"C_m = {t.C_m!r}", f"C_gap = {t.C_gap!r}",
                f"R_gap = {t.R_gap!r}", f"gap_form = {t.gap_form}"]
    out += ["", "[cell]"]
    out += [f"{f.name} = {getattr(rc.cell, f.name)!r}" for f in fields(CellParams)]
    s = rc.stepping
    out += ["", "[stepping]", f"dt = {s.dt!r}", f"substeps = {s.M}",
            f"t0 = {s.t0!r}", f"t_end = {s.t_end!r}",
            f"force_rl = {'true' if s.force_rl else 'false'}"]
    p = rc.protocol
    ivals = ",".join(f"{v:g}" for v in p.intervals)
    if p.electrode is None:
        electrode = "auto"
    else:
        electrode = ",".join(f"{v!r}" for v in
                             (*p.electrode.origin, *p.electrode.extents))
    out += ["", "[protocol]", f"intervals = {ivals}",
            f"resolution = {p.resolution!r}"]
    if p.s1_amplitude is not None:
        out += [f"s1_amplitude = {p.s1_amplitude!r}"]
    out += [f"pulse_duration = {p.pulse_duration!r}",
            f"trial_horizon = {p.trial_horizon!r}",
            f"depolarized_cutoff = {p.depolarized_cutoff!r}",
            f"electrode = {electrode}"]
    o = rc.output
    out += ["", "[output]", f"directory = {o.directory}"]
    if o.snapshot_every is not None:
        out += [f"snapshot_every = {o.snapshot_every!r}"]
    out += [f"vtk = {'true' if o.vtk else 'false'}", ""]
    return "\n".join(out)


def config_hash(rc: RunConfig) -> str:
    return hashlib.sha256(render_config(rc).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# model assembly from configuration


def build_mesh(rc: RunConfig):
    if rc.model == "bidomain":
        return build_bidomain_mesh(rc.geometry, rc.h)
    return build_emi_mesh(rc.geometry, rc.h)


def build_model(rc: RunConfig, mesh=None):
    if mesh is None:
        mesh = build_mesh(rc)
    cls = BidomainModel if rc.model == "bidomain" else EmiModel
    return cls(mesh, rc.tissue, rc.cell, rc.stepping.dt)


def build_protocol(rc: RunConfig, mesh) -> S1S2Protocol:
    p = rc.protocol
    proto = S1S2Protocol.for_mesh(
        mesh, s1_amplitude=p.s1_amplitude, intervals=p.intervals,
        resolution=p.resolution, pulse_duration=p.pulse_duration,
        trial_horizon=p.trial_horizon, depolarized_cutoff=p.depolarized_cutoff,
        stepping=rc.stepping)
    if p.electrode is not None:
        proto = replace(proto, electrode=p.electrode)
    return proto


# ---------------------------------------------------------------------------
# emission: CSV, SVG, VTK


def write_csv(path, header, rows, comments=()):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for comment in comments:
            fh.write(f"# {comment}\n")
        fh.write(",".join(str(c) for c in header) + "\n")
        for row in rows:
            fh.write(",".join(_csv_cell(c) for c in row) + "\n")
    return path


def _csv_cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def read_si_csv(path):
    """Rows of an SI-curve CSV: (interval, threshold, normalized, mechanism)."""
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("interval"):
                continue
            interval, threshold, normalized, mechanism = line.split(",")
            rows.append((float(interval), float(threshold),
                         float(normalized), mechanism))
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    return rows


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_traces(record, path, title="probe traces"):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    for i in range(record.probe_traces.shape[1]):
        ax.plot(record.times, record.probe_traces[:, i], label=f"probe {i + 1}")
    ax.set_xlabel("t (ms)")
    ax.set_ylabel("potential (mV)")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def plot_si_curves(curves, path, ylabel="threshold (uA/uF)"):
    """``curves``: sequence of (label, intervals, thresholds)."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, ivals, thrs in curves:
        ax.plot(ivals, thrs, marker="o", label=label)
    ax.set_xlabel("S1-S2 interval (ms)")
    ax.set_ylabel(ylabel)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def write_vtk_volume(path, mesh, point_data=None, cell_data=None):
    """Legacy-ASCII unstructured grid of the tetrahedral volume."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    nt = len(mesh.tets)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\ntissue volume\nASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(mesh.vertices)} float\n")
        np.savetxt(fh, mesh.vertices, fmt="%.9g")
        fh.write(f"CELLS {nt} {5 * nt}\n")
        np.savetxt(fh, np.column_stack([np.full(nt, 4), mesh.tets]), fmt="%d")
        fh.write(f"CELL_TYPES {nt}\n")
        np.savetxt(fh, np.full(nt, 10), fmt="%d")
        fh.write(f"CELL_DATA {nt}\n")
        _vtk_scalars(fh, "volume_tag", mesh.tet_tag, "int")
        for name, values in (cell_data or {}).items():
            _vtk_scalars(fh, name, values, "float")
        if point_data:
            fh.write(f"POINT_DATA {len(mesh.vertices)}\n")
            for name, values in point_data.items():
                _vtk_scalars(fh, name, values, "float")
    return path


def write_vtk_surface(path, mesh, kinds=(MEMBRANE, GAP), point_data=None):
    """Legacy-ASCII triangle surface of the selected facet kinds."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sel = np.isin(mesh.facet_kind, kinds)
    tris = mesh.facets[sel]
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\nmembrane surface\nASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(mesh.vertices)} float\n")
        np.savetxt(fh, mesh.vertices, fmt="%.9g")
        fh.write(f"CELLS {len(tris)} {4 * len(tris)}\n")
        np.savetxt(fh, np.column_stack([np.full(len(tris), 3), tris]), fmt="%d")
        fh.write(f"CELL_TYPES {len(tris)}\n")
        np.savetxt(fh, np.full(len(tris), 5), fmt="%d")
        fh.write(f"CELL_DATA {len(tris)}\n")
        _vtk_scalars(fh, "surface_tag", mesh.facet_kind[sel], "int")
        if point_data:
            fh.write(f"POINT_DATA {len(mesh.vertices)}\n")
            for name, values in point_data.items():
                _vtk_scalars(fh, name, values, "float")
    return path


def _vtk_scalars(fh, name, values, kind):
    fh.write(f"SCALARS {name} {kind} 1\nLOOKUP_TABLE default\n")
    np.savetxt(fh, np.asarray(values).reshape(-1, 1),
               fmt="%d" if kind == "int" else "%.9g")


def _write_frames(outdir, mesh, model, snapshots):
    paths = []
    for idx, (t, state) in enumerate(snapshots):
        stem = Path(outdir) / "frames" / f"frame_{idx:04d}"
        if model.kind == "bidomain":
            f = state.field
            paths.append(write_vtk_volume(
                stem.with_suffix(".vtk"), mesh,
                point_data={"v": f.v, "u_e": f.u_e}))
        else:
            f = state.field
            u = f.u if f.u is not None else np.zeros(len(mesh.tets))
            paths.append(write_vtk_volume(
                stem.with_suffix(".vtk"), mesh, cell_data={"u": u}))
            vm = np.zeros(len(mesh.vertices))
            vm[mesh.membrane_nodes] = f.v_m[
                model.system.vdof_of_node[mesh.membrane_nodes]]
            paths.append(write_vtk_surface(
                Path(outdir) / "frames" / f"surface_{idx:04d}.vtk",
                mesh, point_data={"v": vm}))
    return paths


# ---------------------------------------------------------------------------
# subcommands


def _load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def _outdir(rc: RunConfig, override=None) -> Path:
    out = Path(override) if override else Path(rc.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    rc = _load_config(args.config)
    out = _outdir(rc, args.out)
    mesh = build_mesh(rc)
    model = build_model(rc, mesh)
    proto = build_protocol(rc, mesh)
    amplitude = args.amplitude if args.amplitude is not None else (
        rc.protocol.s1_amplitude or 200.0)
    stim = StimulusSpec(proto.electrode, amplitude, 0.0, proto.pulse_duration)
    record = run(model, [stim.resolve(model)], rc.stepping, probes=proto.probes,
                 snapshot_every=rc.output.snapshot_every)
    tag = config_hash(rc)
    header = ["t_ms"] + [f"probe{i + 1}_mV" for i in
                         range(record.probe_traces.shape[1])]
    rows = (tuple(row) for row in
            np.column_stack([record.times, record.probe_traces]))
    write_csv(out / "traces.csv", header, rows, [f"config {tag}"])
    plot_traces(record, out / "traces.svg")
    if rc.output.vtk and record.snapshots:
        _write_frames(out, mesh, model, record.snapshots)
    print(f"simulated {rc.model} to t={rc.stepping.t_end:g} ms; "
          f"results in {out}")
    return 0


def cmd_resting_threshold(args) -> int:
    rc = _load_config(args.config)
    out = _outdir(rc, args.out)
    mesh = build_mesh(rc)
    model = build_model(rc, mesh)
    proto = build_protocol(rc, mesh)
    threshold = find_resting_threshold(model, protocol=proto)
    write_csv(out / "resting_threshold.csv",
              ["model", "threshold_uA_per_uF"], [(rc.model, threshold)],
              [f"config {config_hash(rc)}"])
    print(f"resting threshold: {threshold:g} uA/uF")
    return 0


def _si_rows(curve, normalized):
    for p, q in zip(curve.points, normalized.points):
        yield (p.interval, p.threshold, q.threshold, p.mechanism)


def cmd_si_curve(args) -> int:
    rc = _load_config(args.config)
    out = _outdir(rc, args.out)
    mesh = build_mesh(rc)
    model = build_model(rc, mesh)
    proto = build_protocol(rc, mesh)
    if proto.s1_amplitude is None:
        proto = replace(proto, s1_amplitude=find_resting_threshold(
            model, protocol=proto))
        print(f"resting threshold: {proto.s1_amplitude:g} uA/uF")
    curve = build_si_curve(model, proto)
    normalized = normalize_si_curve(curve)
    tag = config_hash(rc)
    write_csv(out / "si_curve.csv",
              ["interval_ms", "threshold_uA_per_uF", "normalized", "mechanism"],
              _si_rows(curve, normalized),
              [f"config {tag}",
               f"resting_threshold {curve.resting_threshold!r}"])
    ivals = [p.interval for p in curve.points]
    plot_si_curves([(rc.model, ivals, [p.threshold for p in curve.points])],
                   out / "si_curve.svg")
    plot_si_curves(
        [(rc.model, ivals, [p.threshold for p in normalized.points])],
        out / "si_curve_normalized.svg", ylabel="threshold / resting threshold")
    transition = rrp_transition(curve)
    for p in curve.points:
        print(f"interval {p.interval:g} ms: threshold {p.threshold:g} uA/uF "
              f"({p.mechanism})")
    print(f"rrp transition: {transition if transition is not None else 'none'}")
    return 0


def cmd_calibrate(args) -> int:
    rc = _load_config(args.config)
    if rc.model != "bidomain":
        raise ConfigError("calibrate requires a bidomain configuration")
    out = _outdir(rc, args.out)
    mesh = build_mesh(rc)
    result = calibrate_bidomain(mesh, rc.cell, dt=rc.stepping.dt,
                                budget=args.budget, seed=args.seed,
                                chi=rc.tissue.chi, C_m=rc.tissue.C_m)
    rows = list(history_csv_rows(result))
    write_csv(out / "calibration_history.csv", rows[0], rows[1:],
              [f"config {config_hash(rc)}"])
    six, sit, _ = result.sigma_i
    sex, set_, _ = result.sigma_e
    fragment = ("[tissue]\n"
                f"sigma_ix = {six!r}\nsigma_it = {sit!r}\n"
                f"sigma_ex = {sex!r}\nsigma_et = {set_!r}\n")
    (out / "calibrated_tissue.cfg").write_text(fragment)
    print(f"best objective {result.objective:.6g} (cm/s)^2 after "
          f"{result.evaluations} evaluations")
    print(fragment, end="")
    return 0


def cmd_measure_cv(args) -> int:
    rc = _load_config(args.config)
    out = _outdir(rc, args.out)
    model = build_model(rc)
    m = measure_cv(model, args.direction, dt=rc.stepping.dt)
    write_csv(out / f"cv_{args.direction}.csv",
              ["direction", "cv_cm_per_s"] +
              [f"t{i + 1}_ms" for i in range(5)],
              [(m.direction, m.cv, *m.activation_times)],
              [f"config {config_hash(rc)}"])
    print(f"cv_{args.direction} = {m.cv:.2f} cm/s")
    return 0


def cmd_derive_chi(args) -> int:
    layout = EmiCellLayout()
    if args.config:
        rc = _load_config(args.config)
        if rc.model != "emi":
            raise ConfigError("derive-chi requires an emi configuration")
        layout = rc.geometry
    report = compute_chi(layout, rounding=args.rounding)
    for line in report_lines(report):
        print(line)
    return 0


def cmd_compare(args) -> int:
    lhs, rhs = read_si_csv(args.csv_a), read_si_csv(args.csv_b)
    la = args.label_a or Path(args.csv_a).stem
    lb = args.label_b or Path(args.csv_b).stem
    plot_si_curves(
        [(la, [r[0] for r in lhs], [r[2] for r in lhs]),
         (lb, [r[0] for r in rhs], [r[2] for r in rhs])],
        args.out, ylabel="threshold / resting threshold")
    bmap = {r[0]: r for r in rhs}
    common = [r for r in lhs if r[0] in bmap]
    print(f"{'interval_ms':>12} {la + ' (norm)':>16} {lb + ' (norm)':>16} "
          f"{'gap':>12}")
    for r in common:
        b = bmap[r[0]]
        print(f"{r[0]:12g} {r[2]:16.6g} {b[2]:16.6g} {r[2] - b[2]:12.6g}")
    if not common:
        print("no common intervals")
    print(f"plot written to {args.out}")
    return 0


def cmd_verify(args) -> int:
    """Fast built-in invariant suite; nonzero exit on any failure."""
    del args
    checks = []

    def check(name, fn):
        try:
            fn()
            checks.append((name, None))
        except Exception as exc:  # noqa: BLE001 - report, don't crash
            checks.append((name, exc))

    def _gates():
        from .cell_model import CellState, m_inf, reaction_substep_rl
        p = CellParams()
        s = CellState(np.array([-40.0]), np.array([0.3]), np.array([0.6]))
        out = reaction_substep_rl(p, s, 0.0, 0.25)
        minf = m_inf(p, s.V)
        exact = minf + (s.m - minf) * np.exp(-0.25 / p.tau_m)
        assert abs((out.m - exact).item()) < 1e-12, "gating update not exponential"

    def _rest():
        from .cell_model import reaction_steps, steady_state
        p = CellParams()
        s = steady_state(p, p.V_rest, 4)
        s2 = reaction_steps(p, s.copy(), 0.0, 0.1, 100, use_rl=False)
        drift = float(np.max(np.abs(s2.V - p.V_rest)))
        assert drift < 1e-6, f"rest drift {drift}"

    def _chi():
        r = compute_chi(EmiCellLayout())
        assert abs(r.chi_raw - 154.0) < 1.0 and r.chi_rounded == 150.0

    def _config():
        rc = parse_config("[run]\nmodel = bidomain\n")
        assert parse_config(render_config(rc)) == rc

    def _systems():
        from .fem.linsys import check_symmetry
        mesh = build_bidomain_mesh(BoxSpec((0, 0, 0), (0.2, 0.2, 0.05)), 0.05)
        model = BidomainModel(mesh, BidomainParams(), CellParams(), 0.1)
        check_symmetry(model.system.system.matrix)

    check("gating-update-exactness-api", _gates)
    check("cell-rest-stability", _rest)
    check("chi-arithmetic", _chi)
    check("config-round-trip", _config)
    check("bidomain-system-symmetry", _systems)

    failed = False
    for name, exc in checks:
        status = "PASS" if exc is None else f"FAIL ({exc})"
        print(f"{name}: {status}")
        failed = failed or exc is not None
    return 1 if failed else 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sicurve",
        description="Cardiac tissue excitation-threshold experiments on "
                    "homogenized and cell-resolved models.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kw):
        p = sub.add_parser(name, **kw)
        p.set_defaults(fn=fn)
        return p

    p = add("simulate", cmd_simulate, help="single stimulated run")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--amplitude", type=float)

    p = add("resting-threshold", cmd_resting_threshold,
            help="threshold of quiescent tissue")
    p.add_argument("--config", required=True)
    p.add_argument("--out")

    p = add("si-curve", cmd_si_curve, help="full S1-S2 threshold sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out")

    p = add("calibrate", cmd_calibrate, help="fit conductivities to CV targets")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--budget", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)

    p = add("measure-cv", cmd_measure_cv, help="conduction velocity along an axis")
    p.add_argument("--config", required=True)
    p.add_argument("--direction", choices=("x", "y"), default="x")
    p.add_argument("--out")

    p = add("derive-chi", cmd_derive_chi, help="surface-to-volume ratio report")
    p.add_argument("--config")
    p.add_argument("--rounding", type=float, default=10.0)

    p = add("compare", cmd_compare, help="overlay two normalized SI curves")
    p.add_argument("csv_a")
    p.add_argument("csv_b")
    p.add_argument("--out", default="compare.svg")
    p.add_argument("--label-a")
    p.add_argument("--label-b")

    add("verify", cmd_verify, help="run the built-in invariant checks")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
