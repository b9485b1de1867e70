"""Configuration parsing, file emission, and the command-line interface."""

from pathlib import Path

import numpy as np
import pytest

from sicurve.cli_io import (
    ConfigError,
    build_mesh,
    build_model,
    build_protocol,
    config_hash,
    main,
    parse_config,
    read_si_csv,
    render_config,
    write_csv,
    write_vtk_surface,
    write_vtk_volume,
)

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"

MINIMAL_BIDOMAIN = "[run]\nmodel = bidomain\n"
MINIMAL_EMI = "[run]\nmodel = emi\n"


# -------------------------------------------------------------------- parsing


def test_minimal_configs_use_defaults():
    rc = parse_config(MINIMAL_BIDOMAIN)
    assert rc.model == "bidomain"
    assert rc.geometry.extents == (4.0, 0.625, 0.025)
    assert rc.h == 0.025
    assert rc.tissue.sigma_i == (0.2525, 0.0222, 0.0222)
    assert rc.tissue.chi == 150.0
    assert rc.protocol.intervals == tuple(range(142, 158))
    rc = parse_config(MINIMAL_EMI)
    assert rc.model == "emi"
    assert rc.geometry.nx == rc.geometry.ny == 25
    assert rc.h == 0.005


def test_parse_roundtrip_minimal():
    for text in (MINIMAL_BIDOMAIN, MINIMAL_EMI):
        rc = parse_config(text)
        assert parse_config(render_config(rc)) == rc


def test_shipped_configs_roundtrip():
    names = ["bidomain_paper.cfg", "emi_paper.cfg", "emi_reduced.cfg",
             "bidomain_reduced.cfg"]
    for name in names:
        text = (CONFIG_DIR / name).read_text()
        rc = parse_config(text)
        assert parse_config(render_config(rc)) == rc
        assert len(config_hash(rc)) == 16


def test_config_hash_tracks_content():
    a = parse_config(MINIMAL_BIDOMAIN)
    b = parse_config(MINIMAL_BIDOMAIN + "\n[stepping]\ndt = 0.05\n")
    assert config_hash(a) != config_hash(b)
    assert config_hash(a) == config_hash(parse_config(render_config(a)))


def test_comments_and_blank_lines_ignored():
    text = ("# leading comment\n\n[run]\n"
            "model = bidomain  # trailing comment\n\n"
            "[stepping]\n# full-line comment\ndt = 0.05\n")
    rc = parse_config(text)
    assert rc.stepping.dt == 0.05


@pytest.mark.parametrize("text,match,line", [
    ("[run]\nmodle = bidomain\n", "unknown key 'modle'", 2),
    ("[run]\nmodel = foo\n", "bidomain", 2),
    ("[run]\nmodel = bidomain\n[geometry]\ncells_x = 3\n",
     "unknown key 'cells_x'", 4),
    ("[run]\nmodel = emi\n[tissue]\nsigma_ix = 1\n",
     "unknown key 'sigma_ix'", 4),
    ("[run]\nmodel = bidomain\n[bogus]\nx = 1\n", "bogus", 3),
    ("[run]\nmodel = bidomain\n[stepping]\ndt = soon\n", "dt", 4),
    ("[run]\nmodel = bidomain\n[stepping]\ndt = 0.1\ndt = 0.2\n",
     "duplicate", 5),
    ("[run]\nmodel = bidomain\n[protocol]\nintervals = 150:140\n",
     "intervals", 4),
    ("[run]\nmodel = bidomain\n[protocol]\nelectrode = 1,2,3\n",
     "electrode", 4),
    ("orphan = 1\n", "section", 1),
])
def test_parse_errors_carry_line_numbers(text, match, line):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert match.split()[0].lower() in str(err.value).lower()
    if err.value.line is not None:
        assert err.value.line == line


def test_missing_model_rejected():
    with pytest.raises(ConfigError, match="model is required"):
        parse_config("[stepping]\ndt = 0.1\n")


def test_intervals_forms():
    def ivals(expr):
        rc = parse_config(MINIMAL_BIDOMAIN + f"[protocol]\nintervals = {expr}\n")
        return rc.protocol.intervals

    assert ivals("142:146") == (142.0, 143.0, 144.0, 145.0, 146.0)
    assert ivals("142:150:4") == (142.0, 146.0, 150.0)
    assert ivals("145,148,150") == (145.0, 148.0, 150.0)
    assert ivals("150") == (150.0,)


def test_explicit_electrode_box():
    rc = parse_config(MINIMAL_BIDOMAIN +
                      "[protocol]\nelectrode = 1.75,0.1,0,0.5,0.1,0.025\n")
    box = rc.protocol.electrode
    assert tuple(box.origin) == (1.75, 0.1, 0.0)
    assert tuple(box.extents) == (0.5, 0.1, 0.025)
    assert parse_config(render_config(rc)) == rc


def test_build_protocol_respects_config(coarse_sheet_mesh):
    rc = parse_config(MINIMAL_BIDOMAIN +
                      "[protocol]\nintervals = 145,150\nresolution = 0.5\n"
                      "trial_horizon = 25\n")
    proto = build_protocol(rc, coarse_sheet_mesh)
    assert proto.intervals == (145.0, 150.0)
    assert proto.resolution == 0.5
    assert proto.trial_horizon == 25.0


# ------------------------------------------------------------------- csv/vtk


def test_write_and_read_si_csv(tmp_path):
    path = tmp_path / "si.csv"
    write_csv(path,
              ["interval_ms", "threshold_uA_per_uF", "normalized", "mechanism"],
              [(145.0, 218.0, 1.8016528925619834, "break"),
               (150.0, np.float64(124.0), 1.02479338842975, "make")],
              comments=["config deadbeefdeadbeef"])
    text = path.read_text()
    assert text.startswith("# config deadbeefdeadbeef\n")
    assert "np.float64" not in text
    rows = read_si_csv(path)
    assert rows[0] == (145.0, 218.0, 1.8016528925619834, "break")
    assert rows[1][3] == "make"


def test_read_si_csv_rejects_empty(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("# config abc\ninterval_ms,threshold,normalized,mechanism\n")
    with pytest.raises(ConfigError, match="no data"):
        read_si_csv(path)


def test_vtk_volume_structure(tmp_path, small_bidomain_mesh):
    mesh = small_bidomain_mesh
    path = write_vtk_volume(tmp_path / "vol.vtk", mesh,
                            point_data={"v": np.zeros(len(mesh.vertices))})
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# vtk DataFile")
    assert f"POINTS {len(mesh.vertices)} float" in lines
    assert f"CELLS {len(mesh.tets)} {5 * len(mesh.tets)}" in lines
    assert f"CELL_TYPES {len(mesh.tets)}" in lines
    ct = lines.index(f"CELL_TYPES {len(mesh.tets)}")
    assert lines[ct + 1] == "10"
    assert "SCALARS volume_tag int 1" in lines
    assert f"POINT_DATA {len(mesh.vertices)}" in lines
    assert "SCALARS v float 1" in lines


def test_vtk_surface_structure(tmp_path, two_cell_mesh):
    path = write_vtk_surface(tmp_path / "surf.vtk", two_cell_mesh)
    lines = path.read_text().splitlines()
    assert "SCALARS surface_tag int 1" in lines
    ct = [i for i, line in enumerate(lines) if line.startswith("CELL_TYPES")]
    assert lines[ct[0] + 1] == "5"


# ----------------------------------------------------------------------- CLI


def _cfg_file(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


SMALL_RUN = """\
[run]
model = bidomain
[geometry]
extent_x = 1.0
extent_y = 0.5
extent_z = 0.05
h = 0.05
[stepping]
t_end = 3.0
[output]
snapshot_every = 1.5
vtk = true
"""


def test_cli_simulate_writes_outputs(tmp_path, capsys):
    cfg = _cfg_file(tmp_path, SMALL_RUN)
    out = tmp_path / "out"
    assert main(["simulate", "--config", cfg, "--out", str(out),
                 "--amplitude", "300"]) == 0
    assert (out / "traces.csv").exists()
    assert (out / "traces.svg").exists()
    frames = sorted((out / "frames").glob("frame_*.vtk"))
    assert len(frames) == 3  # t = 0, 1.5, 3.0
    first = (out / "traces.csv").read_text().splitlines()
    assert first[0].startswith("# config ")
    assert first[1].split(",")[0] == "t_ms"


def test_cli_verify_passes(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 5
    assert "FAIL" not in out


def test_cli_derive_chi(capsys):
    assert main(["derive-chi"]) == 0
    out = capsys.readouterr().out
    assert "154" in out and "150" in out


def test_cli_config_error_is_json(tmp_path, capsys):
    cfg = _cfg_file(tmp_path, "[run]\nmodel = marble\n")
    assert main(["simulate", "--config", cfg]) == 2
    err = capsys.readouterr().err
    assert '"error"' in err and "ConfigError" in err


def test_cli_compare_identical_curves(tmp_path, capsys):
    rows = [(145.0, 218.0, 1.8, "break"), (150.0, 124.0, 1.02, "make")]
    for name in ("a.csv", "b.csv"):
        write_csv(tmp_path / name,
                  ["interval_ms", "threshold_uA_per_uF", "normalized",
                   "mechanism"], rows)
    svg = tmp_path / "cmp.svg"
    assert main(["compare", str(tmp_path / "a.csv"), str(tmp_path / "b.csv"),
                 "--out", str(svg)]) == 0
    assert svg.exists()
    out = capsys.readouterr().out
    gaps = [line.split()[-1] for line in out.splitlines()
            if line.strip().startswith(("145", "150"))]
    assert all(float(g) == 0.0 for g in gaps)


def test_cli_measure_cv(tmp_path, capsys):
    cfg = _cfg_file(tmp_path, SMALL_RUN)
    out = tmp_path / "cv"
    assert main(["measure-cv", "--config", cfg, "--direction", "x",
                 "--out", str(out)]) == 0
    assert (out / "cv_x.csv").exists()
    assert "cv_x" in capsys.readouterr().out
