from __future__ import annotations

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twoscale.coupled import TwoScaleState
from twoscale.fileio import (BenchReport, BenchRow, ConfigError, VtkDataset, VtkFormatError, bundled_config,
                             check_vtk, dump_config, format_csv, format_vtk, load_config, micro_patches,
                             parse_config, read_csv, read_vtk, write_csv, write_vtk, write_vtk_macro,
                             write_vtk_micro)
from twoscale.geometry import RectDomain, Side, build_grid
from twoscale.mapping import Diffeo
from twoscale.verify import ErrorReport, ErrorRow

SQ = RectDomain()
MINIMAL = """
[macro]
n = 4
[micro]
n = 2
zeta0 = y0
zeta1 = y1
[parameters]
Dv = 1
Dw = 0.1
kappa1 = 0.5
kappa2 = 1
kappa3 = 0.25
kappa4 = 1
"""

# ---- config ---------------------------------------------------------------------


def test_case_a_config():
    cfg = load_config(bundled_config("case_a"))
    assert cfg.kappa == (0.5, 1.0, 0.25, 1.0)
    assert cfg.kappa[2] == 0.25
    assert cfg.macro_grid().n_nodes == 81 and cfg.micro_grid().n_nodes == 4225
    assert cfg.dirichlet == (Side.LEFT,)
    assert cfg.name == "case_a"


def test_identity_zeta_gives_identity_map():
    cfg = parse_config(MINIMAL)
    d = cfg.diffeo()
    assert isinstance(d, Diffeo)
    y = np.array([[0.3, -0.7], [1.0, 1.0]])
    np.testing.assert_array_equal(d([0.5, 0.5], y), y)
    np.testing.assert_array_equal(d.jacobian([0.5, 0.5], y)[0], np.eye(2))


def test_empty_file_lists_missing_keys():
    with pytest.raises(ConfigError) as err:
        parse_config("")
    msg = str(err.value)
    for key in ("[macro] n", "[micro] zeta0", "[parameters] Dw", "[parameters] kappa4"):
        assert key in msg


@pytest.mark.parametrize("patch, section, key", [
    (("kappa2 = 1", "kappa2 = -1"), "parameters", "kappa2"),
    (("Dv = 1", "Dv = 0"), "parameters", "Dv"),
    (("zeta0 = y0", "zeta0 = sin(y0"), "micro", "zeta0"),
    (("zeta1 = y1", "zeta1 = y1 + z"), "micro", "zeta1"),
    (("n = 4", "n = four"), "macro", "n"),
])
def test_bad_values_name_section_and_key(patch, section, key):
    with pytest.raises(ConfigError) as err:
        parse_config(MINIMAL.replace(*patch, 1))
    assert err.value.section == section and err.value.key == key
    assert f"[{section}] {key}" in str(err.value)


def test_other_config_errors():
    with pytest.raises(ConfigError):
        parse_config(MINIMAL + "\n[extra]\na = 1\n")
    with pytest.raises(ConfigError):
        parse_config(MINIMAL + "\n[mms]\nu = x0\n")
    with pytest.raises(ConfigError):
        parse_config(MINIMAL.replace("zeta1 = y1", "zeta1 = y1\ngamma_i = left\ngamma_o = left"))
    with pytest.raises(ConfigError):
        load_config("/nonexistent/file.ini")
    with pytest.raises(ConfigError):
        bundled_config("nope")


@pytest.mark.parametrize("name", ["case_a", "case_b", "mms", "bench_fine_macro", "bench_fine_micro"])
def test_bundled_configs_round_trip(name):
    cfg = load_config(bundled_config(name))
    assert parse_config(dump_config(cfg), name=name) == cfg


@settings(deadline=None, max_examples=40)
@given(st.integers(1, 200), st.integers(1, 200), st.lists(st.floats(0, 10, allow_nan=False), min_size=4, max_size=4),
       st.sampled_from(["left", "right", "left, top", ""]), st.floats(1e-12, 1e-2))
def test_round_trip_property(nM, nm, kappa, dirichlet, tol):
    text = MINIMAL.replace("n = 4", f"n = {nM}\ndirichlet = {dirichlet}").replace("n = 2", f"n = {nm}")
    cfg = parse_config(text)
    cfg = dataclasses.replace(cfg, kappa=tuple(kappa), tol_outer=tol)
    assert parse_config(dump_config(cfg), name=cfg.name) == cfg


def test_problem_data_from_config():
    cfg = load_config(bundled_config("case_b"))
    data = cfg.problem_data()
    assert data.kappa == cfg.kappa and data.Dv == 1.0
    np.testing.assert_allclose(data.diffeo.jacobian([0.0, 0.0], [0.2, 0.2]), np.diag([0.75, 0.5]))
    mms = load_config(bundled_config("mms"))
    assert mms.has_mms and mms.sweep == (8, 11, 16, 23, 32)
    case = mms.manufactured_case()
    assert case.kappa == (1.0, 1.0, 1.0, 1.0)


# ---- VTK ------------------------------------------------------------------------


def test_single_cell_vtk(tmp_path):
    g = build_grid(SQ, 1)
    path = write_vtk_macro(g, {"u": np.ones(4)}, tmp_path / "one.vtk")
    text = path.read_text()
    assert "POINTS 4 double" in text
    lines = text.splitlines()
    i = lines.index("CELL_TYPES 1")
    assert lines[i + 1] == "9"
    ds = read_vtk(path)
    np.testing.assert_array_equal(ds.point_data["u"], 1.0)
    assert check_vtk(path)


def test_vtk_round_trip(tmp_path):
    g = build_grid(RectDomain((0.1, -2.0), (1.3, 0.7)), 5, 3)
    u = np.sin(g.nodes[:, 0]) * np.exp(g.nodes[:, 1])
    path = write_vtk_macro(g, {"u": u, "w": -u}, tmp_path / "m.vtk")
    ds = read_vtk(path)
    assert np.max(np.abs(ds.points[:, :2] - g.nodes)) <= 1e-12
    np.testing.assert_array_equal(ds.points[:, 2], 0.0)
    np.testing.assert_array_equal(ds.cells, g.cells)
    np.testing.assert_allclose(ds.point_data["u"], u, rtol=1e-15)


def test_vtk_rejects_bad_input(tmp_path):
    with pytest.raises(VtkFormatError):
        VtkDataset(np.zeros((3, 2)), np.zeros((0, 4), int), {})
    with pytest.raises(VtkFormatError):
        VtkDataset(np.zeros((3, 3)), np.array([[0, 1, 2, 3]]), {})
    with pytest.raises(VtkFormatError):
        VtkDataset(np.zeros((4, 3)), np.array([[0, 1, 2, 3]]), {"u": np.ones(3)})
    good = format_vtk(VtkDataset(np.zeros((4, 3)), np.array([[0, 1, 2, 3]]), {"u": np.ones(4)}))
    broken = tmp_path / "bad.vtk"
    broken.write_text(good.replace("CELL_TYPES 1\n9", "CELL_TYPES 1\n5"))
    assert not check_vtk(broken)
    broken.write_text(good.replace("ASCII", "BINARY"))
    with pytest.raises(VtkFormatError):
        read_vtk(broken)


def test_micro_patches():
    micro = build_grid(SQ, 2)
    one = build_grid(RectDomain((-1, -1), (1, 1)), 1)
    V = np.zeros((4, micro.n_nodes))
    ds = micro_patches(V, one, micro, Diffeo.identity(), 1.0)
    # the macro node at (-1,-1) carries the cell shifted by that node
    np.testing.assert_allclose(ds.points[: micro.n_nodes, :2], micro.nodes + one.nodes[0])
    collapsed = micro_patches(V, one, micro, Diffeo.identity(), 0.0)
    np.testing.assert_allclose(collapsed.points[:, :2], np.repeat(one.nodes, micro.n_nodes, axis=0))
    assert ds.cells.shape == (4 * micro.n_cells, 4)


def test_micro_patch_at_origin(tmp_path):
    micro = build_grid(SQ, 2)
    origin = build_grid(RectDomain((-1, -1), (1, 1)), 2)
    mms = Diffeo.from_strings("0.4*((x0 + 1.3) + (1.4*y0 - 0.54*y1))", "0.3*((x1 + 1.2) + (-0.4*y0 + 0.8*y1))")
    s = 0.1
    centre = int(np.flatnonzero(np.all(origin.nodes == 0.0, axis=1))[0])
    ds = micro_patches(np.zeros((origin.n_nodes, micro.n_nodes)), origin, micro, mms, s)
    patch = ds.points[centre * micro.n_nodes:(centre + 1) * micro.n_nodes, :2]
    assert np.min(np.linalg.norm(patch - s * np.array([-0.04, 0.48]), axis=1)) <= 1e-14
    state = TwoScaleState(np.zeros(origin.n_nodes), np.zeros(origin.n_nodes), np.ones((origin.n_nodes, micro.n_nodes)))
    path = write_vtk_micro(state, origin, micro, mms, s, tmp_path / "micro.vtk")
    assert check_vtk(path)
    assert len(read_vtk(path).points) == origin.n_nodes * micro.n_nodes


def test_write_vtk_generic(tmp_path):
    ds = VtkDataset(np.eye(4, 3), np.array([[0, 1, 2, 3]]), {})
    assert check_vtk(write_vtk(ds, tmp_path / "a" / "g.vtk"))


# ---- CSV --------------------------------------------------------------------------


def test_error_report_csv(tmp_path):
    rep = ErrorReport()
    rep.add(ErrorRow(81, 0.25, 81, 0.25, 7.115e-3, 1.0e-1, 6.191e-3, 5.0e-2))
    text = format_csv(rep)
    lines = text.strip().split("\n")
    assert len(lines) == 2
    assert lines[0] == "MDoFs,H,e_uw,e_uw_grad,p_M,q_M,mDoFs,h,e_v,e_v_grad,p_m,q_m"
    assert lines[1].startswith("81,") and "7.115e-03" in lines[1]
    assert lines[1].split(",")[4] == ""
    rows = read_csv(write_csv(rep, tmp_path / "e.csv"))
    assert rows[0]["e_v"] == "6.191e-03"


def test_bench_and_residual_csv(tmp_path):
    bench = BenchReport("b", [BenchRow(1, 2.0, 1.0), BenchRow(2, 1.0, 2.0)])
    rows = read_csv(write_csv(bench, tmp_path / "bench.csv"))
    assert list(rows[0]) == ["threads", "wall_seconds", "speedup"]
    assert rows[1]["speedup"] == "2.000e+00"
    st = TwoScaleState(np.zeros(1), np.zeros(1), np.zeros((1, 1)), residual_history=[1.0, 0.5])
    assert format_csv(st).splitlines() == ["sweep,residual", "1,1.000e+00", "2,5.000e-01"]
    with pytest.raises(ValueError):
        format_csv(ErrorReport())
    with pytest.raises(TypeError):
        format_csv(object())
