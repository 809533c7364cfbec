from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twoscale import expr as ex
from twoscale.geometry import (ALL_SIDES, CELL_RULE, BoundaryRoles, MacroRole, MicroRole, QuadratureRule,
                               RectDomain, Side, build_grid, interpolate, shape_eval, shape_grad)

SQ = RectDomain()


def test_single_cell_grid():
    g = build_grid(SQ, 1)
    assert g.n_nodes == 4 and g.n_cells == 1
    assert len(g.boundary_faces) == 4


@pytest.mark.parametrize("n, count", [(8, 81), (11, 144), (16, 289), (23, 576), (32, 1089), (45, 2116),
                                      (64, 4225), (91, 8464), (128, 16641)])
def test_node_counts(n, count):
    g = build_grid(SQ, n)
    assert g.n_nodes == count
    assert g.n_cells == n * n


@given(st.integers(1, 12), st.integers(1, 12))
def test_counts_and_face_tags(n0, n1):
    g = build_grid(RectDomain((0.0, -2.0), (3.0, 1.0)), n0, n1)
    assert g.n_nodes == (n0 + 1) * (n1 + 1)
    assert g.n_cells == n0 * n1
    counts = {s: len(g.faces_on([s])) for s in ALL_SIDES}
    assert counts == {Side.LEFT: n1, Side.RIGHT: n1, Side.BOTTOM: n0, Side.TOP: n0}
    # every boundary face is a tagged pair of nodes lying on its side
    keys = {(f.cell, f.side) for f in g.boundary_faces}
    assert len(keys) == len(g.boundary_faces)
    for f in g.boundary_faces:
        pts = g.nodes[list(f.nodes)]
        axis = 0 if f.side in (Side.LEFT, Side.RIGHT) else 1
        target = (g.domain.lo if f.side in (Side.LEFT, Side.BOTTOM) else g.domain.hi)[axis]
        np.testing.assert_allclose(pts[:, axis], target)


def test_lexicographic_numbering():
    g = build_grid(SQ, 1)
    np.testing.assert_array_equal(g.nodes, [[-1, -1], [1, -1], [-1, 1], [1, 1]])
    assert g.node_index(1, 1) == 3


def test_shape_functions_at_center():
    np.testing.assert_allclose(shape_eval([0.0, 0.0]), 0.25)


@given(st.floats(-1, 1), st.floats(-1, 1))
def test_partition_of_unity(s, t):
    assert shape_eval([s, t]).sum() == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(shape_grad([s, t]).sum(axis=0), 0.0, atol=1e-15)


def test_shape_nodal_property():
    from twoscale.geometry import LOCAL_NODES
    np.testing.assert_allclose(shape_eval(LOCAL_NODES), np.eye(4), atol=1e-15)


def test_face_normals_and_length():
    g = build_grid(SQ, 1)
    assert tuple(Side.LEFT.normal) == (-1.0, 0.0)
    assert tuple(Side.TOP.normal) == (0.0, 1.0)
    fq = g.face_quadrature([Side.LEFT])
    assert fq.weights.sum() == pytest.approx(2.0)
    np.testing.assert_allclose(fq.normals, [[-1.0, 0.0]])
    for f in g.boundary_faces:
        par = g.face_parametrization(f)
        assert par.length == pytest.approx(2.0)
        np.testing.assert_allclose(par.normal, f.side.normal)


def test_face_shape_values_vanish_off_face():
    g = build_grid(SQ, 3)
    fq = g.face_quadrature(ALL_SIDES)
    for k, f in enumerate(fq.faces):
        local = list(g.cells[f.cell])
        on = [local.index(n) for n in f.nodes]
        off = [i for i in range(4) if i not in on]
        np.testing.assert_allclose(fq.phi[k][:, off], 0.0, atol=1e-15)
        np.testing.assert_allclose(fq.phi[k].sum(axis=1), 1.0)


def test_cell_quadrature_integrates_bilinear_exactly():
    dom = RectDomain((0.0, 1.0), (2.0, 4.0))
    g = build_grid(dom, 3, 5)
    cq = g.cell_quadrature(CELL_RULE)
    f = cq.points[..., 0] ** 3 * cq.points[..., 1] ** 2
    exact = (2.0**4 / 4) * (4.0**3 - 1.0) / 3
    assert (f * cq.weights).sum() == pytest.approx(exact, rel=1e-13)
    assert cq.weights.sum() == pytest.approx(dom.area)


def test_gauss_rules():
    r = QuadratureRule(3)
    assert r.weights.sum() == pytest.approx(4.0)
    x = r.points
    assert (r.weights * x[:, 0] ** 4 * x[:, 1] ** 4).sum() == pytest.approx((2 / 5) ** 2)


def test_interpolation():
    g = build_grid(SQ, 1)
    np.testing.assert_array_equal(interpolate(g, ex.ONE), np.ones(4))
    np.testing.assert_allclose(interpolate(g, ex.parse("x0")), [-1, 1, -1, 1])
    g2 = build_grid(SQ, 2)
    vals = interpolate(g2, ex.parse("x1*sin(x0)"))
    idx = np.flatnonzero(np.all(np.isclose(g2.nodes, [0.0, 1.0]), axis=1))[0]
    assert vals[idx] == 0.0


@settings(deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1))
def test_evaluate_reproduces_bilinear(a, b):
    g = build_grid(SQ, 4)
    e = ex.parse("1 + 2*x0 - x1 + 0.5*x0*x1")
    c = interpolate(g, e)
    assert g.evaluate(c, [a, b]) == pytest.approx(ex.evaluate(e, dict(x0=a, x1=b)), abs=1e-13)


def test_boundary_roles():
    roles = BoundaryRoles.from_lists([Side.LEFT, Side.RIGHT], [Side.LEFT], [Side.RIGHT])
    assert roles.macro_sides(MacroRole.DIRICHLET) == (Side.LEFT, Side.RIGHT)
    assert roles.micro_sides(MicroRole.GAMMA_N) == (Side.BOTTOM, Side.TOP)
    with pytest.raises(ValueError):
        BoundaryRoles.from_lists([], [Side.LEFT], [Side.LEFT])
    with pytest.raises(ValueError):
        BoundaryRoles.from_lists([], [Side.LEFT], [])
    assert Side.parse(" Top ") is Side.TOP
    with pytest.raises(ValueError):
        Side.parse("north")


def test_degenerate_inputs():
    with pytest.raises(ValueError):
        RectDomain((0.0, 0.0), (0.0, 1.0))
    with pytest.raises(ValueError):
        build_grid(SQ, 0)
