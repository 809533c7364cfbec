"""Pullback identities: reference-cell integrals versus direct ones on Y_x.

Each function returns the absolute discrepancy between the quantity computed
through the package (Jacobian determinant, inverse Jacobian, boundary
covectors) and an oracle evaluated directly on the physical cell.
"""

from __future__ import annotations

import numpy as np

import oracles
from twoscale import expr as ex
from twoscale.geometry import ALL_SIDES, QuadratureRule, RectDomain, build_grid
from twoscale.mapping import Diffeo, build_cache, kmat

LINEAR_MAP = ("0.4*((x0 + 1.3) + (1.4*y0 - 0.54*y1))", "0.3*((x1 + 1.2) + (-0.4*y0 + 0.8*y1))")
NONLINEAR_MAP = ("y0 + 0.1*y1^2 + 0.05*x0", "y1 + 0.1*sin(y0) - 0.1*x1*y0")
SQ = RectDomain()


def _ref(diffeo: Diffeo, x, n: int, order: int):
    micro = build_grid(SQ, n)
    rule = QuadratureRule(order)
    cache = build_cache(diffeo, np.atleast_2d(x), micro, rule=rule)
    cq = micro.cell_quadrature(rule)
    pts = cq.points.reshape(-1, 2)
    return micro, rule, cache, pts, cq.weights.ravel()


def volume_error(zeta: tuple[str, str], x, f: str, n: int = 4, order: int = 3, direct=None) -> float:
    """|int_Z f(zeta) J dyhat - int_Y f dy|."""
    d = Diffeo.from_strings(*zeta)
    micro, rule, cache, pts, w = _ref(d, x, n, order)
    fy, _ = oracles.lambdify_y(f)
    y = d(np.asarray(x, float), pts)
    pulled = float(np.sum(fy(y[:, 0], y[:, 1]) * cache.J[0] * w))
    return abs(pulled - direct)


def gradient_error(zeta: tuple[str, str], x, v: str, direct: tuple[float, float], n: int = 4,
                   order: int = 3) -> float:
    """|int_Z K^T grad_yhat(v o zeta) J dyhat - int_Y grad_y v dy|."""
    d = Diffeo.from_strings(*zeta)
    micro, rule, cache, pts, w = _ref(d, x, n, order)
    x = np.asarray(x, float)
    vhat = ex.compose(ex.parse(v), {"y0": d.zeta[0], "y1": d.zeta[1]})
    env = dict(x0=x[0], x1=x[1], y0=pts[:, 0], y1=pts[:, 1])
    ghat = np.stack([ex.evaluate_on(ex.diff(vhat, f"y{b}"), env, (len(pts),)) for b in range(2)], -1)
    K = kmat(d, x, pts)
    grad_y = np.einsum("pba,pb->pa", K, ghat)
    pulled = np.einsum("pa,p,p->a", grad_y, cache.J[0], w)
    return float(np.max(np.abs(pulled - np.asarray(direct))))


def _pulled_flux(d: Diffeo, x, g: tuple[str, str], n: int, order: int) -> float:
    micro, rule, cache, pts, w = _ref(d, x, n, order)
    g0, _ = oracles.lambdify_y(g[0])
    g1, _ = oracles.lambdify_y(g[1])
    total = 0.0
    for s in ALL_SIDES:
        fq = micro.face_quadrature([s], rule)
        fp = fq.points.reshape(-1, 2)
        y = d(np.asarray(x, float), fp)
        nu = cache.face_nu[s][0].reshape(-1, 2)
        gv = np.stack([np.broadcast_to(g0(y[:, 0], y[:, 1]), len(fp)), np.broadcast_to(g1(y[:, 0], y[:, 1]), len(fp))], -1)
        total += float(np.sum(np.einsum("pa,pa->p", gv, nu) * fq.weights.ravel()))
    return total


def nanson_error(zeta: tuple[str, str], x, g: tuple[str, str], n: int = 4, order: int = 3) -> float:
    """|sum_sides int g(zeta) . nu dsigma_hat - oriented boundary flux of g over Y|."""
    d = Diffeo.from_strings(*zeta)
    pulled = _pulled_flux(d, x, g, n, order)
    g0, _ = oracles.lambdify_y(g[0])
    g1, _ = oracles.lambdify_y(g[1])
    sym = oracles.sym_map(*zeta)
    direct = oracles.boundary_integral(sym, x, lambda y0, y1, d0, d1: g0(y0, y1) * d1 - g1(y0, y1) * d0)
    return abs(pulled - direct)


def divergence_error(zeta: tuple[str, str], x, g: tuple[str, str], n: int = 4, order: int = 3) -> float:
    """Divergence theorem entirely in reference coordinates."""
    d = Diffeo.from_strings(*zeta)
    flux = _pulled_flux(d, x, g, n, order)
    micro, rule, cache, pts, w = _ref(d, x, n, order)
    _, (g0_0, _) = oracles.lambdify_y(g[0])
    _, (_, g1_1) = oracles.lambdify_y(g[1])
    y = d(np.asarray(x, float), pts)
    div = np.broadcast_to(g0_0(y[:, 0], y[:, 1]) + g1_1(y[:, 0], y[:, 1]), len(pts))
    vol = float(np.sum(div * cache.J[0] * w))
    return abs(vol - flux)


def linear_map_errors(x=(0.3, -0.6)) -> dict[str, float]:
    d = Diffeo.from_strings(*LINEAR_MAP)
    corners = d(np.asarray(x, float), np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]))
    f = "y0^2*y1 - 3*y0 + 1"
    v = "y0^2*y1 + y1^3 - y0"
    fs = f.replace("^", "**")
    direct_vol = oracles.polygon_integral(fs, corners)
    direct_grad = (oracles.polygon_integral("2*y0*y1 - 1", corners),
                   oracles.polygon_integral("y0**2 + 3*y1**2", corners))
    g = ("y0*y1 + y0", "y1^2 - y0^2")
    _, _, cache, _, w = _ref(d, x, 4, 2)
    return {
        "volume": volume_error(LINEAR_MAP, x, f, direct=direct_vol),
        "area": abs(float(np.sum(cache.J[0] * w)) - oracles.polygon_area(corners)),
        "gradient": gradient_error(LINEAR_MAP, x, v, direct_grad),
        "nanson": nanson_error(LINEAR_MAP, x, g),
        "divergence": divergence_error(LINEAR_MAP, x, g),
    }


def nonlinear_map_errors(n: int, x=(0.5, -0.25)) -> dict[str, float]:
    """Discrepancies for a map nonlinear in yhat on an ``n x n`` reference grid (2-point rule)."""
    sym = oracles.sym_map(*NONLINEAR_MAP)
    f = "y0^2"
    direct_vol = oracles.boundary_integral(sym, x, lambda y0, y1, d0, d1: y0**3 / 3 * d1)
    v = "sin(y0)*y1"
    vy = lambda y0, y1: np.sin(y0) * y1  # noqa: E731
    direct_grad = (oracles.boundary_integral(sym, x, lambda y0, y1, d0, d1: vy(y0, y1) * d1),
                   oracles.boundary_integral(sym, x, lambda y0, y1, d0, d1: -vy(y0, y1) * d0))
    g = ("y0*y1", "y1^2")
    return {
        "volume": volume_error(NONLINEAR_MAP, x, f, n=n, order=2, direct=direct_vol),
        "gradient": gradient_error(NONLINEAR_MAP, x, v, direct_grad, n=n, order=2),
        "nanson": nanson_error(NONLINEAR_MAP, x, g, n=n, order=2),
        "divergence": divergence_error(NONLINEAR_MAP, x, ("y0^2*y1", "y0*y1^2"), n=n, order=2),
    }
