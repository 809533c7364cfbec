"""Manufactured solutions: data derivation, an independent residual check,
two-scale error norms and observed convergence orders.

The manufactured micro solution ``v(x, y)`` is written in physical micro
coordinates; every quantity the solver needs on the reference cell is
obtained by composing with the map.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import expr as ex
from .coupled import ProblemData, TwoScaleProblem, TwoScaleState
from .geometry import (ALL_SIDES, BoundaryRoles, Grid, MacroRole, MicroRole, QuadratureRule, RectDomain,
                       Side, build_grid, gauss_legendre)
from .mapping import Diffeo, nanson_exprs
from .parallel import chunk_slices, map_tasks

UNIT_SQUARE = RectDomain((-1.0, -1.0), (1.0, 1.0))

KAPPA_PARAMS = tuple(ex.Param(f"kappa{k}") for k in range(1, 5))
DV_PARAM = ex.Param("Dv")


def default_mms_roles() -> BoundaryRoles:
    return BoundaryRoles.from_lists(dirichlet=(Side.LEFT, Side.RIGHT), gamma_i=(Side.LEFT,),
                                    gamma_o=(Side.RIGHT,))


@dataclass
class ManufacturedCase:
    """Prescribed exact solution triple and the problem coefficients."""

    u: ex.Expr
    v: ex.Expr
    w: ex.Expr
    diffeo: Diffeo
    kappa: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    Dv: float = 1.0
    Dw: ex.Expr = ex.ONE
    roles: BoundaryRoles = field(default_factory=default_mms_roles)
    u0: ex.Expr = ex.ZERO

    @classmethod
    def from_strings(cls, u: str, v: str, w: str, zeta0: str, zeta1: str, **kw) -> "ManufacturedCase":
        dw = kw.pop("Dw", "1")
        return cls(ex.parse(u), ex.parse(v), ex.parse(w), Diffeo.from_strings(zeta0, zeta1),
                   Dw=ex.parse(dw) if isinstance(dw, str) else ex.as_expr(dw), **kw)

    @classmethod
    def reference(cls, **kw) -> "ManufacturedCase":
        """The standard benchmark: a smooth triple on an affinely sheared cell."""
        return cls.from_strings(
            "x1*sin(x0)",
            "x0 + x1 + y0*y1*(1 - y1)",
            "x0*cos(x1)",
            "0.4*((x0 + 1.3) + (1.4*y0 - 0.54*y1))",
            "0.3*((x1 + 1.2) + (-0.4*y0 + 0.8*y1))",
            **kw,
        )

    @property
    def params(self) -> dict[str, float]:
        k1, k2, k3, k4 = self.kappa
        return {"Dv": float(self.Dv), "kappa1": k1, "kappa2": k2, "kappa3": k3, "kappa4": k4}

    def v_ref(self) -> ex.Expr:
        """``v(x, zeta(x, yhat))`` as a function of ``(x, yhat)``."""
        z = self.diffeo.zeta
        return ex.simplify(ex.compose(self.v, {"y0": z[0], "y1": z[1]}))


DerivedData = ProblemData


def _dot(a: Sequence[ex.Expr], b: Sequence[ex.Expr]) -> ex.Expr:
    return ex.simplify(a[0] * b[0] + a[1] * b[1])


def micro_flux(case: ManufacturedCase, side: Side) -> ex.Expr:
    """``Dv grad_y v . n`` on a mapped side, as a function of ``(x, yhat)``."""
    z = case.diffeo.zeta
    sub = {"y0": z[0], "y1": z[1]}
    grad = [ex.compose(g, sub) for g in ex.gradient(case.v, ("y0", "y1"))]
    nu = nanson_exprs(case.diffeo, side)
    length = ex.sqrt(nu[0] ** 2 + nu[1] ** 2)
    normal = (nu[0] / length, nu[1] / length)
    return ex.simplify(DV_PARAM * _dot(grad, normal))


def derive_data(case: ManufacturedCase) -> DerivedData:
    """Sources and boundary data for which ``(u, v, w)`` solves the system.

    Boundary data on micro sides depend on the parameters symbolically
    (``Dv``, ``kappa1``..``kappa4``) and on ``(x, yhat)``.
    """
    roles = case.roles
    k1, k2, k3, k4 = KAPPA_PARAMS
    vr = case.v_ref()
    gv, fu_s, fw_s = {}, {}, {}
    for s in ALL_SIDES:
        flux = micro_flux(case, s)
        role = roles.micro[s]
        if role is MicroRole.GAMMA_I:
            gv[s] = ex.simplify(flux - k1 * case.u + k2 * vr)
            fu_s[s] = flux
        elif role is MicroRole.GAMMA_O:
            gv[s] = ex.simplify(flux - k3 * case.w + k4 * vr)
            fw_s[s] = flux
        else:
            gv[s] = flux

    fv = ex.simplify(-(DV_PARAM * ex.laplacian(case.v, ("y0", "y1"))))
    fu = ex.simplify(-ex.laplacian(case.u, ("x0", "x1")))
    gw_flux = [case.Dw * g for g in ex.gradient(case.w, ("x0", "x1"))]
    fw = ex.simplify(-(ex.diff(gw_flux[0], "x0") + ex.diff(gw_flux[1], "x1")))
    grad_u = ex.gradient(case.u, ("x0", "x1"))
    gu2 = {s: _dot(grad_u, [ex.Const(float(c)) for c in s.normal])
           for s in roles.macro_sides(MacroRole.NEUMANN)}
    gw = {s: _dot(gw_flux, [ex.Const(float(c)) for c in s.normal]) for s in ALL_SIDES}
    return ProblemData(
        kappa=case.kappa, Dv=case.Dv, Dw=case.Dw, diffeo=case.diffeo, roles=roles,
        fu=fu, fv=fv, fw=fw, u0=case.u0, gu1=ex.simplify(case.u - case.u0), gu2=gu2, gw=gw,
        gv=gv, fu_surface=fu_s, fw_surface=fw_s,
    )


# --------------------------------------------------------------------------
# Independent residual check
# --------------------------------------------------------------------------

# sixth-order central differences
_D1 = (np.array([-3, -2, -1, 1, 2, 3]), np.array([-1, 9, -45, 45, -9, 1]) / 60.0)
_D2 = (np.array([-3, -2, -1, 0, 1, 2, 3]), np.array([2, -27, 270, -490, 270, -27, 2]) / 180.0)
_FD_H = 1e-2
_REF_TRAVERSAL = {  # counter-clockwise parametrisation t in [-1, 1] of each reference side
    Side.BOTTOM: lambda t: np.stack([t, -np.ones_like(t)], -1),
    Side.RIGHT: lambda t: np.stack([np.ones_like(t), t], -1),
    Side.TOP: lambda t: np.stack([-t, np.ones_like(t)], -1),
    Side.LEFT: lambda t: np.stack([-np.ones_like(t), -t], -1),
}


def _fd1(f, p: np.ndarray, axis: int, h: float = _FD_H) -> np.ndarray:
    e = np.zeros(p.shape[-1])
    e[axis] = h
    return sum(c * f(p + o * e) for o, c in zip(*_D1)) / h


def _fd2(f, p: np.ndarray, axis: int, h: float = _FD_H) -> np.ndarray:
    e = np.zeros(p.shape[-1])
    e[axis] = h
    return sum(c * f(p + o * e) for o, c in zip(*_D2)) / (h * h)


class _BlackBox:
    """Pointwise numeric evaluation of the manufactured data."""

    def __init__(self, case: ManufacturedCase, data: ProblemData):
        self.env = data.params
        self.case = case
        self.data = data

    def __call__(self, e: ex.Expr, x: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
        env = dict(self.env, x0=x[..., 0], x1=x[..., 1])
        shape = x.shape[:-1]
        if y is not None:
            env.update(y0=y[..., 0], y1=y[..., 1])
            shape = np.broadcast_shapes(shape, y.shape[:-1])
        return np.asarray(ex.evaluate_on(e, env, shape), dtype=float)

    def zeta(self, x, yhat):
        return self.case.diffeo(x, yhat)


def _side_quadrature(bb: _BlackBox, x: np.ndarray, side: Side, n: int = 12):
    """Physical boundary nodes of side ``side`` of ``Y_x``: points, reference points, weights, normals."""
    t, wt = gauss_legendre(n)
    par = _REF_TRAVERSAL[side]
    yhat = par(t)  # (n, 2)
    X = x[:, None, :]
    y = bb.zeta(X, yhat[None])
    # tangent dy/dt by differences of the parametrisation
    tangent = np.stack(
        [sum(c * bb.zeta(X, par(t + o * _FD_H)[None])[..., a] for o, c in zip(*_D1)) / _FD_H for a in range(2)],
        axis=-1)
    speed = np.linalg.norm(tangent, axis=-1)
    normal = np.stack([tangent[..., 1], -tangent[..., 0]], -1) / speed[..., None]
    return y, np.broadcast_to(yhat, y.shape), wt[None, :] * speed, normal


def residual_check(case: ManufacturedCase, data: ProblemData, n_samples: int = 200, seed: int = 0) -> float:
    """Maximum pointwise residual of every equation of the manufactured system.

    Exact solutions and data are used only as black boxes: derivatives
    come from sixth-order finite differences, normals and arc length
    from differences of the mapped boundary parametrisation, and the
    surface integrals from Gauss quadrature on the physical boundary.
    """
    rng = np.random.default_rng(seed)
    bb = _BlackBox(case, data)
    env = data.params
    k1, k2, k3, k4 = data.kappa
    Dv = data.Dv
    roles = data.roles
    x = rng.uniform(-1, 1, size=(n_samples, 2))
    yhat = rng.uniform(-1, 1, size=(n_samples, 2))
    res = [0.0]

    def u(p):
        return bb(case.u, p)

    def w(p):
        return bb(case.w, p)

    # micro interior, at physical points
    y = bb.zeta(x, yhat)

    def v_of_y(q):
        return bb(case.v, x, q)

    lap_v = _fd2(v_of_y, y, 0) + _fd2(v_of_y, y, 1)
    fv = bb(data.fv, x, y)
    res.append(np.max(np.abs(-Dv * lap_v - fv)))

    # micro boundary conditions and macro surface integrals
    surf_u = np.zeros(n_samples)
    surf_w = np.zeros(n_samples)
    func_u = np.zeros(n_samples)
    func_w = np.zeros(n_samples)
    for s in ALL_SIDES:
        yb, yh, wq, nrm = _side_quadrature(bb, x, s)
        X = np.broadcast_to(x[:, None, :], yb.shape)

        def vb(q):
            return bb(case.v, X, q)

        grad = np.stack([_fd1(vb, yb, 0), _fd1(vb, yb, 1)], -1)
        flux = Dv * np.einsum("...a,...a->...", grad, nrm)
        vv = vb(yb)
        g = bb(data.gv[s], X, yh)
        role = roles.micro[s]
        if role is MicroRole.GAMMA_I:
            rhs = k1 * u(X) - k2 * vv + g
            surf_u += np.sum(rhs * wq, axis=1)
            if s in data.fu_surface:
                func_u += np.sum(bb(data.fu_surface[s], X, yh) * wq, axis=1)
        elif role is MicroRole.GAMMA_O:
            rhs = k3 * w(X) - k4 * vv + g
            surf_w += np.sum(rhs * wq, axis=1)
            if s in data.fw_surface:
                func_w += np.sum(bb(data.fw_surface[s], X, yh) * wq, axis=1)
        else:
            rhs = g
        res.append(np.max(np.abs(flux - rhs)))

    # macro u: -lap u = -int_I (k1 u - k2 v + g) + f^u
    lap_u = _fd2(u, x, 0) + _fd2(u, x, 1)
    fu_total = bb(data.fu, x) + func_u
    res.append(np.max(np.abs(-lap_u + surf_u - fu_total)))

    # macro w: -div(Dw grad w) = -int_O (...) + f^w
    def flux_w(axis):
        return lambda p: bb(data.Dw, p) * _fd1(w, p, axis)

    div = _fd1(flux_w(0), x, 0) + _fd1(flux_w(1), x, 1)
    fw_total = bb(data.fw, x) + func_w
    res.append(np.max(np.abs(-div + surf_w - fw_total)))

    # macro boundary conditions
    t = rng.uniform(-1, 1, size=n_samples)
    for s in ALL_SIDES:
        xb = _REF_TRAVERSAL[s](t)
        n = np.asarray(s.normal, dtype=float)
        dw_dn = _fd1(w, xb, 0) * n[0] + _fd1(w, xb, 1) * n[1]
        res.append(np.max(np.abs(bb(data.Dw, xb) * dw_dn - bb(data.gw.get(s, ex.ZERO), xb))))
        if roles.macro[s] is MacroRole.DIRICHLET:
            target = bb(data.dirichlet_expr(), xb)
            res.append(np.max(np.abs(u(xb) - target)))
        else:
            du_dn = _fd1(u, xb, 0) * n[0] + _fd1(u, xb, 1) * n[1]
            res.append(np.max(np.abs(du_dn - bb(data.gu2.get(s, ex.ZERO), xb))))
    del env
    return float(max(res))


# --------------------------------------------------------------------------
# Error norms
# --------------------------------------------------------------------------

NORM_RULE = QuadratureRule(3)


@dataclass
class ErrorNorms:
    e_uw: float
    e_uw_grad: float
    e_v: float
    e_v_grad: float
    e_u: float = 0.0
    e_w: float = 0.0


def _macro_errors(grid: Grid, coeffs: np.ndarray, exact: ex.Expr, env: dict) -> tuple[float, float]:
    cq = grid.cell_quadrature(NORM_RULE)
    pts = cq.points.reshape(-1, 2)
    e_env = dict(env, x0=pts[:, 0], x1=pts[:, 1])
    shape = (len(pts),)
    val = ex.evaluate_on(exact, e_env, shape).reshape(cq.weights.shape)
    g = [ex.evaluate_on(ex.diff(exact, f"x{a}"), e_env, shape).reshape(cq.weights.shape) for a in range(2)]
    c = np.asarray(coeffs)[grid.cells]  # (C, 4)
    uh = np.einsum("qj,cj->cq", cq.phi, c)
    gh = np.einsum("cqja,cj->cqa", cq.grad, c)
    err = val - uh
    l2 = float(np.sum(cq.weights * err ** 2))
    h1 = l2 + float(np.sum(cq.weights * ((g[0] - gh[..., 0]) ** 2 + (g[1] - gh[..., 1]) ** 2)))
    return math.sqrt(l2), math.sqrt(h1)


def error_norms(state: TwoScaleState, case: ManufacturedCase, macro: Grid, micro: Grid,
                workers: int = 1) -> ErrorNorms:
    """Macro L2/H1 errors of ``u`` and ``w`` and two-scale errors of ``v``.

    Two-scale norms integrate over ``Omega x Z`` with the Jacobian weight;
    the micro gradient is the physical one, ``K^T grad_yhat``, and the
    macro gradient acts on the reference representation.
    """
    env = case.params
    eu, eu1 = _macro_errors(macro, state.uvec, case.u, env)
    ew, ew1 = _macro_errors(macro, state.wvec, case.w, env)

    vr = case.v_ref()
    dx = [ex.diff(vr, f"x{a}") for a in range(2)]
    dy = [ex.diff(vr, f"y{a}") for a in range(2)]

    Mq = macro.cell_quadrature(NORM_RULE)
    mq = micro.cell_quadrature(NORM_RULE)
    ypts = mq.points.reshape(-1, 2)
    ywts = mq.weights.reshape(-1)
    V = state.V

    per_cell = max(1, int(2e6 // (Mq.weights.shape[1] * len(ypts))))
    chunks = chunk_slices(macro.n_cells, max(1, macro.n_cells // per_cell))

    def work(sl: slice):
        cells = macro.cells[sl]
        xs = Mq.points[sl].reshape(-1, 2)
        xw = Mq.weights[sl].reshape(-1)
        # macro interpolation of the nodal micro fields at macro quadrature points
        Vx = np.einsum("qk,ckn->cqn", Mq.phi, V[cells]).reshape(len(xs), -1)
        Vgx = np.einsum("cqka,ckn->cqan", Mq.grad[sl], V[cells]).reshape(len(xs), 2, -1)
        loc = Vx[:, micro.cells]  # (P, Cm, 4)
        vh = np.einsum("pcj,qj->pcq", loc, mq.phi).reshape(len(xs), -1)
        gyh = np.einsum("pcj,cqjb->pcqb", loc, mq.grad).reshape(len(xs), -1, 2)
        gxh = np.einsum("pacj,qj->pacq", Vgx[:, :, micro.cells], mq.phi).reshape(len(xs), 2, -1)

        X = xs[:, None, :]
        e_env = dict(env, x0=X[..., 0], x1=X[..., 1], y0=ypts[None, :, 0], y1=ypts[None, :, 1])
        shape = (len(xs), len(ypts))
        F = case.diffeo.jacobian(X, ypts[None])
        F = np.broadcast_to(F, (*shape, 2, 2))
        J = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
        err = ex.evaluate_on(vr, e_env, shape) - vh
        ex_x = [ex.evaluate_on(d, e_env, shape) - gxh[:, a] for a, d in enumerate(dx)]
        ey = [ex.evaluate_on(d, e_env, shape) - gyh[..., a] for a, d in enumerate(dy)]
        # physical gradient K^T g with K = F^{-1}: K^T g = (F^{-T}) g
        gp0 = (F[..., 1, 1] * ey[0] - F[..., 1, 0] * ey[1]) / J
        gp1 = (-F[..., 0, 1] * ey[0] + F[..., 0, 0] * ey[1]) / J
        wts = xw[:, None] * ywts[None, :] * J
        l2 = float(np.sum(wts * err ** 2))
        h1 = l2 + float(np.sum(wts * (ex_x[0] ** 2 + ex_x[1] ** 2 + gp0 ** 2 + gp1 ** 2)))
        return l2, h1

    parts = map_tasks(work, chunks, workers)
    ev2 = sum(p[0] for p in parts)
    ev12 = sum(p[1] for p in parts)
    return ErrorNorms(eu + ew, eu1 + ew1, math.sqrt(ev2), math.sqrt(ev12), eu, ew)


def observed_order(e1: float, N1: float, e2: float, N2: float) -> float | None:
    """Convergence order between two runs with ``N1 < N2`` degrees of freedom.

    Mesh size scales like ``N^(-1/2)`` in two dimensions.  Returns None
    when the order is undefined (equal dof counts or non-positive errors).
    """
    if N1 == N2 or e1 <= 0 or e2 <= 0:
        return None
    return math.log(e1 / e2) / math.log(math.sqrt(N2 / N1))


@dataclass
class ErrorRow:
    macro_dofs: int
    H: float
    micro_dofs: int
    h: float
    e_uw: float
    e_uw_grad: float
    e_v: float
    e_v_grad: float
    p_M: float | None = None
    q_M: float | None = None
    p_m: float | None = None
    q_m: float | None = None
    sweeps: int = 0
    seconds: float = 0.0


@dataclass
class ErrorReport:
    rows: list[ErrorRow] = field(default_factory=list)

    def add(self, row: ErrorRow) -> None:
        if self.rows:
            prev = self.rows[-1]
            row.p_M = observed_order(prev.e_uw, prev.macro_dofs, row.e_uw, row.macro_dofs)
            row.q_M = observed_order(prev.e_uw_grad, prev.macro_dofs, row.e_uw_grad, row.macro_dofs)
            row.p_m = observed_order(prev.e_v, prev.micro_dofs, row.e_v, row.micro_dofs)
            row.q_m = observed_order(prev.e_v_grad, prev.micro_dofs, row.e_v_grad, row.micro_dofs)
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def last(self) -> ErrorRow:
        return self.rows[-1]


def solve_case(case: ManufacturedCase, macro: Grid, micro: Grid, *, data: ProblemData | None = None,
               workers: int = 1, tol_outer: float = 1e-8, max_outer: int = 100,
               tol_inner: float = 1e-10) -> TwoScaleState:
    data = derive_data(case) if data is None else data
    problem = TwoScaleProblem(data, macro, micro, workers=workers, tol_inner=tol_inner)
    return problem.solve(tol_outer=tol_outer, max_outer=max_outer)


def convergence_sweep(case: ManufacturedCase, sizes: Iterable[int | tuple[int, int]], *, workers: int = 1,
                      tol_outer: float = 1e-8, max_outer: int = 100, tol_inner: float = 1e-10,
                      domain: RectDomain = UNIT_SQUARE) -> ErrorReport:
    """Solve on each (macro, micro) resolution and tabulate errors and orders.

    An integer size uses the same number of cells per axis on both scales.
    """
    data = derive_data(case)
    report = ErrorReport()
    for size in sizes:
        nM, nm = (size, size) if isinstance(size, (int, np.integer)) else size
        macro = build_grid(domain, nM)
        micro = build_grid(UNIT_SQUARE, nm)
        t0 = time.perf_counter()
        state = solve_case(case, macro, micro, data=data, workers=workers, tol_outer=tol_outer,
                           max_outer=max_outer, tol_inner=tol_inner)
        norms = error_norms(state, case, macro, micro, workers=workers)
        report.add(ErrorRow(macro.n_nodes, macro.h[0], micro.n_nodes, micro.h[0], norms.e_uw, norms.e_uw_grad,
                            norms.e_v, norms.e_v_grad, sweeps=state.sweeps,
                            seconds=time.perf_counter() - t0))
    return report
