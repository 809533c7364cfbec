"""Assembly and fixed-point solution of the coupled macro/micro system.

Unknowns are the macroscopic nodal vectors ``u`` and ``w`` and one micro
coefficient vector per macroscopic node (rows of ``V``).  The micro problem
at node ``i`` lives on the reference cell; the map enters only through the
cached ``J``, ``A = K K^T J`` and boundary lengths ``|J K^T n|``.

Weak forms (all micro integrals on the reference cell)::

    micro  Dv (A grad v, grad psi) + k2 <v, psi>_I + k4 <v, psi>_O
             = (fv J, psi) + <k1 u_i + gv, psi>_I + <k3 w_i + gv, psi>_O + <gv, psi>_N
    u      (grad u, grad phi) + (k1 |Gamma_I(x)| u, phi) = (fu + k2 s_I, phi) + <gu2, phi>_N
    w      (Dw grad w, grad phi) + (k3 |Gamma_O(x)| w, phi) = (fw + k4 s_O, phi) + <gw, phi>

where ``<., .>`` on micro faces carries the physical length element and
``s_role(x)`` interpolates the per-node surface integrals of ``v``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from . import expr as ex
from .geometry import (ALL_SIDES, BoundaryRoles, Grid, MacroRole, MicroRole, Side,
                       interpolate)
from .linalg import (ConvergenceError, DirichletElimination, SparseSystem, batched_cg,
                     block_diag_csr)
from .mapping import Diffeo, MapCache, build_cache
from .parallel import chunk_slices, map_tasks, tree_sum

log = logging.getLogger(__name__)

PARAM_NAMES = ("Dv", "kappa1", "kappa2", "kappa3", "kappa4")


@dataclass
class ProblemData:
    """Coefficients and data of the coupled problem.

    ``fv`` is written in physical micro coordinates ``(x, y)``.  The
    optional manufactured-solution terms ``gv``, ``fu_surface`` and
    ``fw_surface`` are functions of ``(x, yhat)`` with ``yhat`` the
    reference-cell coordinate, keyed by micro side.
    """

    kappa: tuple[float, float, float, float]
    Dv: float
    Dw: ex.Expr
    diffeo: Diffeo
    roles: BoundaryRoles
    fu: ex.Expr = ex.ZERO
    fv: ex.Expr = ex.ZERO
    fw: ex.Expr = ex.ZERO
    u0: ex.Expr = ex.ZERO
    gu1: ex.Expr | None = None
    gu2: Mapping[Side, ex.Expr] = field(default_factory=dict)
    gw: Mapping[Side, ex.Expr] = field(default_factory=dict)
    gv: Mapping[Side, ex.Expr] = field(default_factory=dict)
    fu_surface: Mapping[Side, ex.Expr] = field(default_factory=dict)
    fw_surface: Mapping[Side, ex.Expr] = field(default_factory=dict)

    def __post_init__(self):
        self.kappa = tuple(float(k) for k in self.kappa)
        if len(self.kappa) != 4 or any(k < 0 for k in self.kappa):
            raise ValueError(f"kappa must be four non-negative numbers, got {self.kappa}")
        if not self.Dv > 0:
            raise ValueError(f"Dv must be positive, got {self.Dv}")

    @property
    def params(self) -> dict[str, float]:
        k1, k2, k3, k4 = self.kappa
        return {"Dv": float(self.Dv), "kappa1": k1, "kappa2": k2, "kappa3": k3, "kappa4": k4}

    def dirichlet_expr(self) -> ex.Expr:
        return self.u0 if self.gu1 is None else ex.simplify(self.u0 + self.gu1)


@dataclass
class TwoScaleState:
    uvec: np.ndarray
    wvec: np.ndarray
    V: np.ndarray
    residual_history: list[float] = field(default_factory=list)
    converged: bool = False
    notes: list[str] = field(default_factory=list)

    @property
    def sweeps(self) -> int:
        return len(self.residual_history)


def _pattern(grid: Grid):
    """CSR pattern of the Q1 matrix and the scatter from local entries."""
    cells = grid.cells
    rows = np.repeat(cells, 4, axis=1).ravel()
    cols = np.tile(cells, (1, 4)).ravel()
    n = grid.n_nodes
    keys = rows.astype(np.int64) * n + cols
    uniq = np.unique(keys)
    pos = np.searchsorted(uniq, keys)
    urow = uniq // n
    indices = (uniq % n).astype(np.int32)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, urow + 1, 1)
    indptr = np.cumsum(indptr).astype(np.int32)
    return indptr, indices, pos


def _scatter(pos: np.ndarray, n_cols: int) -> sp.csr_matrix:
    """Sparse (n_cols x len(pos)) summing local entries into targets."""
    m = len(pos)
    return sp.csr_matrix((np.ones(m), (pos, np.arange(m))), shape=(n_cols, m))


def _node_scatter(cells: np.ndarray, n_nodes: int) -> sp.csr_matrix:
    return _scatter(cells.ravel(), n_nodes)


def _eval(e: ex.Expr, env: dict, shape) -> np.ndarray:
    return np.asarray(ex.evaluate_on(e, env, shape), dtype=float)


class TwoScaleProblem:
    """Discrete two-scale problem on a macro grid and a reference micro grid.

    Construction builds the map cache and every matrix; matrices do not
    change between fixed-point sweeps, only right-hand sides do.
    """

    def __init__(self, data: ProblemData, macro: Grid, micro: Grid, *, workers: int = 1,
                 tol_inner: float = 1e-10, max_inner: int | None = None):
        self.data = data
        self.macro = macro
        self.micro = micro
        self.workers = max(1, int(workers))
        self.tol_inner = tol_inner
        self.max_inner = max_inner
        self.notes: list[str] = []
        self.params = data.params
        self.N = macro.n_nodes
        self.n = micro.n_nodes

        roles = data.roles
        self.sides_I = roles.micro_sides(MicroRole.GAMMA_I)
        self.sides_O = roles.micro_sides(MicroRole.GAMMA_O)

        # micro quadrature layout shared by all nodes
        self.mcq = micro.cell_quadrature()
        self.mfq = {s: micro.face_quadrature([s]) for s in ALL_SIDES}
        self.face_weights = {s: self.mfq[s].weights for s in ALL_SIDES}

        self.cache = build_cache(data.diffeo, macro.nodes, micro, workers=self.workers)
        self.macro_cq = macro.cell_quadrature()
        self.macro_qpts = self.macro_cq.points.reshape(-1, 2)
        self.qcache = build_cache(data.diffeo, self.macro_qpts, micro, interior=False, workers=self.workers)

        self._setup_micro()
        self._setup_macro()

    # ------------------------------------------------------------------
    # micro
    # ------------------------------------------------------------------

    def _n_tasks(self) -> int:
        return 1 if self.workers == 1 else 4 * self.workers

    def _setup_micro(self):
        micro = self.micro
        C = micro.n_cells
        self.indptr, self.indices, pos = _pattern(micro)
        self.nnz = len(self.indices)
        # split cells only when there are fewer systems than tasks
        self.cell_chunks = chunk_slices(C, max(1, self._n_tasks() // min(self.N, self._n_tasks())))
        pos = pos.reshape(C, 16)
        self.cell_scatter = [_scatter(pos[sl].ravel(), self.nnz) for sl in self.cell_chunks]

        # T[q, a, b, j*4+l] = w_q G[q,j,a] G[q,l,b] (cells are congruent rectangles)
        G = self.mcq.grad[0]  # (Q, 4, 2)
        w = self.mcq.weights[0]
        T = np.einsum("q,qja,qlb->qabjl", w, G, G).reshape(-1, 16)
        self._T = self.data.Dv * T

        node_scatter = _node_scatter(micro.cells, self.n)
        self._micro_node_scatter = node_scatter

        # face scatter for mass terms and coupling vectors
        self.face_pos = {}
        self.face_node_scatter = {}
        for s in ALL_SIDES:
            fcells = self.mfq[s].cells
            self.face_pos[s] = _scatter(pos[fcells].ravel(), self.nnz)
            self.face_node_scatter[s] = _node_scatter(micro.cells[fcells], self.n)

        k1, k2, k3, k4 = self.data.kappa
        self.C_I = self._coupling_vectors(self.sides_I)
        self.C_O = self._coupling_vectors(self.sides_O)

        self.values = self._assemble_matrix_values()
        self.F = self._assemble_fixed_rhs()

        # ``values`` keeps the assembled matrices; the solver blocks carry the pinned copy if needed
        self.micro_pinned = k2 == 0 and k4 == 0
        solve_values = self.values
        if self.micro_pinned:
            solve_values = self._pinned(self.values)
            self.notes.append("micro systems have no Robin term (kappa2 = kappa4 = 0): dof 0 pinned to 0")
            log.info(self.notes[-1])

        self.micro_chunks = chunk_slices(self.N, self._n_tasks())
        self.micro_blocks = [block_diag_csr(self.indptr, self.indices, solve_values[sl]) for sl in self.micro_chunks]
        diag_pos = self._diag_positions()
        self.micro_diag = solve_values[:, diag_pos]

    def _diag_positions(self) -> np.ndarray:
        rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
        return np.flatnonzero(rows == self.indices)

    def _pinned(self, values: np.ndarray) -> np.ndarray:
        """Copy of ``values`` with row and column 0 replaced by a unit diagonal."""
        rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
        out = values.copy()
        out[:, (rows == 0) | (self.indices == 0)] = 0.0
        out[:, (rows == 0) & (self.indices == 0)] = 1.0
        return out

    def _coupling_vectors(self, sides) -> np.ndarray:
        """Row i: integral of each micro basis function times |nu| over ``sides``."""
        out = np.zeros((self.N, self.n))
        for s in sides:
            fq = self.mfq[s]
            local = np.einsum("nfq,fq,fqj->nfj", self.cache.face_len[s], fq.weights, fq.phi)
            out += (self.face_node_scatter[s] @ local.reshape(self.N, -1).T).T
        return out

    def _local_stiffness(self, sys_sl: slice, cell_sl: slice) -> np.ndarray:
        Q = self.mcq.phi.shape[0]
        A = self.cache.A[sys_sl].reshape(-1, self.micro.n_cells, Q, 4)[:, cell_sl]
        S, Cc = A.shape[:2]
        return (A.reshape(S * Cc, Q * 4) @ self._T).reshape(S, Cc * 16)

    def _assemble_matrix_values(self) -> np.ndarray:
        """Stiffness plus Robin face mass, as (N, nnz) CSR values."""
        k1, k2, k3, k4 = self.data.kappa
        sys_chunks = chunk_slices(self.N, self._n_tasks())
        tasks = [(a, b) for a in range(len(sys_chunks)) for b in range(len(self.cell_chunks))]

        def work(task):
            a, b = task
            Ke = self._local_stiffness(sys_chunks[a], self.cell_chunks[b])
            return (self.cell_scatter[b] @ Ke.T).T

        partials = map_tasks(work, tasks, self.workers)
        values = np.empty((self.N, self.nnz))
        nb = len(self.cell_chunks)
        for a, sl in enumerate(sys_chunks):
            values[sl] = tree_sum(partials[a * nb:(a + 1) * nb])

        for sides, k in ((self.sides_I, k2), (self.sides_O, k4)):
            if k == 0:
                continue
            for s in sides:
                fq = self.mfq[s]
                Me = np.einsum("nfq,fq,fqj,fql->nfjl", self.cache.face_len[s], fq.weights, fq.phi, fq.phi)
                values += k * (self.face_pos[s] @ Me.reshape(self.N, -1).T).T
        return values

    def _micro_env(self, xs: np.ndarray, pts: np.ndarray) -> dict:
        env = dict(self.params)
        env.update(x0=xs[:, 0, None], x1=xs[:, 1, None], y0=pts[None, :, 0], y1=pts[None, :, 1])
        return env

    def _assemble_fixed_rhs(self) -> np.ndarray:
        """Source and boundary-data part of every micro right-hand side."""
        data = self.data
        X = self.macro.nodes
        C, Q = self.mcq.weights.shape
        out = np.zeros((self.N, self.n))
        z = data.diffeo.zeta
        fv_ref = ex.simplify(ex.compose(data.fv, {"y0": z[0], "y1": z[1]}))
        if fv_ref != ex.ZERO:
            pts = self.mcq.points.reshape(-1, 2)
            vals = _eval(fv_ref, self._micro_env(X, pts), (self.N, C * Q)) * self.cache.J
            local = np.einsum("ncq,cq,qj->ncj", vals.reshape(self.N, C, Q), self.mcq.weights, self.mcq.phi)
            out += (self._micro_node_scatter @ local.reshape(self.N, -1).T).T
        for s, g in data.gv.items():
            g = ex.bind_params(g, self.params)
            if g == ex.ZERO:
                continue
            fq = self.mfq[s]
            pts = fq.points.reshape(-1, 2)
            vals = _eval(g, self._micro_env(X, pts), (self.N, len(pts))).reshape(self.cache.face_len[s].shape)
            local = np.einsum("nfq,nfq,fq,fqj->nfj", vals, self.cache.face_len[s], fq.weights, fq.phi)
            out += (self.face_node_scatter[s] @ local.reshape(self.N, -1).T).T
        return out

    def micro_rhs(self, u: np.ndarray, w: np.ndarray, sl: slice = slice(None)) -> np.ndarray:
        k1, k2, k3, k4 = self.data.kappa
        b = self.F[sl] + (k1 * u[sl])[:, None] * self.C_I[sl] + (k3 * w[sl])[:, None] * self.C_O[sl]
        if self.micro_pinned:
            b[:, 0] = 0.0
        return b

    def micro_system(self, i: int, u_i: float, w_i: float) -> SparseSystem:
        """Assembled micro system of node ``i``; a pinned dof appears as a constraint."""
        A = sp.csr_matrix((self.values[i].copy(), self.indices.copy(), self.indptr.copy()), shape=(self.n, self.n))
        k1, k2, k3, k4 = self.data.kappa
        b = self.F[i] + k1 * u_i * self.C_I[i] + k3 * w_i * self.C_O[i]
        return SparseSystem(A, b, {0: 0.0} if self.micro_pinned else {})

    def solve_micro(self, u: np.ndarray, w: np.ndarray, V0: np.ndarray | None = None,
                    tol: float | None = None) -> np.ndarray:
        """Solve all micro systems for given macro nodal values."""
        tol = self.tol_inner if tol is None else tol
        V = np.zeros((self.N, self.n)) if V0 is None else np.array(V0, dtype=float)

        def work(k):
            sl = self.micro_chunks[k]
            b = self.micro_rhs(u, w, sl)
            res = batched_cg(self.micro_blocks[k], b, V[sl], tol=tol, maxit=self.max_inner,
                             diag=self.micro_diag[sl])
            V[sl] = res.x

        map_tasks(work, range(len(self.micro_chunks)), self.workers)
        return V

    def micro_residuals(self, u, w, V) -> np.ndarray:
        out = np.empty(self.N)

        def work(k):
            sl = self.micro_chunks[k]
            b = self.micro_rhs(u, w, sl)
            r = b - (self.micro_blocks[k] @ V[sl].ravel()).reshape(b.shape)
            out[sl] = np.linalg.norm(r, axis=1)

        map_tasks(work, range(len(self.micro_chunks)), self.workers)
        return out

    def surface_coupling(self, V: np.ndarray, role: MicroRole) -> np.ndarray:
        """Per node: integral of the micro solution over the role's boundary."""
        C = self.C_I if role is MicroRole.GAMMA_I else self.C_O
        if role is MicroRole.GAMMA_N:
            C = self._coupling_vectors(self.data.roles.micro_sides(MicroRole.GAMMA_N))
        return np.einsum("ij,ij->i", C, V)

    # ------------------------------------------------------------------
    # macro
    # ------------------------------------------------------------------

    def _setup_macro(self):
        data = self.data
        macro = self.macro
        k1, k2, k3, k4 = data.kappa
        cq = self.macro_cq
        Cm, Q = cq.weights.shape
        xq = self.macro_qpts
        env = dict(self.params, x0=xq[:, 0], x1=xq[:, 1])

        self.gamma_I_q = self.qcache.gamma_measure(self.sides_I, self.face_weights).reshape(Cm, Q)
        self.gamma_O_q = self.qcache.gamma_measure(self.sides_O, self.face_weights).reshape(Cm, Q)
        dw_q = _eval(data.Dw, env, (Cm * Q,)).reshape(Cm, Q)
        if np.any(dw_q <= 0):
            raise ValueError("Dw must be positive on the macroscopic domain")
        self.dw_q = dw_q

        one = np.ones((Cm, Q))
        self.K_lap = self._macro_bilinear(one, grad=True)
        self.M = self._macro_bilinear(one, grad=False)
        Au = self.K_lap + self._macro_bilinear(k1 * self.gamma_I_q, grad=False)
        Aw = self._macro_bilinear(dw_q, grad=True) + self._macro_bilinear(k3 * self.gamma_O_q, grad=False)

        Fu = self._macro_load(self._macro_source(data.fu, data.fu_surface, self.sides_I, env))
        Fw = self._macro_load(self._macro_source(data.fw, data.fw_surface, self.sides_O, env))
        Fu += self._macro_neumann(data.gu2, data.roles.macro_sides(MacroRole.NEUMANN))
        Fw += self._macro_neumann(data.gw, ALL_SIDES)
        self.Fu, self.Fw = Fu, Fw
        self.Au_full, self.Aw_full = Au, Aw

        dsides = data.roles.macro_sides(MacroRole.DIRICHLET)
        ddofs = np.unique(np.concatenate([macro.side_nodes(s) for s in dsides])) if dsides else np.array([], int)
        if len(ddofs):
            gvals = interpolate(macro, ex.bind_params(data.dirichlet_expr(), self.params), self.params)[ddofs]
        elif k1 == 0:
            ddofs, gvals = np.array([0]), np.array([0.0])
            self.notes.append("macro u system is pure Neumann without mass: dof 0 pinned to 0")
            log.info(self.notes[-1])
        else:
            gvals = np.array([])
        self.u_dofs, self.u_vals = ddofs, gvals
        self.elim_u = DirichletElimination(Au, ddofs, gvals)

        if k3 == 0:
            self.w_dofs = np.array([0])
            self.notes.append("macro w system is pure Neumann without mass (kappa3 = 0): dof 0 pinned to 0")
            log.info(self.notes[-1])
        else:
            self.w_dofs = np.array([], int)
        self.elim_w = DirichletElimination(Aw, self.w_dofs, np.zeros(len(self.w_dofs)))

    def _macro_bilinear(self, coef: np.ndarray, grad: bool) -> sp.csr_matrix:
        cq = self.macro_cq
        cells = self.macro.cells
        n = self.macro.n_nodes
        chunks = chunk_slices(len(cells), self._n_tasks())

        def work(sl):
            if grad:
                Ke = np.einsum("cq,cq,cqja,cqla->cjl", coef[sl], cq.weights[sl], cq.grad[sl], cq.grad[sl])
            else:
                Ke = np.einsum("cq,cq,qj,ql->cjl", coef[sl], cq.weights[sl], cq.phi, cq.phi)
            c = cells[sl]
            rows = np.repeat(c, 4, axis=1).ravel()
            cols = np.tile(c, (1, 4)).ravel()
            return sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()

        return tree_sum(map_tasks(work, chunks, self.workers)).tocsr()

    def _macro_source(self, f: ex.Expr, surface: Mapping[Side, ex.Expr], sides, env) -> np.ndarray:
        """Source at macro quadrature points, including surface functionals."""
        Cm, Q = self.macro_cq.weights.shape
        out = _eval(ex.bind_params(f, self.params), env, (Cm * Q,)).copy()
        xq = self.macro_qpts
        for s in sides:
            integrand = ex.ZERO
            if s in surface:
                integrand = integrand + surface[s]
            if s in self.data.gv:
                integrand = integrand - self.data.gv[s]
            integrand = ex.simplify(ex.bind_params(integrand, self.params))
            if integrand == ex.ZERO:
                continue
            fq = self.mfq[s]
            pts = fq.points.reshape(-1, 2)
            vals = _eval(integrand, self._micro_env(xq, pts), (len(xq), len(pts)))
            out += np.einsum("nfq,nfq,fq->n", vals.reshape(self.qcache.face_len[s].shape),
                             self.qcache.face_len[s], fq.weights)
        return out.reshape(Cm, Q)

    def _macro_load(self, src: np.ndarray) -> np.ndarray:
        cq = self.macro_cq
        local = np.einsum("cq,cq,qj->cj", src, cq.weights, cq.phi)
        return np.bincount(self.macro.cells.ravel(), weights=local.ravel(), minlength=self.macro.n_nodes)

    def _macro_neumann(self, g: Mapping[Side, ex.Expr], sides) -> np.ndarray:
        out = np.zeros(self.macro.n_nodes)
        for s in sides:
            if s not in g:
                continue
            fq = self.macro.face_quadrature([s])
            pts = fq.points.reshape(-1, 2)
            env = dict(self.params, x0=pts[:, 0], x1=pts[:, 1])
            vals = _eval(ex.bind_params(g[s], self.params), env, (len(pts),)).reshape(fq.weights.shape)
            local = np.einsum("fq,fq,fqj->fj", vals, fq.weights, fq.phi)
            out += np.bincount(self.macro.cells[fq.cells].ravel(), weights=local.ravel(),
                               minlength=self.macro.n_nodes)
        return out

    def rhs_u(self, V: np.ndarray) -> np.ndarray:
        k2 = self.data.kappa[1]
        return self.Fu + k2 * (self.M @ self.surface_coupling(V, MicroRole.GAMMA_I))

    def rhs_w(self, V: np.ndarray) -> np.ndarray:
        k4 = self.data.kappa[3]
        return self.Fw + k4 * (self.M @ self.surface_coupling(V, MicroRole.GAMMA_O))

    def macro_u_system(self, V: np.ndarray) -> SparseSystem:
        cons = dict(zip(self.u_dofs.tolist(), self.u_vals.tolist()))
        return SparseSystem(self.Au_full.copy(), self.rhs_u(V), cons)

    def macro_w_system(self, V: np.ndarray) -> SparseSystem:
        return SparseSystem(self.Aw_full.copy(), self.rhs_w(V), {int(d): 0.0 for d in self.w_dofs})

    def _solve_macro(self, elim: DirichletElimination, b: np.ndarray, x0: np.ndarray) -> np.ndarray:
        res = batched_cg(elim.matrix, elim.rhs(b)[None, :], x0[None, :], tol=self.tol_inner, maxit=self.max_inner)
        return elim.restore(res.x[0])

    # ------------------------------------------------------------------
    # fixed point
    # ------------------------------------------------------------------

    def initial_state(self) -> TwoScaleState:
        return TwoScaleState(np.zeros(self.N), np.zeros(self.N), np.zeros((self.N, self.n)))

    def residual(self, state: TwoScaleState) -> float:
        ru = self.elim_u.rhs(self.rhs_u(state.V)) - self.elim_u.matrix @ state.uvec
        rw = self.elim_w.rhs(self.rhs_w(state.V)) - self.elim_w.matrix @ state.wvec
        rv = self.micro_residuals(state.uvec, state.wvec, state.V)
        return float(np.linalg.norm(ru) + np.linalg.norm(rw) + rv.mean())

    def sweep(self, state: TwoScaleState) -> None:
        """One macro-u, macro-w, micro pass (micro uses the new macro values)."""
        state.uvec = self._solve_macro(self.elim_u, self.rhs_u(state.V), state.uvec)
        state.wvec = self._solve_macro(self.elim_w, self.rhs_w(state.V), state.wvec)
        state.V = self.solve_micro(state.uvec, state.wvec, state.V)

    def solve(self, tol_outer: float = 1e-8, max_outer: int = 100, state: TwoScaleState | None = None,
              raise_on_failure: bool = True) -> TwoScaleState:
        state = self.initial_state() if state is None else state
        state.notes.extend(self.notes)
        for k in range(max_outer):
            self.sweep(state)
            r = self.residual(state)
            state.residual_history.append(r)
            log.info("sweep %d: residual %.6e", k + 1, r)
            if k > 0 and abs(r - state.residual_history[-2]) < tol_outer:
                state.converged = True
                return state
        if raise_on_failure:
            raise ConvergenceError(
                f"fixed-point iteration did not converge in {max_outer} sweeps "
                f"(last residual {state.residual_history[-1]:.3e})",
                residual=state.residual_history[-1], iterations=max_outer)
        return state


# --------------------------------------------------------------------------
# function-style entry points
# --------------------------------------------------------------------------


def assemble_micro(problem: TwoScaleProblem, i: int, u_i: float, w_i: float) -> SparseSystem:
    return problem.micro_system(i, u_i, w_i)


def assemble_macro_u(problem: TwoScaleProblem, state: TwoScaleState) -> SparseSystem:
    return problem.macro_u_system(state.V)


def assemble_macro_w(problem: TwoScaleProblem, state: TwoScaleState) -> SparseSystem:
    return problem.macro_w_system(state.V)


def surface_coupling(v_row: np.ndarray, cache: MapCache, node: int, sides, micro: Grid) -> float:
    """Integral of the micro function ``v_row`` times ``|nu|`` over ``sides``."""
    total = 0.0
    v_row = np.asarray(v_row, dtype=float)
    for s in sides:
        fq = micro.face_quadrature([s])
        vals = np.einsum("fqj,fj->fq", fq.phi, v_row[micro.cells[fq.cells]])
        total += float(np.sum(vals * cache.face_len[s][node] * fq.weights))
    return total


def fixed_point_solve(data: ProblemData, macro: Grid, micro: Grid, *, tol_outer: float = 1e-8,
                      max_outer: int = 100, tol_inner: float = 1e-10, workers: int = 1) -> TwoScaleState:
    problem = TwoScaleProblem(data, macro, micro, workers=workers, tol_inner=tol_inner)
    return problem.solve(tol_outer=tol_outer, max_outer=max_outer)
