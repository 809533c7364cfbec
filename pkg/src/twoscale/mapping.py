"""Micro-domain maps ``y = zeta(x, yhat)`` and their pulled-back quantities.

Every micro domain is the image of the reference cell under ``zeta(x, .)``.
All micro integrals are computed on the reference cell using

* ``J = det(d zeta / d yhat)`` (volume scaling),
* ``K = (d zeta / d yhat)^-1`` and the diffusion tensor ``A = K K^T J``,
* the boundary covector ``nu = J K^T n_ref`` (Nanson's formula); its length
  is the physical length element per unit reference length and its
  direction is the physical outward normal.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import expr as ex
from .geometry import ALL_SIDES, CELL_RULE, BoundaryRoles, Grid, MicroRole, QuadratureRule, Side
from .parallel import chunk_slices, map_tasks

log = logging.getLogger(__name__)

SINGULAR_TOL = 1e-12


class DegenerateMapError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Diffeo:
    zeta: ex.VecExpr
    params: Mapping[str, float] = field(default_factory=dict)
    dzeta: tuple[tuple[ex.Expr, ex.Expr], tuple[ex.Expr, ex.Expr]] = field(init=False)

    def __post_init__(self):
        d = tuple(tuple(ex.diff(self.zeta[a], f"y{b}") for b in range(2)) for a in range(2))
        object.__setattr__(self, "dzeta", d)

    @classmethod
    def from_strings(cls, zeta0: str, zeta1: str, params: Mapping[str, float] | None = None) -> "Diffeo":
        params = dict(params or {})
        comps = (ex.parse(zeta0, params), ex.parse(zeta1, params))
        return cls(ex.VecExpr(comps), params)

    @classmethod
    def identity(cls) -> "Diffeo":
        return cls(ex.VecExpr((ex.Var("y0"), ex.Var("y1"))))

    def _env(self, x, yhat) -> tuple[dict, tuple[int, ...]]:
        x = np.asarray(x, dtype=float)
        yhat = np.asarray(yhat, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], yhat.shape[:-1])
        env = dict(self.params)
        env.update(x0=x[..., 0], x1=x[..., 1], y0=yhat[..., 0], y1=yhat[..., 1])
        return env, shape

    def __call__(self, x, yhat) -> np.ndarray:
        """Physical micro coordinates of reference point(s) ``yhat``."""
        env, shape = self._env(x, yhat)
        return np.stack([ex.evaluate_on(c, env, shape) for c in self.zeta], axis=-1)

    def jacobian(self, x, yhat) -> np.ndarray:
        env, shape = self._env(x, yhat)
        rows = [np.stack([ex.evaluate_on(self.dzeta[a][b], env, shape) for b in range(2)], -1) for a in range(2)]
        return np.stack(rows, axis=-2)

    def is_affine_in_y(self) -> bool:
        return all(not ({"y0", "y1"} & ex.free_symbols(d)) for row in self.dzeta for d in row)


def jac(d: Diffeo, x, yhat) -> np.ndarray:
    """Matrix ``d zeta_a / d yhat_b`` with shape (..., 2, 2)."""
    return d.jacobian(x, yhat)


def _det(F: np.ndarray) -> np.ndarray:
    return F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]


def detJ(d: Diffeo, x, yhat) -> np.ndarray | float:
    """Jacobian determinant; raises :class:`DegenerateMapError` if not positive."""
    J = _det(jac(d, x, yhat))
    if np.any(J <= 0):
        raise DegenerateMapError(f"non-positive Jacobian determinant (min {np.min(J):.6g})")
    return J if np.ndim(J) else float(J)


def _inverse(F: np.ndarray, J: np.ndarray) -> np.ndarray:
    K = np.empty_like(F)
    K[..., 0, 0] = F[..., 1, 1] / J
    K[..., 0, 1] = -F[..., 0, 1] / J
    K[..., 1, 0] = -F[..., 1, 0] / J
    K[..., 1, 1] = F[..., 0, 0] / J
    return K


def kmat(d: Diffeo, x, yhat) -> np.ndarray:
    """Inverse Jacobian ``K``."""
    F = jac(d, x, yhat)
    J = _det(F)
    if np.any(np.abs(J) <= SINGULAR_TOL):
        raise DegenerateMapError("singular Jacobian (|det| <= 1e-12)")
    return _inverse(F, J)


def _cofactor_normal(F: np.ndarray, n_ref) -> np.ndarray:
    # J K^T = [[F11, -F10], [-F01, F00]]
    n = np.asarray(n_ref, dtype=float)
    nu0 = F[..., 1, 1] * n[..., 0] - F[..., 1, 0] * n[..., 1]
    nu1 = -F[..., 0, 1] * n[..., 0] + F[..., 0, 0] * n[..., 1]
    return np.stack([nu0, nu1], axis=-1)


def nanson(d: Diffeo, x, yhat, n_ref) -> np.ndarray:
    """Boundary covector ``J K^T n_ref``."""
    F = jac(d, x, yhat)
    if np.any(np.abs(_det(F)) <= SINGULAR_TOL):
        raise DegenerateMapError("singular Jacobian (|det| <= 1e-12)")
    return _cofactor_normal(F, n_ref)


def nanson_exprs(d: Diffeo, side: Side) -> tuple[ex.Expr, ex.Expr]:
    """Symbolic components of ``J K^T n`` for a reference side normal."""
    (F00, F01), (F10, F11) = d.dzeta
    n0, n1 = side.normal
    nu0 = ex.simplify(F11 * float(n0) - F10 * float(n1))
    nu1 = ex.simplify(-F01 * float(n0) + F00 * float(n1))
    return nu0, nu1


# --------------------------------------------------------------------------
# Cache
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MapEntry:
    J: float
    A: np.ndarray | None
    nu: np.ndarray | None = None
    nu_len: float | None = None


@dataclass(frozen=True, eq=False)
class MapCache:
    """Precomputed map quantities per (macro node, micro quadrature point).

    Quadrature point ids enumerate the interior points of the micro cell
    quadrature first (cell-major), then the face points of each side in
    ``ALL_SIDES`` order.
    """

    nodes: np.ndarray
    J: np.ndarray | None  # (N, P)
    A: np.ndarray | None  # (N, P, 2, 2)
    face_nu: Mapping[Side, np.ndarray]  # (N, F_s, Q, 2)
    face_len: Mapping[Side, np.ndarray]  # (N, F_s, Q)
    face_J: Mapping[Side, np.ndarray]

    @property
    def n_interior(self) -> int:
        return 0 if self.J is None else self.J.shape[1]

    def __getitem__(self, key: tuple[int, int]) -> MapEntry:
        node, qp = key
        if qp < self.n_interior:
            return MapEntry(float(self.J[node, qp]), self.A[node, qp])
        qp -= self.n_interior
        for side in ALL_SIDES:
            nu = self.face_nu[side][node].reshape(-1, 2)
            if qp < len(nu):
                ln = self.face_len[side][node].ravel()[qp]
                Jf = self.face_J[side][node].ravel()[qp]
                return MapEntry(float(Jf), None, nu[qp], float(ln))
            qp -= len(nu)
        raise KeyError(key)

    def __len__(self) -> int:
        n_face = sum(v.shape[1] * v.shape[2] for v in self.face_len.values())
        return self.nodes.shape[0] * (self.n_interior + n_face)

    def gamma_measure(self, sides: Sequence[Side], weights: Mapping[Side, np.ndarray]) -> np.ndarray:
        """Physical length of the union of ``sides`` for every node."""
        out = np.zeros(self.nodes.shape[0])
        for s in sides:
            out += np.einsum("nfq,fq->n", self.face_len[s], weights[s])
        return out


def build_cache(d: Diffeo, nodes: np.ndarray, micro: Grid, *, interior: bool = True,
                rule: QuadratureRule = CELL_RULE, workers: int = 1) -> MapCache:
    """Evaluate J, K K^T J and boundary covectors for all nodes.

    ``interior=False`` builds the face tables only (used at macro
    quadrature points, where only boundary measures are needed).
    """
    nodes = np.asarray(nodes, dtype=float)
    N = nodes.shape[0]
    cq = micro.cell_quadrature(rule)
    pts = cq.points.reshape(-1, 2)
    fq = {s: micro.face_quadrature([s], rule) for s in ALL_SIDES}

    J = np.empty((N, len(pts))) if interior else None
    A = np.empty((N, len(pts), 2, 2)) if interior else None
    face_nu = {s: np.empty((N, *fq[s].points.shape[:2], 2)) for s in ALL_SIDES}
    face_len = {s: np.empty((N, *fq[s].points.shape[:2])) for s in ALL_SIDES}
    face_J = {s: np.empty((N, *fq[s].points.shape[:2])) for s in ALL_SIDES}

    def work(sl: slice):
        x = nodes[sl, None, :]
        if interior:
            F = d.jacobian(x, pts[None])
            Jc = _det(F)
            _check_det(Jc, nodes[sl], pts)
            K = _inverse(F, Jc)
            J[sl] = Jc
            A[sl] = np.einsum("...ab,...cb->...ac", K, K) * Jc[..., None, None]
        for s in ALL_SIDES:
            fp = fq[s].points.reshape(-1, 2)
            F = d.jacobian(x, fp[None])
            Jf = _det(F)
            _check_det(Jf, nodes[sl], fp)
            nu = _cofactor_normal(F, s.normal)
            shape = (-1, *fq[s].points.shape[:2])
            face_nu[s][sl] = nu.reshape(*shape, 2)
            face_len[s][sl] = np.linalg.norm(nu, axis=-1).reshape(shape)
            face_J[s][sl] = Jf.reshape(shape)

    map_tasks(work, chunk_slices(N, max(1, 4 * workers)), workers)
    return MapCache(nodes, J, A, face_nu, face_len, face_J)


def _check_det(J: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    bad = np.argwhere(J <= SINGULAR_TOL)
    if len(bad):
        i, p = bad[0]
        raise DegenerateMapError(
            f"degenerate map: det = {J[i, p]:.6g} at x = {tuple(xs[i])}, yhat = {tuple(ys[p])}"
        )


# --------------------------------------------------------------------------
# Validation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MapBounds:
    c_lo: float = 1e-6
    c_hi: float = 1e6

    def __post_init__(self):
        if not (0 < self.c_lo <= self.c_hi):
            raise ValueError(f"need 0 < c_lo <= c_hi, got ({self.c_lo}, {self.c_hi})")


@dataclass
class ValidationReport:
    passed: bool
    min_det: float
    max_det: float
    n_samples: int
    failures: list[tuple[tuple[float, float], tuple[float, float], float]]

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"Jacobian bounds {status}: det in [{self.min_det:.6g}, {self.max_det:.6g}] "
                f"over {self.n_samples} samples, {len(self.failures)} outside bounds")


def validate(d: Diffeo, bounds: MapBounds, nodes, yhat) -> ValidationReport:
    """Check ``c_lo <= det <= c_hi`` on the lattice ``nodes x yhat``."""
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    yhat = np.atleast_2d(np.asarray(yhat, dtype=float))
    J = _det(d.jacobian(nodes[:, None, :], yhat[None, :, :]))
    J = np.broadcast_to(J, (len(nodes), len(yhat)))
    bad = np.argwhere((J < bounds.c_lo) | (J > bounds.c_hi))
    failures = [(tuple(nodes[i]), tuple(yhat[p]), float(J[i, p])) for i, p in bad[:100]]
    return ValidationReport(len(bad) == 0, float(J.min()), float(J.max()), J.size, failures)


@dataclass
class CoercivityReport:
    gamma_i: np.ndarray
    gamma_o: np.ndarray
    lhs1: np.ndarray
    lhs2: np.ndarray
    min_dw: float
    holds1: np.ndarray
    holds2: np.ndarray
    warnings: list[str]


def check_coercivity(kappa: Sequence[float], dw_values, d: Diffeo, nodes, roles: BoundaryRoles,
                      micro: Grid, log_warnings: bool = True) -> CoercivityReport:
    """Evaluate the two coercivity relations between kappa, |Gamma| and D^w.

    ``|k1 - k2| / 2 * |Gamma_I| < 1`` and ``|k3 - k4| / 2 * |Gamma_O| < min D^w``.
    Violations produce warnings (one per inequality), never exceptions.
    """
    k1, k2, k3, k4 = kappa
    cache = build_cache(d, nodes, micro, interior=False)
    fw = {s: micro.face_quadrature([s]).weights for s in ALL_SIDES}
    g_i = cache.gamma_measure(roles.micro_sides(MicroRole.GAMMA_I), fw)
    g_o = cache.gamma_measure(roles.micro_sides(MicroRole.GAMMA_O), fw)
    min_dw = float(np.min(dw_values))
    lhs1 = abs(k1 - k2) / 2 * g_i
    lhs2 = abs(k3 - k4) / 2 * g_o
    holds1 = lhs1 < 1.0
    holds2 = lhs2 < min_dw
    warnings = []
    if not holds1.all():
        warnings.append(
            f"coercivity condition (first inequality) violated at {int((~holds1).sum())} of {len(holds1)} nodes: "
            f"max |k1-k2|/2*|Gamma_I| = {lhs1.max():.4g} >= 1"
        )
    if not holds2.all():
        warnings.append(
            f"coercivity condition (second inequality) violated at {int((~holds2).sum())} of {len(holds2)} nodes: "
            f"max |k3-k4|/2*|Gamma_O| = {lhs2.max():.4g} >= min D^w = {min_dw:.4g}"
        )
    if log_warnings:
        for w in warnings:
            log.warning(w)
    return CoercivityReport(g_i, g_o, lhs1, lhs2, min_dw, holds1, holds2, warnings)
