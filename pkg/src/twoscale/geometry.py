"""Structured quadrilateral grids with bilinear (Q1) elements.

Both scales use the same machinery: the macroscopic domain and the
reference micro cell are axis-aligned rectangles meshed with ``n0 x n1``
cells.  Nodes are numbered lexicographically (first axis fastest) and the
degree-of-freedom index of a node is its node index.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np

from . import expr as ex


class Side(enum.Enum):
    LEFT = "left"
    RIGHT = "right"
    BOTTOM = "bottom"
    TOP = "top"

    @property
    def normal(self) -> np.ndarray:
        return {
            Side.LEFT: np.array([-1.0, 0.0]),
            Side.RIGHT: np.array([1.0, 0.0]),
            Side.BOTTOM: np.array([0.0, -1.0]),
            Side.TOP: np.array([0.0, 1.0]),
        }[self]

    @classmethod
    def parse(cls, text: str) -> "Side":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown side {text!r}; expected one of left, right, bottom, top") from None


ALL_SIDES = (Side.LEFT, Side.RIGHT, Side.BOTTOM, Side.TOP)


class MacroRole(enum.Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"


class MicroRole(enum.Enum):
    GAMMA_I = "gamma_i"
    GAMMA_O = "gamma_o"
    GAMMA_N = "gamma_n"


@dataclass(frozen=True)
class BoundaryRoles:
    """Boundary role of every side, on both scales."""

    macro: Mapping[Side, MacroRole]
    micro: Mapping[Side, MicroRole]

    def __post_init__(self):
        for name, table in (("macro", self.macro), ("micro", self.micro)):
            missing = [s.value for s in ALL_SIDES if s not in table]
            if missing:
                raise ValueError(f"{name} boundary roles missing for sides: {', '.join(missing)}")
        if not self.micro_sides(MicroRole.GAMMA_I) or not self.micro_sides(MicroRole.GAMMA_O):
            raise ValueError("micro boundary needs at least one gamma_i and one gamma_o side")

    def macro_sides(self, role: MacroRole) -> tuple[Side, ...]:
        return tuple(s for s in ALL_SIDES if self.macro[s] is role)

    def micro_sides(self, role: MicroRole) -> tuple[Side, ...]:
        return tuple(s for s in ALL_SIDES if self.micro[s] is role)

    @classmethod
    def from_lists(cls, dirichlet=(Side.LEFT,), gamma_i=(Side.LEFT,), gamma_o=(Side.RIGHT,)) -> "BoundaryRoles":
        macro = {s: (MacroRole.DIRICHLET if s in dirichlet else MacroRole.NEUMANN) for s in ALL_SIDES}
        micro = {}
        for s in ALL_SIDES:
            if s in gamma_i and s in gamma_o:
                raise ValueError(f"side {s.value} assigned to both gamma_i and gamma_o")
            micro[s] = MicroRole.GAMMA_I if s in gamma_i else MicroRole.GAMMA_O if s in gamma_o else MicroRole.GAMMA_N
        return cls(macro=macro, micro=micro)


@dataclass(frozen=True)
class RectDomain:
    lo: tuple[float, float] = (-1.0, -1.0)
    hi: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if not (self.lo[0] < self.hi[0] and self.lo[1] < self.hi[1]):
            raise ValueError(f"degenerate rectangle lo={self.lo} hi={self.hi}")

    @property
    def area(self) -> float:
        return (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])


# --------------------------------------------------------------------------
# Reference element and quadrature
# --------------------------------------------------------------------------

# local node order on [-1,1]^2, counter-clockwise
LOCAL_NODES = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


def shape_eval(p) -> np.ndarray:
    """Bilinear shape values at local point(s) ``p`` (..., 2) -> (..., 4)."""
    p = np.asarray(p, dtype=float)
    s = p[..., 0, None]
    t = p[..., 1, None]
    return 0.25 * (1 + LOCAL_NODES[:, 0] * s) * (1 + LOCAL_NODES[:, 1] * t)


def shape_grad(p) -> np.ndarray:
    """Local gradients (..., 4, 2) of the bilinear shape functions."""
    p = np.asarray(p, dtype=float)
    s = p[..., 0, None]
    t = p[..., 1, None]
    ds = 0.25 * LOCAL_NODES[:, 0] * (1 + LOCAL_NODES[:, 1] * t)
    dt = 0.25 * LOCAL_NODES[:, 1] * (1 + LOCAL_NODES[:, 0] * s)
    return np.stack([ds, dt], axis=-1)


def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(n)


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor Gauss rule on the reference square plus a matching face rule."""

    order: int = 2

    @cached_property
    def face_points(self) -> np.ndarray:
        return gauss_legendre(self.order)[0]

    @cached_property
    def face_weights(self) -> np.ndarray:
        return gauss_legendre(self.order)[1]

    @cached_property
    def points(self) -> np.ndarray:
        t = self.face_points
        s0, s1 = np.meshgrid(t, t, indexing="xy")
        return np.stack([s0.ravel(), s1.ravel()], axis=-1)

    @cached_property
    def weights(self) -> np.ndarray:
        w = self.face_weights
        return np.outer(w, w).ravel()


CELL_RULE = QuadratureRule(2)

# local node indices and parametrisation of each side of the reference square
_SIDE_LOCAL = {
    Side.BOTTOM: ((0, 1), lambda t: np.stack([t, -np.ones_like(t)], -1)),
    Side.RIGHT: ((1, 2), lambda t: np.stack([np.ones_like(t), t], -1)),
    Side.TOP: ((3, 2), lambda t: np.stack([t, np.ones_like(t)], -1)),
    Side.LEFT: ((0, 3), lambda t: np.stack([-np.ones_like(t), t], -1)),
}


@dataclass(frozen=True)
class BoundaryFace:
    cell: int
    side: Side
    nodes: tuple[int, int]


@dataclass(frozen=True)
class FaceParametrization:
    """Affine map t in [-1, 1] -> domain coordinates of one boundary face."""

    start: np.ndarray
    end: np.ndarray
    side: Side

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        mid = 0.5 * (self.start + self.end)
        return mid + t[..., None] * self.tangent

    @property
    def tangent(self) -> np.ndarray:
        return 0.5 * (self.end - self.start)

    @property
    def normal(self) -> np.ndarray:
        return self.side.normal

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.end - self.start))


# --------------------------------------------------------------------------
# Grid
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Grid:
    domain: RectDomain
    n0: int
    n1: int
    nodes: np.ndarray = field(repr=False)
    cells: np.ndarray = field(repr=False)
    boundary_faces: tuple[BoundaryFace, ...] = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def h(self) -> tuple[float, float]:
        return (
            (self.domain.hi[0] - self.domain.lo[0]) / self.n0,
            (self.domain.hi[1] - self.domain.lo[1]) / self.n1,
        )

    def node_index(self, i: int, j: int) -> int:
        return i + (self.n0 + 1) * j

    def faces_on(self, sides) -> list[BoundaryFace]:
        sides = set(sides)
        return [f for f in self.boundary_faces if f.side in sides]

    def side_nodes(self, side: Side) -> np.ndarray:
        idx = sorted({n for f in self.faces_on([side]) for n in f.nodes})
        return np.array(idx, dtype=int)

    def face_parametrization(self, face: BoundaryFace) -> FaceParametrization:
        a, b = face.nodes
        return FaceParametrization(self.nodes[a].copy(), self.nodes[b].copy(), face.side)

    def to_local(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Locate points: return (cell index, local coordinates in [-1,1]^2)."""
        p = np.asarray(points, dtype=float)
        h0, h1 = self.h
        f0 = (p[..., 0] - self.domain.lo[0]) / h0
        f1 = (p[..., 1] - self.domain.lo[1]) / h1
        i = np.clip(np.floor(f0).astype(int), 0, self.n0 - 1)
        j = np.clip(np.floor(f1).astype(int), 0, self.n1 - 1)
        local = np.stack([2 * (f0 - i) - 1, 2 * (f1 - j) - 1], axis=-1)
        return i + self.n0 * j, local

    def evaluate(self, coeffs: np.ndarray, points) -> np.ndarray:
        """Evaluate the Q1 function with nodal ``coeffs`` at ``points``."""
        cell, local = self.to_local(points)
        phi = shape_eval(local)
        vals = np.asarray(coeffs, dtype=float)[self.cells[cell]]
        return np.einsum("...k,...k->...", phi, vals)

    # ---- quadrature tables -------------------------------------------------

    def cell_quadrature(self, rule: QuadratureRule = CELL_RULE) -> "CellQuadrature":
        return CellQuadrature.build(self, rule)

    def face_quadrature(self, sides, rule: QuadratureRule = CELL_RULE) -> "FaceQuadrature":
        return FaceQuadrature.build(self, self.faces_on(sides), rule)


def build_grid(domain: RectDomain, n0: int, n1: int | None = None) -> Grid:
    if n1 is None:
        n1 = n0
    if n0 < 1 or n1 < 1:
        raise ValueError(f"grid needs at least one cell per axis, got ({n0}, {n1})")
    xs = np.linspace(domain.lo[0], domain.hi[0], n0 + 1)
    ys = np.linspace(domain.lo[1], domain.hi[1], n1 + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.stack([X.ravel(), Y.ravel()], axis=-1)

    i, j = np.meshgrid(np.arange(n0), np.arange(n1), indexing="xy")
    i = i.ravel()
    j = j.ravel()
    base = i + (n0 + 1) * j
    cells = np.stack([base, base + 1, base + n0 + 2, base + n0 + 1], axis=-1)

    faces = []
    for c in range(n0 * n1):
        ci, cj = c % n0, c // n0
        local = cells[c]
        for side, hit in (
            (Side.BOTTOM, cj == 0),
            (Side.RIGHT, ci == n0 - 1),
            (Side.TOP, cj == n1 - 1),
            (Side.LEFT, ci == 0),
        ):
            if hit:
                a, b = _SIDE_LOCAL[side][0]
                faces.append(BoundaryFace(c, side, (int(local[a]), int(local[b]))))
    return Grid(domain, n0, n1, nodes, cells, tuple(faces))


@dataclass(frozen=True, eq=False)
class CellQuadrature:
    """Per-cell quadrature data of a grid.

    points: (C, Q, 2) physical points; weights: (C, Q) including the cell
    Jacobian; phi: (Q, 4) shape values; grad: (C, Q, 4, 2) physical
    shape gradients.
    """

    points: np.ndarray
    weights: np.ndarray
    phi: np.ndarray
    grad: np.ndarray
    cells: np.ndarray

    @classmethod
    def build(cls, grid: Grid, rule: QuadratureRule) -> "CellQuadrature":
        h0, h1 = grid.h
        q = rule.points
        phi = shape_eval(q)
        dloc = shape_grad(q)
        scale = np.array([2.0 / h0, 2.0 / h1])
        grad = np.broadcast_to(dloc * scale, (grid.n_cells, *dloc.shape)).copy()
        corner = grid.nodes[grid.cells[:, 0]]
        points = corner[:, None, :] + 0.5 * (q[None, :, :] + 1.0) * np.array([h0, h1])
        weights = np.broadcast_to(rule.weights * (h0 * h1 / 4.0), (grid.n_cells, len(rule.weights))).copy()
        return cls(points, weights, phi, grad, grid.cells)


@dataclass(frozen=True, eq=False)
class FaceQuadrature:
    """Quadrature on a set of boundary faces.

    points: (F, Q, 2); weights: (F, Q) including the face length factor;
    phi: (F, Q, 4) values of the owning cell's shape functions;
    cells: (F,) owning cell; normals: (F, 2) outward unit normals.
    """

    faces: tuple[BoundaryFace, ...]
    points: np.ndarray
    weights: np.ndarray
    phi: np.ndarray
    cells: np.ndarray
    normals: np.ndarray

    @classmethod
    def build(cls, grid: Grid, faces, rule: QuadratureRule) -> "FaceQuadrature":
        faces = tuple(faces)
        t = rule.face_points
        nq = len(t)
        F = len(faces)
        points = np.zeros((F, nq, 2))
        weights = np.zeros((F, nq))
        phi = np.zeros((F, nq, 4))
        normals = np.zeros((F, 2))
        for k, f in enumerate(faces):
            par = grid.face_parametrization(f)
            points[k] = par(t)
            weights[k] = rule.face_weights * np.linalg.norm(par.tangent)
            phi[k] = shape_eval(_SIDE_LOCAL[f.side][1](t))
            normals[k] = f.side.normal
        cells = np.array([f.cell for f in faces], dtype=int)
        return cls(faces, points, weights, phi, cells, normals)

    @property
    def n_points(self) -> int:
        return self.points.shape[0] * self.points.shape[1]


def interpolate(grid: Grid, e: ex.Expr, env: Mapping[str, float] | None = None,
                coords: tuple[str, str] = ("x0", "x1")) -> np.ndarray:
    """Nodal interpolant of ``e``; grid coordinates bind to ``coords``."""
    env = dict(env or {})
    env[coords[0]] = grid.nodes[:, 0]
    env[coords[1]] = grid.nodes[:, 1]
    return np.array(ex.evaluate_on(e, env, (grid.n_nodes,)), dtype=float)
