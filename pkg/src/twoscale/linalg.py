"""Sparse systems, Dirichlet elimination and Jacobi-preconditioned CG.

The CG kernel is written for a *batch* of independent systems stored as one
block-diagonal matrix: each system keeps its own step lengths and stops on
its own residual, so the result for a system does not depend on what else
is in the batch.  A single system is a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float | None = None, iterations: int | None = None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class IndefiniteMatrixError(ConvergenceError):
    pass


@dataclass
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    constraints: dict[int, float] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


class DirichletElimination:
    """Symmetric elimination of fixed values for a fixed matrix.

    Constrained rows and columns are zeroed with a unit diagonal; the
    constrained columns times the prescribed values move to the right-hand
    side.  The matrix part is computed once; :meth:`rhs` is cheap.
    """

    def __init__(self, matrix: sp.spmatrix, dofs, values):
        A = sp.csr_matrix(matrix)
        n = A.shape[0]
        self.dofs = np.asarray(dofs, dtype=int)
        self.values = np.asarray(values, dtype=float)
        keep = np.ones(n)
        keep[self.dofs] = 0.0
        P = sp.diags(keep)
        g = np.zeros(n)
        g[self.dofs] = self.values
        self.lift = A @ g
        self.matrix = (P @ A @ P + sp.diags(1.0 - keep)).tocsr()
        self.matrix.sort_indices()

    def rhs(self, b: np.ndarray) -> np.ndarray:
        out = b - self.lift
        out[self.dofs] = self.values
        return out

    def restore(self, x: np.ndarray) -> np.ndarray:
        """Overwrite constrained entries with their exact values (CG leaves round-off there)."""
        x[..., self.dofs] = self.values
        return x


def apply_dirichlet(system: SparseSystem, values: dict[int, float] | None = None) -> SparseSystem:
    """Return the system with ``values`` (dof -> value) eliminated symmetrically."""
    values = dict(system.constraints if values is None else values)
    if not values:
        return SparseSystem(system.matrix.copy(), system.rhs.copy(), {})
    dofs = np.fromiter(values.keys(), dtype=int)
    vals = np.fromiter(values.values(), dtype=float)
    elim = DirichletElimination(system.matrix, dofs, vals)
    return SparseSystem(elim.matrix, elim.rhs(np.asarray(system.rhs, dtype=float)), values)


@dataclass
class CGResult:
    x: np.ndarray
    iterations: np.ndarray
    residual: np.ndarray


def batched_cg(A: sp.csr_matrix, b: np.ndarray, x0: np.ndarray | None = None, *, tol: float = 1e-10,
               maxit: int | None = None, diag: np.ndarray | None = None) -> CGResult:
    """Jacobi-preconditioned CG for ``S`` independent systems at once.

    ``A`` is block diagonal with ``S`` blocks of size ``n``; ``b`` has shape
    (S, n).  Each system stops once ``|b - A x| <= tol |b|``.
    """
    b = np.asarray(b, dtype=float)
    S, n = b.shape
    if maxit is None:
        maxit = max(10 * n, 100)
    if diag is None:
        diag = A.diagonal().reshape(S, n)
    if np.any(diag <= 0):
        raise IndefiniteMatrixError("non-positive diagonal entry; matrix is not SPD")
    inv_diag = 1.0 / diag

    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float).reshape(S, n)
    r = b - (A @ x.ravel()).reshape(S, n)
    bnorm = np.sqrt(np.einsum("ij,ij->i", b, b))
    target2 = (tol * bnorm) ** 2
    rr = np.einsum("ij,ij->i", r, r)
    active = rr > target2
    iters = np.zeros(S, dtype=int)

    z = r * inv_diag
    p = z.copy()
    rz = np.einsum("ij,ij->i", r, z)
    k = 0
    while active.any():
        if k >= maxit:
            rnorm = np.sqrt(rr)
            worst = float(np.max(np.where(bnorm > 0, rnorm / np.where(bnorm > 0, bnorm, 1), rnorm)[active]))
            raise ConvergenceError(
                f"CG did not converge in {maxit} iterations for {int(active.sum())} system(s); "
                f"relative residual {worst:.3e}", residual=worst, iterations=k)
        k += 1
        Ap = (A @ p.ravel()).reshape(S, n)
        pAp = np.einsum("ij,ij->i", p, Ap)
        if np.any(pAp[active] <= 0):
            raise IndefiniteMatrixError("negative curvature encountered; matrix is not positive definite",
                                        iterations=k)
        alpha = np.where(active, rz / np.where(active, pAp, 1.0), 0.0)[:, None]
        x += alpha * p
        Ap *= alpha
        r -= Ap
        rr = np.einsum("ij,ij->i", r, r)
        iters += active
        active &= rr > target2
        np.multiply(r, inv_diag, out=z)
        rz_new = np.einsum("ij,ij->i", r, z)
        beta = np.where(active, rz_new / np.where(rz != 0, rz, 1.0), 0.0)[:, None]
        p *= beta
        p += z
        rz = rz_new

    rnorm = np.sqrt(rr)
    rel = np.where(bnorm > 0, rnorm / np.where(bnorm > 0, bnorm, 1.0), rnorm)
    return CGResult(x, iters, rel)


def cg_solve(system: SparseSystem | sp.spmatrix, rhs: np.ndarray | None = None, tol: float = 1e-10,
             maxit: int | None = None, x0: np.ndarray | None = None) -> np.ndarray:
    """Solve one SPD system with Jacobi-preconditioned CG."""
    return cg(system, rhs, tol=tol, maxit=maxit, x0=x0).x


def cg(system: SparseSystem | sp.spmatrix, rhs: np.ndarray | None = None, *, tol: float = 1e-10,
       maxit: int | None = None, x0: np.ndarray | None = None) -> CGResult:
    if isinstance(system, SparseSystem):
        A, b = system.matrix, system.rhs
    else:
        A, b = system, rhs
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    res = batched_cg(A, b[None, :], None if x0 is None else np.asarray(x0)[None, :], tol=tol, maxit=maxit)
    x = res.x[0]
    if isinstance(system, SparseSystem) and system.constraints:
        for dof, val in system.constraints.items():
            x[dof] = val
    return CGResult(x, res.iterations[0], res.residual[0])


def block_diag_csr(indptr: np.ndarray, indices: np.ndarray, values: np.ndarray) -> sp.csr_matrix:
    """Block-diagonal CSR from ``S`` matrices sharing one sparsity pattern.

    ``values`` has shape (S, nnz).
    """
    S, nnz = values.shape
    n = len(indptr) - 1
    offsets = np.arange(S, dtype=np.int64)
    big_indices = (indices[None, :].astype(np.int64) + n * offsets[:, None]).ravel()
    big_indptr = np.concatenate([(indptr[:-1][None, :] + nnz * offsets[:, None]).ravel(), [S * nnz]])
    idx_dtype = np.int32 if S * max(n, nnz) < 2**31 - 1 else np.int64
    return sp.csr_matrix(
        (values.ravel(), big_indices.astype(idx_dtype), big_indptr.astype(idx_dtype)), shape=(S * n, S * n)
    )
