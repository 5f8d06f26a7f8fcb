"""Sparse matrices, matrix-free operators and preconditioned CG.

Matrices are :class:`scipy.sparse.csr_matrix` instances; :class:`Operator`
wraps anything that can be applied to a vector.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class SolverError(RuntimeError):
    """A linear solve broke down or did not converge."""


class IndefiniteOperatorError(SolverError):
    """CG met a direction of non-positive curvature."""


def csr_matvec(A: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    """y = A x with a dimension check."""
    x = np.asarray(x, float)
    if x.shape[0] != A.shape[1]:
        raise ValueError(f"dimension mismatch: matrix has {A.shape[1]} columns, vector has {x.shape[0]} entries")
    return A @ x


def is_symmetric(A, rtol: float = 1e-12) -> bool:
    A = sp.csr_matrix(A)
    scale = abs(A).max() if A.nnz else 0.0
    diff = A - A.T
    return (abs(diff).max() if diff.nnz else 0.0) <= rtol * max(scale, 1e-300)


@dataclass(frozen=True, eq=False)
class Operator:
    """A linear map R^n -> R^n given by its action."""

    n: int
    apply: object
    description: str = ""

    def __matmul__(self, x):
        return self.apply(x)

    @classmethod
    def from_matrix(cls, A, description="matrix"):
        return cls(A.shape[0], lambda x: A @ x, description)

    @classmethod
    def diagonal_inverse(cls, diag, description="diagonal inverse"):
        inv = 1.0 / np.asarray(diag, float)
        return cls(inv.size, lambda x: inv * x, description)

    def to_dense(self) -> np.ndarray:
        """Dense matrix by applying to unit vectors (small n only)."""
        return np.column_stack([self.apply(e) for e in np.eye(self.n)])


def as_operator(A, n: int | None = None) -> Operator:
    """Wrap a matrix or a plain callable as an :class:`Operator`."""
    if isinstance(A, Operator):
        return A
    if hasattr(A, "shape"):
        return Operator.from_matrix(A)
    if callable(A):
        return Operator(n, A, getattr(A, "__name__", "callable"))
    raise TypeError(f"cannot use {type(A).__name__} as a linear operator")


def compose_schur_L2(K, Mlump_inv, M, rho: float) -> Operator:
    """y -> M y + rho K (Mlump_inv * (K y)), the lumped L2 Schur complement."""
    if rho < 0:
        raise ValueError(f"rho must be non-negative, got {rho}")
    w = np.asarray(Mlump_inv, float)
    if np.any(w <= 0):
        raise ValueError("lumped mass inverse must be positive")
    if not (K.shape == M.shape and K.shape[0] == w.size):
        raise ValueError("inconsistent dimensions")

    def apply(y):
        return M @ y + rho * (K @ (w * (K @ y)))

    return Operator(M.shape[0], apply, f"M + {rho:g} K lump(M)^-1 K")


@dataclass
class PcgReport:
    iterations: int = 0
    preconditioned_residual_history: list = field(default_factory=list)
    converged: bool = False

    @property
    def reduction(self) -> float:
        h = self.preconditioned_residual_history
        return h[-1] / h[0] if h and h[0] > 0 else 0.0


def pcg(A, apply_Cinv, b, x0=None, tol: float = 1e-6, max_it: int = 500, restart_every: int = 50):
    """Preconditioned conjugate gradients.

    Stops when (C^-1 r, r)^(1/2) <= tol * (C^-1 r0, r0)^(1/2).  Returns the
    iterate and a :class:`PcgReport`; ``converged`` is False if ``max_it``
    iterations did not suffice.
    """
    b = np.asarray(b, float)
    A = as_operator(A, b.size)
    Cinv = as_operator(apply_Cinv, b.size)
    x = np.zeros_like(b) if x0 is None else np.array(x0, float)
    r = b - A @ x
    z = Cinv @ r
    rz = float(r @ z)
    report = PcgReport()
    _check_finite(rz)
    if rz < 0:
        raise IndefiniteOperatorError("preconditioner is not positive definite")
    norm0 = np.sqrt(rz)
    report.preconditioned_residual_history.append(norm0)
    if norm0 == 0.0:
        report.converged = True
        return x, report
    target = tol * norm0
    p = z.copy()
    for k in range(1, max_it + 1):
        Ap = A @ p
        pAp = float(p @ Ap)
        _check_finite(pAp)
        if pAp <= 0.0:
            raise IndefiniteOperatorError(f"non-positive curvature p'Ap={pAp:.3e} at iteration {k}")
        alpha = rz / pAp
        x += alpha * p
        if k % restart_every == 0:
            r = b - A @ x
        else:
            r -= alpha * Ap
        z = Cinv @ r
        rz_new = float(r @ z)
        _check_finite(rz_new)
        norm = np.sqrt(max(rz_new, 0.0))
        report.preconditioned_residual_history.append(norm)
        report.iterations = k
        if norm <= target:
            report.converged = True
            break
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, report


def _check_finite(v):
    if not np.isfinite(v):
        raise SolverError("non-finite value in CG (indefinite operator or bad preconditioner?)")


def power_iteration(apply, n: int, iters: int = 200, seed: int = 0, rtol: float = 1e-10) -> float:
    """Largest eigenvalue (in modulus) of a linear map by power iteration."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = apply(v)
        lam_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
        if abs(lam_new - lam) <= rtol * abs(lam_new):
            return lam_new
        lam = lam_new
    return lam


def write_coo(A, path) -> None:
    """Coordinate text dump: one ``row col value`` line per stored entry."""
    C = sp.coo_matrix(A)
    order = np.lexsort((C.col, C.row))
    with text_sink(path) as fh:
        for i, j, v in zip(C.row[order], C.col[order], C.data[order]):
            fh.write(f"{i} {j} {v:.17g}\n")


def text_sink(target):
    """Open a path for writing, or pass an open text stream through unclosed."""
    if hasattr(target, "write"):
        return contextlib.nullcontext(target)
    return open(target, "w")
