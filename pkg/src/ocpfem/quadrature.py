"""Quadrature on simplices, with recursive subdivision across interfaces.

Rules are collapsed (Stroud conical product) Gauss-Jacobi rules, written in
barycentric coordinates so that the same rule serves every element.
Elements that straddle a declared discontinuity of the integrand are split
by regular refinement until the contribution of the split part settles.
"""

from __future__ import annotations

from functools import lru_cache
from math import factorial

import numpy as np
from scipy.special import roots_jacobi


@lru_cache(maxsize=None)
def simplex_rule(d: int, degree: int = 5) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric points (q, d+1) and weights (q,) summing to 1."""
    m = (degree + 2) // 2
    # conical product: x_1 from Jacobi(d-1, 0), x_2 from Jacobi(d-2, 0), ...
    pts1d, wts1d = [], []
    for k in range(d):
        alpha = d - 1 - k
        t, w = roots_jacobi(m, alpha, 0.0)
        pts1d.append((t + 1) / 2)
        wts1d.append(w / 2 ** (alpha + 1))
    grids = np.meshgrid(*pts1d, indexing="ij")
    wgrid = np.meshgrid(*wts1d, indexing="ij")
    s = [g.ravel() for g in grids]
    w = np.prod([g.ravel() for g in wgrid], axis=0)
    # collapse the unit cube onto the simplex
    bary = np.zeros((w.size, d + 1))
    rest = np.ones(w.size)
    for k in range(d):
        bary[:, k + 1] = rest * s[k]
        rest = rest * (1 - s[k])
    bary[:, 0] = rest
    w = w * factorial(d)
    return bary, w / w.sum()


@lru_cache(maxsize=None)
def red_children(d: int) -> np.ndarray:
    """Regular refinement of the reference simplex.

    Returns (2^d, d+1, d+1): child vertices in barycentric coordinates of
    the parent.  Tetrahedra follow Bey's rule with the x02-x13 diagonal.
    """
    e = np.eye(d + 1)

    def mid(i, j):
        return (e[i] + e[j]) / 2

    if d == 1:
        ch = [[e[0], mid(0, 1)], [mid(0, 1), e[1]]]
    elif d == 2:
        ch = [
            [e[0], mid(0, 1), mid(0, 2)],
            [mid(0, 1), e[1], mid(1, 2)],
            [mid(0, 2), mid(1, 2), e[2]],
            [mid(0, 1), mid(1, 2), mid(0, 2)],
        ]
    elif d == 3:
        m = {(i, j): mid(i, j) for i in range(4) for j in range(i + 1, 4)}
        ch = [
            [e[0], m[0, 1], m[0, 2], m[0, 3]],
            [m[0, 1], e[1], m[1, 2], m[1, 3]],
            [m[0, 2], m[1, 2], e[2], m[2, 3]],
            [m[0, 3], m[1, 3], m[2, 3], e[3]],
            [m[0, 1], m[0, 2], m[0, 3], m[1, 3]],
            [m[0, 1], m[0, 2], m[1, 2], m[1, 3]],
            [m[0, 2], m[0, 3], m[1, 3], m[2, 3]],
            [m[0, 2], m[1, 2], m[1, 3], m[2, 3]],
        ]
    else:
        raise ValueError(f"no refinement rule for d={d}")
    return np.array(ch)


DEFAULT_MAX_DEPTH = {1: 12, 2: 8, 3: 4}
# finest sub-cell in 3D, as a fraction of the domain width
MIN_CELL_FRACTION_3D = 1 / 256


def default_depth(mesh) -> int:
    """Subdivision depth cap; in 3D the cap keeps the finest piece at a fixed size."""
    d = mesh.dim
    depth = DEFAULT_MAX_DEPTH[d]
    if d == 3 and mesh.grid is not None:
        a, b, n = mesh.grid
        depth = min(depth, int(round(np.log2(max(1.0, (1 / n) / MIN_CELL_FRACTION_3D)))))
    return max(depth, 1)


def integrate_elements(mesh, integrand, straddles=None, *, degree=5, tol=1e-10, max_depth=None, chunk=100_000):
    """Per-element, per-vertex integrals of ``integrand`` times the P1 basis.

    ``integrand(elem_ids, x, bary)`` receives element indices (k,), physical
    points (k, q, d) and barycentric coordinates in the element (k, q, d+1),
    and returns values of shape (k, q) or (k, q, m).  The result has shape
    (E, d+1) or (E, d+1, m): entry [e, i] approximates the integral over
    element e of integrand * lambda_i.  Summing over i gives the plain integral.

    ``straddles(vertices)`` flags sub-simplices (k, d+1, d) cut by an
    interface; those are refined until the change of their contribution
    falls below ``tol`` (relative to the total) or ``max_depth`` is reached.
    """
    d = mesh.dim
    bary_q, w_q = simplex_rule(d, degree)
    max_depth = default_depth(mesh) if max_depth is None else max_depth
    E = mesh.n_elements
    out = None
    scalar = False
    flagged = []
    for start in range(0, E, chunk):
        ids = np.arange(start, min(start + chunk, E))
        V = mesh.nodes[mesh.elements[ids]]
        vals, scalar = _rule_on(ids, V, np.broadcast_to(np.eye(d + 1), (ids.size, d + 1, d + 1)), integrand, bary_q, w_q)
        if out is None:
            out = np.empty((E,) + vals.shape[1:])
        out[ids] = vals * mesh.measures[ids, None, None]
        if straddles is not None:
            cut = straddles(V)
            if np.any(cut):
                flagged.append(ids[cut])
    if flagged:
        _refine_cut(mesh, np.concatenate(flagged), out, integrand, straddles, bary_q, w_q, tol, max_depth)
    return out[..., 0] if scalar else out


def _refine_cut(mesh, ids, out, integrand, straddles, bary_q, w_q, tol, max_depth):
    d = mesh.dim
    scale = max(np.abs(out).sum(), 1e-300)
    lam = np.broadcast_to(np.eye(d + 1), (ids.size, d + 1, d + 1)).copy()
    meas = mesh.measures[ids].copy()
    coarse = out[ids].copy()
    children = red_children(d)
    k = children.shape[0]
    # each pass replaces the cut pieces by their children
    for _ in range(max_depth):
        if ids.size == 0:
            break
        c_lam = np.matmul(children[None], lam[:, None]).reshape(-1, d + 1, d + 1)
        c_ids = np.repeat(ids, k)
        c_meas = np.repeat(meas, k) / k
        V = np.matmul(c_lam, mesh.nodes[mesh.elements[c_ids]])
        fine = _rule_on(c_ids, V, c_lam, integrand, bary_q, w_q)[0] * c_meas[:, None, None]
        delta = fine.reshape((-1, k) + fine.shape[1:]).sum(axis=1) - coarse
        np.add.at(out, ids, delta)
        if np.abs(delta).sum() <= tol * scale:
            break
        cut = straddles(V)
        ids, lam, meas, coarse = c_ids[cut], c_lam[cut], c_meas[cut], fine[cut]


def _rule_on(ids, V, lam, integrand, bary_q, w_q):
    """Quadrature on sub-simplices given by parent-barycentric vertices ``lam``.

    Returns (k, d+1, m) integrals over the reference measure and whether the
    integrand was scalar-valued.
    """
    # barycentric coordinates of the quadrature points in the parent element
    pb = np.matmul(bary_q, lam)
    x = np.matmul(bary_q, V)
    f = integrand(ids, x, pb)
    scalar = f.ndim == 2
    if scalar:
        f = f[:, :, None]
    return np.matmul(pb.transpose(0, 2, 1), f * w_q[None, :, None]), scalar


# Interface descriptions used by targets to flag cut elements.

class SphereInterface:
    """Boundary of a ball; conservative test via element bounding balls."""

    def __init__(self, center, radius):
        self.center = np.asarray(center, float)
        self.radius = float(radius)

    def straddles(self, V):
        c = V.mean(axis=1)
        R = np.linalg.norm(V - c[:, None, :], axis=2).max(axis=1)
        dist = np.linalg.norm(c - self.center, axis=1)
        return np.abs(dist - self.radius) < R


class BoxInterface:
    """Boundary of an axis-parallel box [lo, hi] (degenerate boxes allowed)."""

    def __init__(self, lo, hi):
        self.lo = np.atleast_1d(np.asarray(lo, float))
        self.hi = np.atleast_1d(np.asarray(hi, float))

    def straddles(self, V):
        vmin, vmax = V.min(axis=1), V.max(axis=1)
        eps = 1e-12 * max(1.0, float(np.abs(self.hi).max()))
        flat = self.hi - self.lo <= eps
        overlap = np.where(
            flat,
            (vmin < self.lo - eps) & (vmax > self.hi + eps),
            (vmax > self.lo + eps) & (vmin < self.hi - eps),
        ).all(axis=1)
        inside = ((vmin >= self.lo - eps) & (vmax <= self.hi + eps)).all(axis=1)
        return overlap & ~inside


def any_straddles(interfaces):
    """Combine interface tests; ``None`` when there is nothing to resolve."""
    if not interfaces:
        return None

    def test(V):
        cut = np.zeros(V.shape[0], bool)
        for itf in interfaces:
            cut |= itf.straddles(V)
        return cut

    return test
