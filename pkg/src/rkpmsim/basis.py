"""Corrected (degree-1) RKPM shape functions and their analytic gradients.

Monomials are evaluated in a frame attached to the kernel set: coordinates are
shifted by the centroid of the centers and divided by the largest extent of
their bounding box. Shape functions are invariant to this choice; it only
keeps the 4x4 moment matrices well conditioned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .errors import RkpmError
from .sampling import IntegrationSet, KernelSet

CUTOFF = 7.0
REG_EPS = 1e-10
COVER_TOL = 1e-8
_REFINE_STEPS = 2


def raw_kernel(X, p, r) -> float:
    d = np.asarray(X, dtype=float) - np.asarray(p, dtype=float)
    return float(np.exp(-(d @ d) / r**2))


def raw_kernel_grad(X, p, r) -> np.ndarray:
    d = np.asarray(X, dtype=float) - np.asarray(p, dtype=float)
    return -2.0 * d / r**2 * np.exp(-(d @ d) / r**2)


@dataclass(frozen=True)
class Frame:
    origin: np.ndarray
    scale: float

    @classmethod
    def of(cls, kernels: KernelSet) -> "Frame":
        c = kernels.centers
        ext = float(np.max(c.max(axis=0) - c.min(axis=0)))
        return cls(c.mean(axis=0), ext if ext > 0 else float(np.max(kernels.radii)))

    def monomials(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        out = np.ones((len(pts), 4))
        out[:, 1:] = (pts - self.origin) / self.scale
        return out


@dataclass
class Correction:
    """Moment matrix, correction vector and their spatial derivatives at one point."""

    M: np.ndarray  # (4, 4)
    C: np.ndarray  # (4,)
    dM: np.ndarray  # (3, 4, 4), derivative along x, y, z
    dC: np.ndarray  # (3, 4)


@dataclass
class BasisTable:
    """Shape values and gradients of every kernel at a fixed query set.

    ``values`` and the three entries of ``grads`` are CSR matrices of shape
    (N, K) sharing one sparsity pattern; a row's stored columns are its active
    kernels.
    """

    points: np.ndarray
    kernels: KernelSet
    values: sp.csr_matrix
    grads: tuple
    dense: bool

    @property
    def shape(self):
        return self.values.shape

    def dense_values(self) -> np.ndarray:
        return self.values.toarray()

    def dense_gradients(self) -> np.ndarray:
        """(N, K, 3) array of shape-function gradients."""
        return np.stack([g.toarray() for g in self.grads], axis=-1)

    def active(self, i: int) -> np.ndarray:
        v = self.values
        return v.indices[v.indptr[i] : v.indptr[i + 1]]


# ----------------------------------------------
# Core evaluation
# ----------------------------------------------


def _pairs(points, kernels, dense):
    n, K = len(points), len(kernels)
    if dense:
        rows = np.repeat(np.arange(n), K)
        cols = np.tile(np.arange(K), n)
        return rows, cols
    reach = CUTOFF * kernels.radii
    tree = cKDTree(kernels.centers)
    hits = tree.query_ball_point(points, float(reach.max()))
    counts = np.fromiter((len(h) for h in hits), dtype=np.int64, count=n)
    rows = np.repeat(np.arange(n), counts)
    cols = np.fromiter((k for h in hits for k in h), dtype=np.int64, count=int(counts.sum()))
    d = points[rows] - kernels.centers[cols]
    keep = np.einsum("ij,ij->i", d, d) <= reach[cols] ** 2
    return rows[keep], cols[keep]


def _solve_refined(Mreg, M, rhs):
    x = np.linalg.solve(Mreg, rhs)
    for _ in range(_REFINE_STEPS):
        x = x + np.linalg.solve(Mreg, rhs - M @ x)
    return x


def _evaluate(points, kernels, frame, dense, want_moments=False):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n, K = len(points), len(kernels)
    rows, cols = _pairs(points, kernels, dense)

    d = points[rows] - kernels.centers[cols]
    r2 = kernels.radii[cols] ** 2
    raw = np.exp(-np.einsum("ij,ij->i", d, d) / r2)
    raw_grad = (-2.0 * raw / r2)[:, None] * d

    Pk = frame.monomials(kernels.centers)
    PP = np.einsum("ka,kb->kab", Pk, Pk).reshape(K, 16)
    W = sp.csr_matrix((raw, (rows, cols)), shape=(n, K))
    M = (W @ PP).reshape(n, 4, 4)
    dM = np.stack(
        [(sp.csr_matrix((raw_grad[:, s], (rows, cols)), shape=(n, K)) @ PP).reshape(n, 4, 4) for s in range(3)],
        axis=1,
    )

    tr = np.trace(M, axis1=1, axis2=2)
    lam_min = np.linalg.eigvalsh(M)[:, 0] if n else np.zeros(0)
    # tr == 0 means no kernel reaches the point at all
    bad = ~(lam_min >= COVER_TOL * tr / 4.0) | ~(tr > 0)
    if np.any(bad):
        where = points[bad]
        raise RkpmError(
            "uncovered query point",
            detail=f"{int(bad.sum())} point(s), first at {where[0].tolist()}",
            points=where,
        )

    Mreg = M + (REG_EPS * tr / 4.0)[:, None, None] * np.eye(4)
    P = frame.monomials(points)
    C = _solve_refined(Mreg, M, P[:, :, None])[:, :, 0]

    dP = np.zeros((n, 4, 3))
    dP[:, 1:, :] = np.eye(3) / frame.scale
    rhs = dP - np.einsum("nsab,nb->nas", dM, C)
    dC = _solve_refined(Mreg, M, rhs)  # (n, 4, 3)

    pc = np.einsum("pa,pa->p", Pk[cols], C[rows])
    pdc = np.einsum("pa,pas->ps", Pk[cols], dC[rows])
    vals = raw * pc
    grads = raw_grad * pc[:, None] + raw[:, None] * pdc
    out = (rows, cols, vals, grads)
    if want_moments:
        out = out + (M, C, dM, np.transpose(dC, (0, 2, 1)))
    return out


# ----------------------------------------------
# Public API
# ----------------------------------------------


def moment_and_correction(X, kernels: KernelSet, dense: bool = True) -> Correction:
    """M(X), C(X) in the kernel frame, plus their derivatives w.r.t. physical X."""
    *_, M, C, dM, dC = _evaluate(X, kernels, Frame.of(kernels), dense, want_moments=True)
    return Correction(M[0], C[0], dM[0], dC[0])


def shape_values(X, kernels: KernelSet, dense: bool = True) -> np.ndarray:
    """(K,) values at one point, or (n, K) for an (n, 3) batch."""
    X = np.asarray(X, dtype=float)
    rows, cols, vals, _ = _evaluate(X, kernels, Frame.of(kernels), dense)
    out = np.zeros((len(np.atleast_2d(X)), len(kernels)))
    out[rows, cols] = vals
    return out[0] if X.ndim == 1 else out


def shape_gradients(X, kernels: KernelSet, dense: bool = True) -> np.ndarray:
    """(K, 3) gradients at one point, or (n, K, 3) for an (n, 3) batch."""
    X = np.asarray(X, dtype=float)
    rows, cols, _, grads = _evaluate(X, kernels, Frame.of(kernels), dense)
    out = np.zeros((len(np.atleast_2d(X)), len(kernels), 3))
    out[rows, cols] = grads
    return out[0] if X.ndim == 1 else out


def build_basis_table(queries, kernels: KernelSet, dense: bool = False, chunk: int = 2048) -> BasisTable:
    """Evaluate all shape functions at all queries.

    ``queries`` is an IntegrationSet or an (N, 3) array. Uncovered points are
    collected across every chunk and reported together.
    """
    pts = queries.points if isinstance(queries, IntegrationSet) else np.asarray(queries, dtype=float)
    frame = Frame.of(kernels)
    n, K = len(pts), len(kernels)
    parts, uncovered = [], []
    for s in range(0, n, chunk):
        try:
            rows, cols, vals, grads = _evaluate(pts[s : s + chunk], kernels, frame, dense)
        except RkpmError as err:
            if err.kind != "uncovered query point":
                raise
            uncovered.append(err.context["points"])
            continue
        parts.append((rows + s, cols, vals, grads))
    if uncovered:
        where = np.concatenate(uncovered)
        raise RkpmError(
            "uncovered query point",
            detail=f"{len(where)} point(s), first at {where[0].tolist()}",
            points=where,
        )
    rows = np.concatenate([p[0] for p in parts])
    cols = np.concatenate([p[1] for p in parts])
    vals = np.concatenate([p[2] for p in parts])
    grads = np.concatenate([p[3] for p in parts])

    def csr(data):
        m = sp.csr_matrix((data, (rows, cols)), shape=(n, K))
        m.sort_indices()
        return m

    return BasisTable(pts, kernels, csr(vals), tuple(csr(grads[:, s]) for s in range(3)), dense)
