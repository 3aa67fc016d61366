"""Weight-space Hessian, RKPM mass matrix and skinning eigenmodes."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .basis import BasisTable, shape_values
from .errors import RkpmError
from .trajectory import atomic_write
from .sampling import IntegrationSet

MASS_SHIFT = 1e-10
MODES_MAGIC = b"RKPM"
MODES_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


@dataclass
class WeightSpaceHessian:
    matrix: np.ndarray
    n_points: int
    cutoff: bool


@dataclass
class SkinningModes:
    """Nodal coefficients of the weight fields; column 0 is the constant mode."""

    coefficients: np.ndarray  # (K, m + 1)
    eigenvalues: np.ndarray  # (m + 1,)
    constant_excluded: bool = True
    info: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.coefficients.shape[1] - 1

    @property
    def constant_weight(self) -> float:
        """Value of the constant weight field W^0 (partition of unity makes it c_k^0)."""
        return float(self.coefficients[:, 0].mean())

    def truncated(self, m: int) -> "SkinningModes":
        if m > self.m:
            raise RkpmError("contract violation", detail=f"only {self.m} modes available")
        return SkinningModes(self.coefficients[:, : m + 1].copy(), self.eigenvalues[: m + 1].copy())


def _quadrature_gram(A, B, w):
    """A^T diag(w) B for sparse A, B, returned dense."""
    n, K = A.shape
    if A.nnz > 0.05 * n * K:
        # dense BLAS beats sparse-sparse products at this fill
        Ad = A.toarray()
        Bd = Ad if B is A else B.toarray()
        return (Ad * w[:, None]).T @ Bd
    return np.asarray((A.T.multiply(w) @ B).todense())


def assemble_weight_hessian(table: BasisTable, integ: IntegrationSet) -> WeightSpaceHessian:
    """Sum over points of v_i (lambda_i + 4 mu_i) grad(phi) grad(phi)^T."""
    w = integ.weights * (integ.lame_lambda + 4.0 * integ.lame_mu)
    H = sum(_quadrature_gram(g, g, w) for g in table.grads)
    H = 0.5 * (H + H.T)
    return WeightSpaceHessian(H, len(integ), not table.dense)


def laplace_matrix(table: BasisTable, integ: IntegrationSet) -> np.ndarray:
    """Weak-form Laplace matrix: quadrature of grad(phi_i) . grad(phi_j)."""
    L = sum(_quadrature_gram(g, g, integ.weights) for g in table.grads)
    return 0.5 * (L + L.T)


def assemble_mass_matrix(table: BasisTable, integ: IntegrationSet) -> np.ndarray:
    Mm = _quadrature_gram(table.values, table.values, integ.weights)
    return 0.5 * (Mm + Mm.T)


def _m_orthonormalize(c, Mm):
    c = c.copy()
    for j in range(c.shape[1]):
        for _ in range(2):
            if j:
                proj = c[:, :j].T @ (Mm @ c[:, j])
                c[:, j] -= c[:, :j] @ proj
        norm = np.sqrt(c[:, j] @ Mm @ c[:, j])
        if not norm > 0:
            raise RkpmError("basis defect", detail=f"mode {j} has zero mass norm")
        c[:, j] /= norm
    return c


def solve_modes(H, Mm: np.ndarray, m: int) -> SkinningModes:
    """Smallest m + 1 generalized eigenpairs of (H_w, M), M-orthonormalized."""
    H = H.matrix if isinstance(H, WeightSpaceHessian) else np.asarray(H, dtype=float)
    K = H.shape[0]
    if H.shape != (K, K) or Mm.shape != (K, K):
        raise RkpmError("contract violation", detail="H_w and M must both be K x K")
    if m < 0 or m + 1 > K:
        raise RkpmError("contract violation", detail=f"need m + 1 <= K (m={m}, K={K})")
    Mreg = Mm + MASS_SHIFT * np.trace(Mm) / K * np.eye(K)
    try:
        w, c = scipy.linalg.eigh(H, Mreg, subset_by_index=[0, m])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise RkpmError("eigensolve failed", detail=str(exc)) from exc

    c0 = c[:, 0]
    rel_var = np.var(c0) / max(np.mean(c0) ** 2, np.finfo(float).tiny)
    if not rel_var < 1e-6:
        raise RkpmError("basis defect", detail=f"mode 0 is not constant (relative variance {rel_var:.3e})")
    c[:, 0] = 1.0
    c = _m_orthonormalize(c, Mm)
    for j in range(1, c.shape[1]):
        # deterministic sign: largest-magnitude coefficient positive
        k = np.argmax(np.abs(c[:, j]))
        if c[k, j] < 0:
            c[:, j] = -c[:, j]
    eig = np.einsum("kj,kl,lj->j", c, H, c)
    resid = np.linalg.norm(H @ c - Mm @ c * eig, axis=0)
    return SkinningModes(c, eig, info={"solver_eigenvalues": w, "residuals": resid, "mode0_rel_var": rel_var})


def weight_field(modes: SkinningModes, table: BasisTable) -> np.ndarray:
    """(N, m + 1) weight values at the table's query points."""
    return np.asarray(table.values @ modes.coefficients)


def weight_gradients(modes: SkinningModes, table: BasisTable) -> np.ndarray:
    """(N, 3, m + 1) spatial gradients of the weight fields."""
    return np.stack([np.asarray(g @ modes.coefficients) for g in table.grads], axis=1)


def weight_field_at(modes: SkinningModes, X, kernels) -> np.ndarray:
    return shape_values(X, kernels) @ modes.coefficients


# ----------------------------------------------
# Binary container
# ----------------------------------------------


def write_modes(path, modes: SkinningModes) -> None:
    c = np.ascontiguousarray(modes.coefficients, dtype="<f8")
    K, cols = c.shape
    payload = (
        _HEADER.pack(MODES_MAGIC, MODES_VERSION, K, cols - 1)
        + c.tobytes(order="C")
        + np.ascontiguousarray(modes.eigenvalues, dtype="<f8").tobytes()
    )
    atomic_write(path, payload)


def read_modes(path) -> SkinningModes:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise RkpmError("invalid modes file", detail="truncated header")
    magic, version, K, m = _HEADER.unpack_from(raw)
    if magic != MODES_MAGIC or version != MODES_VERSION:
        raise RkpmError("invalid modes file", detail=f"magic={magic!r} version={version}")
    n = K * (m + 1)
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if len(body) != n + m + 1:
        raise RkpmError("invalid modes file", detail="payload size mismatch")
    return SkinningModes(body[:n].reshape(K, m + 1).copy(), body[n:].copy())
