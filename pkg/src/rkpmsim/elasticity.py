"""Stable Neo-Hookean energy density and its derivatives.

Matrices act on the row-major flattening vec(F) = (F11, F12, F13, F21, ..., F33).
The batched helpers (``*_batch``) are polynomial in F and stay defined for
singular or inverted F, which a Newton line search can visit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RkpmError

_LEVI = np.zeros((3, 3, 3))
_LEVI[0, 1, 2] = _LEVI[1, 2, 0] = _LEVI[2, 0, 1] = 1.0
_LEVI[0, 2, 1] = _LEVI[2, 1, 0] = _LEVI[1, 0, 2] = -1.0

# vec(F^T) = K vec(F)
K_TRANSPOSE = np.zeros((9, 9))
for _a in range(3):
    for _b in range(3):
        K_TRANSPOSE[3 * _a + _b, 3 * _b + _a] = 1.0
# vec(I) vec(I)^T
K_TRACE = np.outer(np.eye(3).ravel(), np.eye(3).ravel())


@dataclass(frozen=True)
class LameParams:
    lam: float
    mu: float

    @property
    def lambda_bar(self) -> float:
        return self.lam + self.mu

    @property
    def mu_bar(self) -> float:
        return self.mu

    @property
    def gamma(self) -> float:
        return 1.0 + self.mu_bar / self.lambda_bar

    @property
    def e0(self) -> float:
        # Psi(I) = 0: lambda_bar (1 - gamma)^2 + 3 mu_bar = mu_bar^2/lambda_bar + 3 mu_bar
        return self.mu_bar**2 / self.lambda_bar + 3.0 * self.mu_bar


def lame_from_engineering(E: float, nu: float) -> LameParams:
    if not E > 0:
        raise RkpmError("invalid material", detail="young_modulus must be > 0")
    if nu >= 0.5:
        raise RkpmError("incompressible limit unsupported", detail=f"poisson_ratio={nu}")
    if nu <= -1.0:
        raise RkpmError("invalid material", detail=f"poisson_ratio={nu}")
    mu = E / (2.0 * (1.0 + nu))
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    return LameParams(lam, mu)


def energy_density(F, params: LameParams) -> float:
    """Energy density; exactly zero at F = I (evaluated via the G = F - I form)."""
    F = np.asarray(F, dtype=float).reshape(1, 3, 3)
    return float(energy_batch(F, np.array([params.lam]), np.array([params.mu]))[0])


def _require_invertible(F):
    F = np.asarray(F, dtype=float)
    J = np.linalg.det(F)
    if not np.isfinite(J) or abs(J) < 1e-14 * max(1.0, np.abs(F).max() ** 3):
        raise RkpmError("non-invertible deformation", detail=f"det F = {J}")
    return F, J


def pk1_stress(F, params: LameParams) -> np.ndarray:
    """First Piola-Kirchhoff stress mu F + (lambda + mu)(J - gamma) J F^{-T}."""
    F, J = _require_invertible(F)
    cof = J * np.linalg.inv(F).T
    # lambda_bar (J - gamma) = lambda_bar (J - 1) - mu_bar, exact stress-free rest
    return params.mu_bar * (F - cof) + params.lambda_bar * (J - 1.0) * cof


def hessian_wrt_F(F, params: LameParams) -> np.ndarray:
    """9x9 Hessian of the energy density in inverse-based closed form."""
    F, J = _require_invertible(F)
    Finv = np.linalg.inv(F)
    g = vec(J * Finv.T)
    lb = params.lambda_bar
    # d(F^{-T})_{ab} / dF_{cd} = -Finv_{bc} Finv_{da}
    dFinvT = -np.einsum("bc,da->abcd", Finv, Finv).reshape(9, 9)
    return (
        params.mu_bar * np.eye(9)
        + lb * (2.0 * J - params.gamma) * np.outer(g, vec(Finv.T))
        + lb * (J - params.gamma) * J * dFinvT
    )


def rest_hessian(params: LameParams) -> np.ndarray:
    """Hessian at F = I: mu I + (lambda+mu)(2-gamma) K1 + (lambda+mu)(gamma-1) K."""
    lb = params.lambda_bar
    return params.mu_bar * np.eye(9) + lb * (2.0 - params.gamma) * K_TRACE + lb * (params.gamma - 1.0) * K_TRANSPOSE


def vec(A) -> np.ndarray:
    return np.asarray(A, dtype=float).reshape(-1)


def psd_project(H: np.ndarray) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    scale = max(1.0, np.abs(H).max())
    if not np.allclose(H, np.swapaxes(H, -1, -2), rtol=0, atol=1e-10 * scale):
        raise RkpmError("contract violation", detail="psd_project needs a symmetric matrix")
    return psd_project_batch(H)


def psd_project_batch(H: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (H + np.swapaxes(H, -1, -2)))
    if np.all(w >= 0):
        return H
    w = np.maximum(w, 0.0)
    return np.einsum("...ik,...k,...jk->...ij", V, w, V)


def cauchy_stress(F, params: LameParams) -> tuple[np.ndarray, np.ndarray]:
    """Cauchy stress P F^T / det F and its principal values, ascending."""
    F = np.asarray(F, dtype=float)
    J = np.linalg.det(F)
    if not J > 0:
        raise RkpmError("inverted element", detail=f"det F = {J}")
    sigma = pk1_stress(F, params) @ F.T / J
    sigma = 0.5 * (sigma + sigma.T)
    return sigma, np.linalg.eigvalsh(sigma)


# ----------------------------------------------
# Batched, per-point material
# ----------------------------------------------


def _cofactor(F):
    # cof(F) = J F^{-T}: each row is the cross product of the other two rows of F
    return np.stack(
        [np.cross(F[:, 1], F[:, 2]), np.cross(F[:, 2], F[:, 0]), np.cross(F[:, 0], F[:, 1])], axis=1
    )


# d^2 J / dF_ab dF_cd = eps_ace eps_bdf F_ef, as an (81, 9) map applied to vec(F)
_D2J = np.einsum("ace,bdf->abcdef", _LEVI, _LEVI).reshape(81, 9)


def _det_minus_one(G):
    """det(I + G) - 1 without cancellation for small G."""
    tr = np.trace(G, axis1=1, axis2=2)
    tr2 = np.einsum("nij,nji->n", G, G)
    return tr + 0.5 * (tr * tr - tr2) + np.linalg.det(G)


def material_terms(lam, mu):
    """(lambda_bar, mu_bar, gamma, e0) arrays for per-point Lame parameters."""
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    lb = lam + mu
    gamma = 1.0 + mu / lb
    e0 = mu**2 / lb + 3.0 * mu
    return lb, mu, gamma, e0


def energy_batch(F, lam, mu) -> np.ndarray:
    """Energy density written in G = F - I so the E0 offset cancels analytically.

    (J - gamma)^2 - (1 - gamma)^2 = (J - 1)(J + 1 - 2 gamma) and
    tr(F^T F) - 3 = |G|^2 + 2 tr(G).
    """
    lb, mb, gamma, _ = material_terms(lam, mu)
    G = F - np.eye(3)
    Jm1 = _det_minus_one(G)
    stretch = np.einsum("nij,nij->n", G, G) + 2.0 * np.trace(G, axis1=1, axis2=2)
    return 0.5 * (lb * Jm1 * (Jm1 + 2.0 - 2.0 * gamma) + mb * stretch)


def pk1_batch(F, lam, mu) -> np.ndarray:
    lb, mb, gamma, _ = material_terms(lam, mu)
    J = np.linalg.det(F)
    cof = _cofactor(F)
    return mb[:, None, None] * (F - cof) + (lb * (J - 1.0))[:, None, None] * cof


def hessian_batch(F, lam, mu) -> np.ndarray:
    """(n, 9, 9) Hessians; d^2 J / dF^2 is linear in F via the Levi-Civita symbol."""
    lb, mb, gamma, _ = material_terms(lam, mu)
    n = len(F)
    J = np.linalg.det(F)
    cof = _cofactor(F).reshape(n, 9)
    d2J = (F.reshape(n, 9) @ _D2J.T).reshape(n, 9, 9)
    H = lb[:, None, None] * np.einsum("ni,nj->nij", cof, cof)
    H += (lb * (J - gamma))[:, None, None] * d2J
    H += mb[:, None, None] * np.eye(9)
    return H
