"""Full-order RKPM reference: energy over nodal displacements, its FD
weight-space Hessian, full-order time stepping and basis-fitting residuals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import elasticity as el
from .basis import BasisTable
from .sampling import IntegrationSet
from .simulate import Kinematics, Scene, Simulator, full_kinematics


def deformation_gradients(d, table: BasisTable) -> np.ndarray:
    """F_i = I + d^T grad(phi)(X_i) for nodal displacements d of shape (K, 3)."""
    d = np.asarray(d, dtype=float)
    grad_u = np.stack([np.asarray(g @ d) for g in table.grads], axis=-1)  # (N, a, s)
    return np.eye(3) + grad_u


def full_energy(d, table: BasisTable, integ: IntegrationSet) -> float:
    F = deformation_gradients(d, table)
    return float(integ.weights @ el.energy_batch(F, integ.lame_lambda, integ.lame_mu))


def fd_weight_hessian(table: BasisTable, integ: IntegrationSet, step: float | None = None) -> np.ndarray:
    """H_xx + H_yy + H_zz of the full energy at d = 0 by central second differences."""
    K = table.shape[1]
    if step is None:
        lo, hi = integ.bbox
        step = 1e-5 * float(np.linalg.norm(hi - lo))
    H = np.zeros((K, K))
    d = np.zeros((K, 3))

    def E(k, sk, l, sl, axis):
        d[:] = 0.0
        d[k, axis] += sk * step
        d[l, axis] += sl * step
        return full_energy(d, table, integ)

    for axis in range(3):
        for k in range(K):
            for l in range(k, K):
                val = (E(k, 1, l, 1, axis) - E(k, 1, l, -1, axis) - E(k, -1, l, 1, axis) + E(k, -1, l, -1, axis)) / (
                    4.0 * step * step
                )
                H[k, l] += val
                if l != k:
                    H[l, k] += val
    return H


def full_quasistatic_solve(
    table: BasisTable,
    integ: IntegrationSet,
    penalties,
    h: float,
    n_steps: int,
    gravity=(0.0, 0.0, 0.0),
    ground=None,
    psd_projection: bool = True,
    tol: float = 1e-8,
    max_iter: int = 20,
):
    """Full-order implicit-Euler run over all 3K nodal displacements.

    Returns (frames, displacements, simulator) with frames of shape
    (n_steps + 1, N, 3) and displacements of shape (n_steps + 1, K, 3).
    """
    kin = full_kinematics(table)
    scene = Scene(kin, integ, list(penalties), ground, np.asarray(gravity, dtype=float), psd_projection)
    sim = Simulator(scene, h, tol, max_iter)
    states = []
    frames, _ = sim.run(n_steps, callback=states.append)
    d = np.stack([np.zeros((kin.nb, 3))] + [kin.U(s.q) for s in states])
    return frames, d, sim


@dataclass
class BasisFit:
    coefficients: np.ndarray  # (T, ndof) least-squares DoFs per frame
    residual: float  # mean squared point error / diagonal^2, same convention as trajectory MSE
    distance: float  # mean point distance / diagonal
    rank_deficient: bool


def fit_basis_residual(reference, kin: Kinematics, rest=None) -> BasisFit:
    """Least-squares fit of each reference frame by the linear map x = X + S U.

    Errors are normalized by the bounding-box diagonal of the rest shape. A
    rank-deficient S gets the minimum-norm solution and the flag set.
    """
    reference = np.asarray(reference, dtype=float)
    X = kin.points if rest is None else rest
    diag = float(np.linalg.norm(X.max(axis=0) - X.min(axis=0)))
    T, N, _ = reference.shape
    R = (reference - X).transpose(1, 0, 2).reshape(N, 3 * T)
    sol, _, rank, _ = np.linalg.lstsq(kin.S, R, rcond=None)
    fitted = sol.reshape(kin.nb, T, 3).transpose(1, 0, 2)
    d2 = np.sum((kin.S @ sol - R).reshape(N, T, 3) ** 2, axis=2)
    return BasisFit(
        fitted.reshape(T, -1),
        float(d2.mean() / diag**2),
        float(np.sqrt(d2).mean() / diag),
        bool(rank < kin.nb),
    )
