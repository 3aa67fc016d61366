"""Implicit-Euler time stepping of linearly parameterized deformations.

Both the reduced skinning map and the full-order RKPM map are affine in their
degrees of freedom. With the DoFs arranged as a matrix U of shape (nb, 3),
every point satisfies

    x_i = X_i + S_i U,        F_i = I + (D_i U)^T,

with S_i in R^nb and D_i in R^{3 x nb}. For skinning, the basis index runs over
(mode j, homogeneous coordinate b) and U[(j, b), a] = Z_j[a, b]; for full order
it runs over kernels and U = d. The objective and Newton solver below only see
S and D.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import elasticity as el
from .basis import BasisTable
from .errors import RkpmError
from .modes import SkinningModes, weight_field, weight_gradients
from .sampling import Box, IntegrationSet

log = logging.getLogger(__name__)

WOLFE_C1 = 1e-4
WOLFE_C2 = 0.9
MAX_HALVINGS = 30
# relative energy change treated as round-off by the sufficient-decrease test
ENERGY_ROUNDOFF = 1e-13


# ----------------------------------------------
# Kinematics
# ----------------------------------------------


@dataclass
class Kinematics:
    points: np.ndarray  # (N, 3)
    S: np.ndarray  # (N, nb)
    D: np.ndarray  # (N, 3, nb)
    reduced: bool

    @property
    def nb(self) -> int:
        return self.S.shape[1]

    @property
    def ndof(self) -> int:
        return 3 * self.nb

    def U(self, q) -> np.ndarray:
        return np.asarray(q, dtype=float).reshape(self.nb, 3)

    def positions(self, q) -> np.ndarray:
        return self.points + self.S @ self.U(q)

    def deformation_gradients(self, q) -> np.ndarray:
        return np.eye(3) + np.transpose(self.D @ self.U(q), (0, 2, 1))

    def position_jacobian(self) -> np.ndarray:
        """(N, 3, ndof) matrices B_i with x_i = X_i + B_i q."""
        N, nb = self.S.shape
        B = np.zeros((N, 3, nb, 3))
        for a in range(3):
            B[:, a, :, a] = self.S
        return B.reshape(N, 3, 3 * nb)

    def gradient_jacobian(self) -> np.ndarray:
        """(N, 9, ndof) matrices G_i with vec(F_i - I) = G_i q (row-major vec)."""
        N, _, nb = self.D.shape
        G = np.zeros((N, 3, 3, nb, 3))
        for a in range(3):
            G[:, a, :, :, a] = self.D
        return G.reshape(N, 9, 3 * nb)

    # skinning DoF layout: z = (Z_0, Z_1, ...) each 3x4 row-major
    def q_from_z(self, z) -> np.ndarray:
        self._need_reduced()
        Z = np.asarray(z, dtype=float).reshape(-1, 3, 4)
        return np.transpose(Z, (0, 2, 1)).reshape(-1)

    def z_from_q(self, q) -> np.ndarray:
        self._need_reduced()
        U = self.U(q).reshape(-1, 4, 3)
        return np.transpose(U, (0, 2, 1)).reshape(-1)

    def _need_reduced(self):
        if not self.reduced:
            raise RkpmError("contract violation", detail="z layout only exists for skinning kinematics")


def build_kinematics(modes: SkinningModes, table: BasisTable, integ: IntegrationSet | None = None) -> Kinematics:
    """Skinning kinematics x = X + sum_j W^j(X) Z_j [X; 1] at the table's points."""
    if modes.coefficients.shape[0] != table.shape[1]:
        raise RkpmError("contract violation", detail="modes and basis table use different kernels")
    X = table.points if integ is None else integ.points
    if len(X) != table.shape[0]:
        raise RkpmError("contract violation", detail="integration set does not match the basis table")
    W = weight_field(modes, table)  # (N, m+1)
    dW = weight_gradients(modes, table)  # (N, 3, m+1)
    N, n_modes = W.shape
    Xbar = np.hstack([X, np.ones((N, 1))])
    S = (W[:, :, None] * Xbar[:, None, :]).reshape(N, 4 * n_modes)
    D = dW[:, :, :, None] * Xbar[:, None, None, :]
    for c in range(3):
        D[:, c, :, c] += W
    return Kinematics(np.array(X, dtype=float), S, D.reshape(N, 3, 4 * n_modes), reduced=True)


def full_kinematics(table: BasisTable) -> Kinematics:
    """Full-order RKPM kinematics with nodal displacements d (K x 3) as DoFs."""
    return Kinematics(
        np.array(table.points, dtype=float),
        table.dense_values(),
        np.transpose(table.dense_gradients(), (0, 2, 1)),
        reduced=False,
    )


# ----------------------------------------------
# Boundary conditions
# ----------------------------------------------


def select_box(points: np.ndarray, lo, hi) -> np.ndarray:
    idx = np.flatnonzero(Box(tuple(lo), tuple(hi)).contains(points))
    if len(idx) == 0:
        raise RkpmError("empty selector", detail=f"box {list(lo)}..{list(hi)} selects no points")
    return idx


@dataclass
class PointPenalty:
    """Quadratic penalty pulling selected points to a time-dependent target."""

    indices: np.ndarray
    rest: np.ndarray
    stiffness: float
    kind: str = "fix_region"
    axis_point: np.ndarray | None = None
    axis_dir: np.ndarray | None = None
    total_angle: float = 0.0
    ramp_time: float = 1.0
    velocity: np.ndarray | None = None
    free_axis: bool = False  # twist only: leave motion along the axis unpenalized

    @property
    def projector(self) -> np.ndarray | None:
        """3x3 projector onto the penalized directions, None when all three are."""
        if not self.free_axis:
            return None
        k = np.asarray(self.axis_dir, dtype=float)
        k = k / np.linalg.norm(k)
        return np.eye(3) - np.outer(k, k)

    def target(self, t: float) -> np.ndarray:
        if self.kind == "fix_region":
            return self.rest
        if self.kind == "pull_points":
            return self.rest + t * np.asarray(self.velocity, dtype=float)
        if self.kind == "twist_handle":
            angle = self.total_angle * min(t / self.ramp_time, 1.0)
            k = np.asarray(self.axis_dir, dtype=float)
            k = k / np.linalg.norm(k)
            Kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
            R = np.eye(3) + np.sin(angle) * Kx + (1 - np.cos(angle)) * Kx @ Kx
            return (self.rest - self.axis_point) @ R.T + self.axis_point
        raise RkpmError("invalid boundary condition", detail=self.kind)


def fix_region(points, indices, stiffness) -> PointPenalty:
    idx = np.asarray(indices)
    return PointPenalty(idx, points[idx].copy(), stiffness)


def twist_handle(
    points, indices, stiffness, axis_point, axis_dir, total_angle, ramp_time, free_axis: bool = False
) -> PointPenalty:
    idx = np.asarray(indices)
    return PointPenalty(
        idx, points[idx].copy(), stiffness, "twist_handle",
        np.asarray(axis_point, dtype=float), np.asarray(axis_dir, dtype=float), float(total_angle), float(ramp_time),
        free_axis=free_axis,
    )


def pull_points(points, indices, stiffness, velocity) -> PointPenalty:
    idx = np.asarray(indices)
    return PointPenalty(idx, points[idx].copy(), stiffness, "pull_points", velocity=np.asarray(velocity, dtype=float))


@dataclass
class GroundPlane:
    """Frictionless half-space n . x >= offset, penalized per unit volume."""

    normal: np.ndarray
    offset: float
    stiffness: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        self.normal = n / np.linalg.norm(n)


def default_penalty(integ: IntegrationSet) -> float:
    return 1e4 * float(np.max(integ.lame_lambda + 2 * integ.lame_mu)) * float(np.mean(integ.weights))


# ----------------------------------------------
# Incremental potential
# ----------------------------------------------


@dataclass
class State:
    q: np.ndarray
    qdot: np.ndarray
    t: float = 0.0


@dataclass
class Scene:
    """Everything a time step needs besides the state."""

    kin: Kinematics
    integ: IntegrationSet
    penalties: list = field(default_factory=list)
    ground: GroundPlane | None = None
    gravity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    psd_projection: bool = True

    def __post_init__(self):
        self.gravity = np.asarray(self.gravity, dtype=float)
        kin, integ = self.kin, self.integ
        self.pmass = integ.density * integ.weights
        self.mass_matrix = kin.S.T @ (kin.S * self.pmass[:, None])
        self.gravity_load = np.outer(kin.S.T @ self.pmass, self.gravity)
        self.penalty_gram = [kin.S[p.indices].T @ kin.S[p.indices] for p in self.penalties]

    @property
    def volume(self) -> float:
        return self.integ.volume

    def gradient_scale(self) -> float:
        """mu_bar * volume / bbox diagonal, the unit of the convergence test."""
        lo, hi = self.integ.bbox
        return float(np.max(self.integ.lame_mu)) * self.volume / float(np.linalg.norm(hi - lo))


class IncrementalPotential:
    """E(q) = inertia + elastic + external energy for one implicit-Euler step."""

    def __init__(self, scene: Scene, state: State, h: float):
        if not h > 0:
            raise RkpmError("contract violation", detail="time step must be positive")
        self.scene = scene
        self.h = h
        self.t_next = state.t + h
        self.pred = scene.kin.U(state.q + h * state.qdot)
        self.targets = [p.target(self.t_next) for p in scene.penalties]

    def elastic(self, q, need_hessian=True, psd=None):
        sc = self.scene
        kin, integ = sc.kin, sc.integ
        if not np.all(np.isfinite(q)):
            raise RkpmError("diverged state", detail=f"t={self.t_next}")
        F = kin.deformation_gradients(q)
        v = integ.weights
        lam, mu = integ.lame_lambda, integ.lame_mu
        E = float(v @ el.energy_batch(F, lam, mu))
        P = el.pk1_batch(F, lam, mu)
        g = np.tensordot(P * v[:, None, None], kin.D, axes=([0, 2], [0, 1])).T
        if not need_hessian:
            return E, g.reshape(-1), None
        A = el.hessian_batch(F, lam, mu)
        if sc.psd_projection if psd is None else psd:
            A = el.psd_project_batch(A)
        A = (A * v[:, None, None]).reshape(-1, 3, 3, 3, 3)  # (n, a, c, e, f)
        N, _, nb = kin.D.shape
        Dflat = kin.D.reshape(N * 3, nb)
        H = np.zeros((nb, 3, nb, 3))
        for a in range(3):
            for e in range(a, 3):
                Y = (A[:, a, :, e, :] @ kin.D).reshape(N * 3, nb)
                Hae = Dflat.T @ Y
                H[:, a, :, e] = Hae
                if e != a:
                    H[:, e, :, a] = Hae.T
        return E, g.reshape(-1), H.reshape(3 * nb, 3 * nb)

    def __call__(self, q, need_hessian=True, psd=None):
        sc = self.scene
        kin = sc.kin
        if not np.all(np.isfinite(q)):
            raise RkpmError("diverged state", detail=f"t={self.t_next}")
        h2 = self.h**2
        U = kin.U(q)
        dU = U - self.pred
        MdU = sc.mass_matrix @ dU
        E = 0.5 / h2 * float(np.sum(dU * MdU))
        g = MdU / h2
        # gravity potential, offset so it vanishes at the predicted state
        E -= float(np.sum(sc.gravity_load * dU))
        g = g - sc.gravity_load
        Hext = np.zeros((kin.nb, kin.nb)) if need_hessian else None
        if need_hessian:
            Hext += sc.mass_matrix / h2
        Hproj = []
        for pen, gram, tgt in zip(sc.penalties, sc.penalty_gram, self.targets):
            r = kin.points[pen.indices] + kin.S[pen.indices] @ U - tgt
            Pr = pen.projector
            if Pr is not None:
                r = r @ Pr
            E += 0.5 * pen.stiffness * float(np.sum(r * r))
            g = g + pen.stiffness * kin.S[pen.indices].T @ r
            if need_hessian:
                if Pr is None:
                    Hext += pen.stiffness * gram
                else:
                    Hproj.append(np.kron(pen.stiffness * gram, Pr))
        Hg = None
        if sc.ground is not None:
            x = kin.points + kin.S @ U
            gap = x @ sc.ground.normal - sc.ground.offset
            act = gap < 0
            if np.any(act):
                kv = sc.ground.stiffness * sc.integ.weights[act]
                E += 0.5 * float(kv @ gap[act] ** 2)
                Sa = kin.S[act]
                g = g + np.outer(Sa.T @ (kv * gap[act]), sc.ground.normal)
                if need_hessian:
                    Hg = np.kron(Sa.T @ (Sa * kv[:, None]), np.outer(sc.ground.normal, sc.ground.normal))
        Ee, ge, He = self.elastic(q, need_hessian, psd)
        E += Ee
        grad = g.reshape(-1) + ge
        if not np.isfinite(E) or not np.all(np.isfinite(grad)):
            raise RkpmError("diverged state", detail=f"t={self.t_next}")
        if not need_hessian:
            return E, grad, None
        H = np.kron(Hext, np.eye(3)) + He
        for Hp in Hproj:
            H += Hp
        if Hg is not None:
            H += Hg
        return E, grad, H


# ----------------------------------------------
# Newton
# ----------------------------------------------


@dataclass
class NewtonReport:
    iterations: int = 0
    converged: bool = False
    stalled: bool = False
    grad_norm: float = np.inf
    energies: list = field(default_factory=list)
    curvature_ok: list = field(default_factory=list)


def _solve(H, g):
    try:
        c = scipy.linalg.cho_factor(H, check_finite=False)
        return -scipy.linalg.cho_solve(c, g, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    try:
        # indefinite or rank-deficient reduced systems land here on purpose
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            return -scipy.linalg.solve(H, g, assume_a="sym", check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        n = len(g)
        ridge = 1e-8 * np.trace(H) / n
        return -scipy.linalg.solve(H + ridge * np.eye(n), g, assume_a="sym", check_finite=False)


def newton_solve(objective, q0, tol: float = 1e-8, scale: float = 1.0, max_iter: int = 20):
    """Newton's method with a backtracking Wolfe line search.

    Stops once ||g||_inf < tol * scale or after ``max_iter`` updates. Returns the
    final iterate and a NewtonReport; a failed line search returns the best
    point so far with ``stalled`` set.
    """
    q = np.array(q0, dtype=float)
    rep = NewtonReport()
    E, g, H = objective(q)
    rep.energies.append(E)
    for it in range(max_iter):
        rep.grad_norm = float(np.abs(g).max())
        if rep.grad_norm < tol * scale:
            rep.converged = True
            break
        p = _solve(H, g)
        slope = float(g @ p)
        if not slope < 0:
            n = len(g)
            p = _solve(H + 1e-8 * np.trace(H) / n * np.eye(n) + np.abs(np.diag(H)).max() * 1e-6 * np.eye(n), g)
            slope = float(g @ p)
            if not slope < 0:
                p, slope = -g, -float(g @ g)
        alpha = 1.0
        for _ in range(MAX_HALVINGS):
            qn = q + alpha * p
            En, gn, _ = objective(qn, need_hessian=False)
            if En <= E + WOLFE_C1 * alpha * slope + ENERGY_ROUNDOFF * (abs(E) + abs(En)):
                break
            alpha *= 0.5
        else:
            rep.stalled = True
            log.debug("line search stalled at iteration %d (|g|=%.3e)", it, rep.grad_norm)
            break
        rep.curvature_ok.append(bool(gn @ p >= WOLFE_C2 * slope))
        q = qn
        E, g, H = objective(q)
        rep.energies.append(E)
        rep.iterations = it + 1
    else:
        rep.grad_norm = float(np.abs(g).max())
        rep.converged = rep.grad_norm < tol * scale
    return q, rep


class Simulator:
    def __init__(self, scene: Scene, h: float, tol: float = 1e-8, max_iter: int = 20):
        self.scene = scene
        self.h = h
        self.tol = tol
        self.max_iter = max_iter
        self.scale = scene.gradient_scale()
        self.reports: list[NewtonReport] = []

    def rest_state(self) -> State:
        n = self.scene.kin.ndof
        return State(np.zeros(n), np.zeros(n), 0.0)

    def step(self, state: State) -> State:
        obj = IncrementalPotential(self.scene, state, self.h)
        q, rep = newton_solve(obj, state.q, self.tol, self.scale, self.max_iter)
        self.reports.append(rep)
        return State(q, (q - state.q) / self.h, state.t + self.h)

    def run(self, n_steps: int, state: State | None = None, callback=None):
        """Advance ``n_steps``; returns (frames, final state) with frame 0 the start."""
        state = self.rest_state() if state is None else state
        frames = [self.scene.kin.positions(state.q)]
        for _ in range(n_steps):
            state = self.step(state)
            frames.append(self.scene.kin.positions(state.q))
            if callback is not None:
                callback(state)
        return np.stack(frames), state


def evaluate_stress_field(q, kin: Kinematics, integ: IntegrationSet, clamp: float | None = 1e6):
    """Principal Cauchy stresses per point (ascending) and a mask of inverted points."""
    F = kin.deformation_gradients(q)
    J = np.linalg.det(F)
    inverted = ~(J > 0)
    P = el.pk1_batch(F, integ.lame_lambda, integ.lame_mu)
    Jsafe = np.where(inverted, 1.0, J)
    sigma = P @ np.transpose(F, (0, 2, 1)) / Jsafe[:, None, None]
    sigma = 0.5 * (sigma + np.transpose(sigma, (0, 2, 1)))
    principal = np.linalg.eigvalsh(sigma)
    principal[inverted] = np.nan
    if clamp is not None:
        principal = np.clip(principal, -clamp, clamp)
    return principal, inverted
