"""Integration points, material fields, kernel centers and kernel radii."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.spatial import cKDTree

from .errors import RkpmError


# ----------------------------------------------
# Shapes
# ----------------------------------------------


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def bounds(self) -> np.ndarray:
        return np.array([self.lo, self.hi], dtype=float)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds()
        return np.all((pts >= lo) & (pts <= hi), axis=1)


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float

    def bounds(self) -> np.ndarray:
        c = np.asarray(self.center, dtype=float)
        return np.array([c - self.radius, c + self.radius])

    def contains(self, pts: np.ndarray) -> np.ndarray:
        d = pts - np.asarray(self.center, dtype=float)
        return np.einsum("ij,ij->i", d, d) <= self.radius**2


@dataclass(frozen=True)
class TriangleMesh:
    """Closed triangle mesh; inside test by generalized winding number."""

    vertices: np.ndarray
    faces: np.ndarray

    def bounds(self) -> np.ndarray:
        v = np.asarray(self.vertices, dtype=float)
        return np.array([v.min(axis=0), v.max(axis=0)])

    def winding_number(self, pts: np.ndarray, chunk: int = 4096) -> np.ndarray:
        v = np.asarray(self.vertices, dtype=float)
        f = np.asarray(self.faces, dtype=int)
        out = np.empty(len(pts))
        for s in range(0, len(pts), chunk):
            q = pts[s : s + chunk, None, :]
            a = v[f[:, 0]][None] - q
            b = v[f[:, 1]][None] - q
            c = v[f[:, 2]][None] - q
            la, lb, lc = (np.linalg.norm(x, axis=2) for x in (a, b, c))
            det = np.einsum("qfi,qfi->qf", a, np.cross(b, c))
            den = (
                la * lb * lc
                + np.einsum("qfi,qfi->qf", a, b) * lc
                + np.einsum("qfi,qfi->qf", b, c) * la
                + np.einsum("qfi,qfi->qf", c, a) * lb
            )
            out[s : s + chunk] = np.arctan2(det, den).sum(axis=1) / (2.0 * np.pi)
        return out

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return np.abs(self.winding_number(pts)) > 0.5


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise RkpmError("invalid input", detail="point cloud must be N x 3")
        if not np.all(np.isfinite(pts)):
            raise RkpmError("invalid input", detail="non-finite coordinates")
        if len(pts) < 4:
            raise RkpmError("invalid input", detail="point cloud needs at least 4 points")

    def bounds(self) -> np.ndarray:
        pts = np.asarray(self.points, dtype=float)
        return np.array([pts.min(axis=0), pts.max(axis=0)])


Solid = Union[Box, Sphere, TriangleMesh]
ShapeSource = Union[Box, Sphere, TriangleMesh, PointCloud]


def load_point_cloud(path) -> PointCloud:
    """Read "x y z" lines; commas and whitespace are both accepted as separators."""
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].replace(",", " ").strip()
            if line:
                rows.append([float(t) for t in line.split()[:3]])
    return PointCloud(np.array(rows, dtype=float))


def _check_bounds(bounds: np.ndarray) -> None:
    if not np.all(np.isfinite(bounds)):
        raise RkpmError("invalid input", detail="non-finite bounding box")
    if np.any(bounds[1] - bounds[0] <= 0):
        raise RkpmError("invalid input", detail="degenerate bounding box")


# ----------------------------------------------
# Materials
# ----------------------------------------------


@dataclass(frozen=True)
class Material:
    young_modulus: float
    poisson_ratio: float
    density: float

    def __post_init__(self):
        if not self.young_modulus > 0:
            raise RkpmError("invalid material", detail="young_modulus must be > 0")
        if not 0 < self.poisson_ratio < 0.5:
            raise RkpmError("invalid material", detail="poisson_ratio must lie in (0, 0.5)")
        if not self.density > 0:
            raise RkpmError("invalid material", detail="density must be > 0")

    @property
    def lame(self) -> tuple[float, float]:
        E, nu = self.young_modulus, self.poisson_ratio
        mu = E / (2.0 * (1.0 + nu))
        lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
        return lam, mu


@dataclass(frozen=True)
class BoxRegion:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    material: Material

    def contains(self, pts):
        return Box(self.lo, self.hi).contains(pts)


@dataclass(frozen=True)
class ShellRegion:
    """Radial shell r_inner <= |X - center| < r_outer."""

    center: tuple[float, float, float]
    r_inner: float
    r_outer: float
    material: Material

    def contains(self, pts):
        r = np.linalg.norm(pts - np.asarray(self.center, dtype=float), axis=1)
        return (r >= self.r_inner) & (r < self.r_outer)


@dataclass(frozen=True)
class MaterialSpec:
    default: Material
    regions: tuple = field(default_factory=tuple)

    def evaluate(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-point (lambda, mu, rho); the last matching region wins."""
        lam0, mu0 = self.default.lame
        n = len(pts)
        lam = np.full(n, lam0)
        mu = np.full(n, mu0)
        rho = np.full(n, self.default.density)
        for region in self.regions:
            mask = region.contains(pts)
            rl, rm = region.material.lame
            lam[mask] = rl
            mu[mask] = rm
            rho[mask] = region.material.density
        return lam, mu, rho


# ----------------------------------------------
# Sets
# ----------------------------------------------


@dataclass
class IntegrationSet:
    points: np.ndarray
    weights: np.ndarray
    lame_lambda: np.ndarray
    lame_mu: np.ndarray
    density: np.ndarray

    def __len__(self):
        return len(self.points)

    @property
    def volume(self) -> float:
        return float(self.weights.sum())

    @property
    def bbox(self) -> np.ndarray:
        return np.array([self.points.min(axis=0), self.points.max(axis=0)])

    def with_material(self, lam, mu, rho=None) -> "IntegrationSet":
        return IntegrationSet(
            self.points,
            self.weights,
            np.broadcast_to(np.asarray(lam, dtype=float), self.weights.shape).copy(),
            np.broadcast_to(np.asarray(mu, dtype=float), self.weights.shape).copy(),
            self.density if rho is None else np.broadcast_to(rho, self.weights.shape).copy(),
        )


@dataclass
class KernelSet:
    centers: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float)
        self.radii = np.asarray(self.radii, dtype=float)
        if len(self.centers) != len(self.radii):
            raise RkpmError("contract violation", detail="centers and radii differ in length")
        if np.any(self.radii <= 0):
            raise RkpmError("contract violation", detail="kernel radii must be positive")

    def __len__(self):
        return len(self.centers)

    def permuted(self, perm: Sequence[int]) -> "KernelSet":
        perm = np.asarray(perm)
        return KernelSet(self.centers[perm], self.radii[perm])


# ----------------------------------------------
# Sampling
# ----------------------------------------------


def _voxel_occupancy(shape: ShapeSource, res: int = 32) -> float:
    lo, hi = shape.bounds()
    if isinstance(shape, PointCloud):
        pts = np.asarray(shape.points, dtype=float)
        idx = np.floor((pts - lo) / (hi - lo) * res).astype(int).clip(0, res - 1)
        flat = np.ravel_multi_index(idx.T, (res, res, res))
        return len(np.unique(flat)) / res**3
    axes = [lo[a] + (np.arange(res) + 0.5) * (hi[a] - lo[a]) / res for a in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    return float(shape.contains(grid).mean())


def sample_grid(
    shape: ShapeSource,
    target_count: int,
    material: MaterialSpec | None = None,
) -> IntegrationSet:
    """Grid-sample the shape interior (or pass a point cloud through).

    Cells are near-cubic with size chosen so that roughly ``target_count`` cell
    centers land inside the shape.
    """
    if target_count < 8:
        raise RkpmError("invalid input", detail="target_count must be >= 8")
    bounds = shape.bounds()
    _check_bounds(bounds)
    lo, hi = bounds
    extent = hi - lo
    if material is None:
        material = MaterialSpec(Material(5e6, 0.45, 1e3))

    if isinstance(shape, PointCloud):
        pts = np.asarray(shape.points, dtype=float).copy()
        occ = _voxel_occupancy(shape)
        w = np.full(len(pts), float(np.prod(extent)) * occ / len(pts))
    else:
        occ = _voxel_occupancy(shape)
        if occ <= 0:
            raise RkpmError("degenerate shape", detail="no interior points found")
        h = (float(np.prod(extent)) * occ / target_count) ** (1.0 / 3.0)
        n = np.maximum(1, np.round(extent / h)).astype(int)
        cell = extent / n
        axes = [lo[a] + (np.arange(n[a]) + 0.5) * cell[a] for a in range(3)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        pts = grid[shape.contains(grid)]
        w = np.full(len(pts), float(np.prod(cell)))
    if len(pts) == 0:
        raise RkpmError("degenerate shape", detail="no interior points found")
    lam, mu, rho = material.evaluate(pts)
    return IntegrationSet(pts, w, lam, mu, rho)


def farthest_point_sampling(points: np.ndarray, count: int) -> np.ndarray:
    """Greedy max-min subset, seeded at the point nearest the centroid."""
    points = np.asarray(points, dtype=float)
    n = len(points)
    if count < 1:
        raise RkpmError("invalid input", detail="count must be >= 1")
    if count > n:
        raise RkpmError("insufficient points", detail=f"requested {count} of {n}")
    first = int(np.argmin(np.sum((points - points.mean(axis=0)) ** 2, axis=1)))
    picked = np.empty(count, dtype=int)
    picked[0] = first
    dist = np.sum((points - points[first]) ** 2, axis=1)
    for k in range(1, count):
        nxt = int(np.argmax(dist))
        picked[k] = nxt
        np.minimum(dist, np.sum((points - points[nxt]) ** 2, axis=1), out=dist)
    return picked


def kernel_radii(centers: np.ndarray) -> np.ndarray:
    """Distance from each center to its second-nearest other center."""
    centers = np.asarray(centers, dtype=float)
    if len(centers) < 3:
        raise RkpmError("invalid input", detail="need at least 3 centers")
    dist, _ = cKDTree(centers).query(centers, k=3)
    if np.any(dist[:, 1] <= 0):
        raise RkpmError("degenerate centers", detail="duplicate kernel centers")
    return dist[:, 2].copy()


def build_kernels(integ: IntegrationSet, count: int) -> KernelSet:
    idx = farthest_point_sampling(integ.points, count)
    centers = integ.points[idx]
    return KernelSet(centers, kernel_radii(centers))

