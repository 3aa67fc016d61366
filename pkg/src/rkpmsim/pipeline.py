"""Scene config -> sampling -> basis -> modes -> simulation."""

from __future__ import annotations

import contextlib
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import sampling as smp
from .basis import BasisTable, build_basis_table
from .config import SceneConfig
from .errors import RkpmError
from .modes import SkinningModes, assemble_mass_matrix, assemble_weight_hessian, solve_modes
from .oracle import full_quasistatic_solve
from .simulate import (
    GroundPlane,
    Scene,
    Simulator,
    build_kinematics,
    default_penalty,
    fix_region,
    pull_points,
    twist_handle,
)
from .trajectory import Trajectory

log = logging.getLogger(__name__)


@contextlib.contextmanager
def stage(name: str):
    """Label any RkpmError raised inside the block with the pipeline stage."""
    try:
        yield
    except RkpmError as err:
        if not getattr(err, "stage", None):
            err.stage = name
        raise
    except (ValueError, np.linalg.LinAlgError, OSError) as exc:
        err = RkpmError(type(exc).__name__, detail=str(exc))
        err.stage = name
        raise err from exc


@dataclass
class Prepared:
    integ: smp.IntegrationSet
    kernels: smp.KernelSet
    table: BasisTable
    timings: dict = field(default_factory=dict)


def load_obj(path) -> smp.TriangleMesh:
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "v":
                verts.append([float(t) for t in tok[1:4]])
            elif tok[0] == "f":
                idx = [int(t.split("/")[0]) for t in tok[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                for j in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[j], idx[j + 1]])
    return smp.TriangleMesh(np.array(verts, dtype=float), np.array(faces, dtype=int))


def shape_from_config(cfg: SceneConfig):
    s = cfg.shape
    if s.kind == "box":
        return smp.Box(tuple(s.lo), tuple(s.hi))
    if s.kind == "sphere":
        return smp.Sphere(tuple(s.center), s.radius)
    if s.kind == "mesh":
        return load_obj(s.path)
    return smp.load_point_cloud(s.path)


def material_from_config(cfg: SceneConfig) -> smp.MaterialSpec:
    m = cfg.material

    def mat(p):
        return smp.Material(p.young_modulus, p.poisson_ratio, p.density)

    regions = []
    for r in m.regions:
        if r.kind == "box":
            regions.append(smp.BoxRegion(tuple(r.lo), tuple(r.hi), mat(r)))
        else:
            regions.append(smp.ShellRegion(tuple(r.center), r.r_inner, r.r_outer, mat(r)))
    return smp.MaterialSpec(mat(m), tuple(regions))


def prepare(cfg: SceneConfig, dense_basis: bool | None = None) -> Prepared:
    timings = {}
    with stage("sampling"):
        t0 = time.perf_counter()
        integ = smp.sample_grid(shape_from_config(cfg), cfg.sampling.integration_points, material_from_config(cfg))
        if cfg.sampling.kernels > len(integ):
            raise RkpmError("insufficient points", detail=f"{len(integ)} integration points for {cfg.sampling.kernels} kernels")
        kernels = smp.build_kernels(integ, cfg.sampling.kernels)
        timings["sampling"] = time.perf_counter() - t0
    with stage("basis"):
        t0 = time.perf_counter()
        dense = cfg.solver.dense_basis if dense_basis is None else dense_basis
        table = build_basis_table(integ, kernels, dense=dense)
        timings["basis"] = time.perf_counter() - t0
    log.info("sampled %d points, %d kernels", len(integ), len(kernels))
    return Prepared(integ, kernels, table, timings)


def compute_modes(prep: Prepared, m: int) -> SkinningModes:
    with stage("modes"):
        t0 = time.perf_counter()
        H = assemble_weight_hessian(prep.table, prep.integ)
        Mm = assemble_mass_matrix(prep.table, prep.integ)
        t1 = time.perf_counter()
        modes = solve_modes(H, Mm, m)
        t2 = time.perf_counter()
    prep.timings["assembly"] = t1 - t0
    prep.timings["eigensolve"] = t2 - t1
    prep.timings["training"] = t2 - t0
    return modes


def _indices(sel, points):
    if sel.indices is not None:
        idx = np.asarray(sel.indices, dtype=int)
        if len(idx) == 0 or idx.min() < 0 or idx.max() >= len(points):
            raise RkpmError("empty selector", detail="indices out of range or empty")
        return idx
    idx = np.flatnonzero(smp.Box(tuple(sel.lo), tuple(sel.hi)).contains(points))
    if len(idx) == 0:
        raise RkpmError("empty selector", detail=f"box {list(sel.lo)}..{list(sel.hi)} selects no points")
    return idx


def boundary_conditions(cfg: SceneConfig, integ: smp.IntegrationSet):
    """Penalty terms and ground plane for a scene, shared by reduced and full runs."""
    with stage("config"):
        kappa = cfg.solver.penalty or default_penalty(integ)
        pts = integ.points
        pens = []
        for bc in cfg.boundary_conditions:
            idx = _indices(bc.select, pts)
            if bc.kind == "fix_region":
                pens.append(fix_region(pts, idx, kappa))
            elif bc.kind == "twist_handle":
                ramp = bc.ramp_time or cfg.n_steps * cfg.timestep
                pens.append(
                    twist_handle(pts, idx, kappa, bc.axis_point, bc.axis_dir, np.deg2rad(bc.total_angle_deg), ramp,
                                 free_axis=bc.free_axis)
                )
            else:
                pens.append(pull_points(pts, idx, kappa, bc.velocity))
        ground = None
        if cfg.contact is not None:
            c = cfg.contact
            # per-volume stiffness: kappa per point divided by a typical point volume
            k_c = c.stiffness or kappa / float(np.mean(integ.weights))
            ground = GroundPlane(np.asarray(c.normal, dtype=float), c.offset, k_c)
    return pens, ground


@dataclass
class RunResult:
    trajectory: Trajectory
    report: dict
    modes: SkinningModes | None
    prepared: Prepared


def _newton_summary(sim: Simulator) -> dict:
    reps = sim.reports
    return {
        "steps": len(reps),
        "newton_iterations": int(sum(r.iterations for r in reps)),
        "unconverged_steps": int(sum(not r.converged for r in reps)),
        "stalled_steps": int(sum(r.stalled for r in reps)),
    }


def run_reduced(cfg: SceneConfig, prep: Prepared, modes: SkinningModes, psd_projection: bool | None = None):
    pens, ground = boundary_conditions(cfg, prep.integ)
    psd = cfg.solver.psd_projection if psd_projection is None else psd_projection
    with stage("simulate"):
        kin = build_kinematics(modes, prep.table, prep.integ)
        scene = Scene(kin, prep.integ, pens, ground, np.asarray(cfg.gravity, dtype=float), psd)
        sim = Simulator(scene, cfg.timestep, cfg.solver.tolerance, cfg.solver.max_iterations)
        t0 = time.perf_counter()
        frames, _ = sim.run(cfg.n_steps)
        elapsed = time.perf_counter() - t0
    return Trajectory.from_frames(frames, cfg.timestep), kin, {
        "simulate_total": elapsed,
        "per_step": elapsed / cfg.n_steps,
        **_newton_summary(sim),
    }


def run_full(cfg: SceneConfig, prep: Prepared, psd_projection: bool | None = None):
    pens, ground = boundary_conditions(cfg, prep.integ)
    psd = cfg.solver.psd_projection if psd_projection is None else psd_projection
    with stage("oracle"):
        t0 = time.perf_counter()
        frames, _, sim = full_quasistatic_solve(
            prep.table, prep.integ, pens, cfg.timestep, cfg.n_steps, cfg.gravity, ground, psd,
            cfg.solver.tolerance, cfg.solver.max_iterations,
        )
        elapsed = time.perf_counter() - t0
    return Trajectory.from_frames(frames, cfg.timestep), {
        "simulate_total": elapsed,
        "per_step": elapsed / cfg.n_steps,
        **_newton_summary(sim),
    }


def run_scene(cfg: SceneConfig, m: int | None = None, dense_basis: bool | None = None, psd_projection=None) -> RunResult:
    prep = prepare(cfg, dense_basis)
    modes = compute_modes(prep, cfg.modes if m is None else m)
    traj, _, sim_report = run_reduced(cfg, prep, modes, psd_projection)
    report = {
        "scene": cfg.name,
        "m": modes.m,
        "n_points": len(prep.integ),
        "n_kernels": len(prep.kernels),
        "n_frames": traj.n_frames,
        "timings": {**prep.timings, "simulate_total": sim_report.pop("simulate_total"), "per_step": sim_report.pop("per_step")},
        "solver": sim_report,
        "eigenvalues": modes.eigenvalues.tolist(),
    }
    return RunResult(traj, report, modes, prep)
