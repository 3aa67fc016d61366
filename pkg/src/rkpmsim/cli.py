"""Command-line entry point: run, compare, bench-beam, modes-export."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml
from pydantic import ValidationError

from .errors import RkpmError

EXIT_SCHEMA = 2
EXIT_FAILURE = 1


def _emit_error(kind, stage, detail, **extra):
    print(json.dumps({"error": kind, "stage": stage, "detail": detail, **extra}), file=sys.stderr)


def _schema_error(err: ValidationError):
    fields = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"])
        fields.append({"field": path, "message": e["msg"]})
    detail = "; ".join(f"{f['field']}: {f['message']}" for f in fields)
    _emit_error("schema violation", "config", detail, fields=fields)
    return EXIT_SCHEMA


def _load(args):
    from .config import bundled_scene, load_scene

    path = Path(args.scene)
    cfg = load_scene(path if path.exists() or path.suffix else bundled_scene(args.scene))
    updates = {}
    if getattr(args, "m", None) is not None:
        updates["modes"] = args.m
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if updates:
        # re-validate so overrides obey the same schema as the file
        cfg = type(cfg).model_validate({**cfg.model_dump(), **updates})
    return cfg


def _write_json(path, payload):
    from .trajectory import atomic_write

    atomic_write(path, (json.dumps(payload, indent=2) + "\n").encode())


def cmd_run(args) -> int:
    from .pipeline import run_scene, stage
    from .trajectory import write_trajectory

    cfg = _load(args)
    res = run_scene(
        cfg,
        dense_basis=True if args.dense_basis else None,
        psd_projection=False if args.no_psd_projection else None,
    )
    out = Path(args.out)
    with stage("io"):
        out.parent.mkdir(parents=True, exist_ok=True)
        write_trajectory(out, res.trajectory)
        if args.modes:
            from .modes import write_modes

            write_modes(args.modes, res.modes)
        report = {**res.report, "trajectory": str(out)}
        _write_json(args.report or out.with_suffix(".json"), report)
    print(json.dumps(report["timings"]))
    return 0


def cmd_compare(args) -> int:
    from .pipeline import stage
    from .trajectory import compare, read_trajectory

    with stage("compare"):
        a = read_trajectory(args.trajectory)
        b = read_trajectory(args.reference)
        report = compare(a, b)
    if args.out:
        _write_json(args.out, report)
    print(json.dumps(report))
    return 0


def cmd_bench(args) -> int:
    from .bench import run_beam_bench, trend_checks

    def progress(msg):
        print(msg, file=sys.stderr)

    kw = {}
    for name in ("n_points", "n_kernels", "timestep", "duration"):
        if getattr(args, name) is not None:
            kw[name] = getattr(args, name)
    if args.rigid_handle:
        kw["rigid_handle"] = True
    results = []
    for mode in args.mode:
        res = run_beam_bench(mode, args.m_list, progress=progress, **kw)
        print(res.table())
        results.append({**res.as_dict(), "checks": trend_checks(res)})
    if args.out:
        _write_json(args.out, results)
    return 0


def cmd_modes_export(args) -> int:
    from .modes import weight_field, write_modes
    from .pipeline import compute_modes, prepare, stage
    from .trajectory import atomic_write

    cfg = _load(args)
    prep = prepare(cfg, dense_basis=True if args.dense_basis else None)
    modes = compute_modes(prep, cfg.modes)
    with stage("io"):
        write_modes(args.out, modes)
        W = weight_field(modes, prep.table)
        body = np.hstack([prep.integ.points, W, prep.integ.weights[:, None]])
        head = "x y z " + " ".join(f"w{j}" for j in range(W.shape[1])) + " volume"
        lines = [head] + [" ".join(repr(float(v)) for v in row) for row in body]
        dump = args.weights or str(Path(args.out).with_suffix(".weights.txt"))
        atomic_write(dump, ("\n".join(lines) + "\n").encode())
    print(json.dumps({"modes": str(args.out), "weights": dump, "eigenvalues": modes.eigenvalues.tolist()}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rkpmsim", description="Reduced-order meshless hyperelastic simulation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def scene_args(sp):
        sp.add_argument("--scene", required=True, help="scene YAML/JSON file or bundled scene name")
        sp.add_argument("--m", type=int, help="override mode count")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--dense-basis", action="store_true", help="evaluate every kernel at every point (no cutoff)")

    r = sub.add_parser("run", help="sample, build modes, simulate, write trajectory and report")
    scene_args(r)
    r.add_argument("--out", required=True, help="trajectory file")
    r.add_argument("--report", help="JSON report path (default: next to --out)")
    r.add_argument("--modes", help="also write the modes file here")
    r.add_argument("--no-psd-projection", action="store_true", help="diagnostics: raw elastic Hessians")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="normalized MSE between two trajectories")
    c.add_argument("trajectory")
    c.add_argument("reference")
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)

    b = sub.add_parser("bench-beam", help="beam bend/twist mode-count sweep against the full-order reference")
    b.add_argument("--mode", nargs="+", choices=["bend", "twist"], default=["bend"])
    b.add_argument("--m-list", type=int, nargs="+", default=[6, 9, 16, 32])
    b.add_argument("--n-points", type=int)
    b.add_argument("--n-kernels", type=int)
    b.add_argument("--timestep", type=float)
    b.add_argument("--duration", type=float)
    b.add_argument("--rigid-handle", action="store_true", help="twist: also hold the handle along the axis")
    b.add_argument("--out", help="JSON results path")
    b.set_defaults(func=cmd_bench)

    e = sub.add_parser("modes-export", help="write the modes file and a per-point weight dump")
    scene_args(e)
    e.add_argument("--out", required=True, help="binary modes file")
    e.add_argument("--weights", help="text dump path (default: <out>.weights.txt)")
    e.set_defaults(func=cmd_modes_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("RKPM_THREADS")
    limiter = None
    if threads:
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(limits=int(threads))
    try:
        return args.func(args)
    except ValidationError as err:
        return _schema_error(err)
    except RkpmError as err:
        _emit_error(err.kind, getattr(err, "stage", None) or "unknown", err.detail, **{k: str(v) for k, v in err.context.items()})
        return EXIT_FAILURE
    except (OSError, ValueError, yaml.YAMLError) as err:
        _emit_error(type(err).__name__, "io", str(err))
        return EXIT_FAILURE
    finally:
        if limiter is not None:
            limiter.unregister()


if __name__ == "__main__":
    sys.exit(main())
