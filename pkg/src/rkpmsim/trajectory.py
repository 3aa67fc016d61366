"""Binary trajectory files and the bounding-box-normalized error metrics."""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import RkpmError

MAGIC = b"RKTJ"
VERSION = 1
_HEADER = struct.Struct("<4sIQQd6d")


@dataclass
class Trajectory:
    frames: np.ndarray  # (T, N, 3); frame 0 is the rest configuration
    h: float
    bbox: np.ndarray  # (2, 3) rest bounding box

    @classmethod
    def from_frames(cls, frames, h):
        frames = np.asarray(frames, dtype=float)
        rest = frames[0]
        return cls(frames, float(h), np.array([rest.min(axis=0), rest.max(axis=0)]))

    @property
    def n_points(self) -> int:
        return self.frames.shape[1]

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.bbox[1] - self.bbox[0]))


def atomic_write(path, payload: bytes) -> None:
    """Write to a sibling temp file then rename, so failures leave no partial file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_trajectory(traj: Trajectory) -> bytes:
    if not np.all(np.isfinite(traj.frames)):
        raise RkpmError("invalid trajectory", detail="non-finite positions")
    T, N, _ = traj.frames.shape
    head = _HEADER.pack(MAGIC, VERSION, N, T, traj.h, *np.asarray(traj.bbox, dtype=float).ravel())
    return head + np.ascontiguousarray(traj.frames, dtype="<f8").tobytes()


def write_trajectory(path, traj: Trajectory) -> None:
    atomic_write(path, encode_trajectory(traj))


def read_trajectory(path) -> Trajectory:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise RkpmError("invalid trajectory", detail=f"{path}: truncated header")
    magic, version, N, T, h, *bbox = _HEADER.unpack_from(raw)
    if magic != MAGIC or version != VERSION:
        raise RkpmError("invalid trajectory", detail=f"{path}: magic={magic!r} version={version}")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != T * N * 3:
        raise RkpmError("invalid trajectory", detail=f"{path}: payload size mismatch")
    return Trajectory(body.reshape(T, N, 3).copy(), h, np.array(bbox).reshape(2, 3))


def compare(traj: Trajectory, reference: Trajectory) -> dict:
    """Normalized MSE of point positions against ``reference``.

    ``mse`` averages squared distances over points and frames; ``max`` is the
    worst per-frame value. Both are divided by the squared bounding-box
    diagonal of the reference rest shape.
    """
    if traj.frames.shape != reference.frames.shape or not np.isclose(traj.h, reference.h, rtol=1e-12):
        raise RkpmError(
            "incomparable trajectories",
            detail=f"shapes {traj.frames.shape} vs {reference.frames.shape}, h {traj.h} vs {reference.h}",
        )
    d2 = np.sum((traj.frames - reference.frames) ** 2, axis=2) / reference.diagonal**2
    per_frame = d2.mean(axis=1)
    return {
        "mse": float(d2.mean()),
        "max": float(per_frame.max()),
        "max_point": float(d2.max()),
        "n_points": traj.n_points,
        "n_frames": traj.n_frames,
    }
