"""Demonstration data model and file I/O.

Two on-disk formats are supported:

``csv``
    Header ``traj_id,frame_idx,v0,...,v{d-1}`` followed by one row per
    frame. Frames of one trajectory are contiguous with ascending
    ``frame_idx``.

``binary``
    ``b"RMD1"``, little-endian ``u32`` dim, ``u32`` trajectory count, then
    per trajectory a ``u32`` frame count and the ``f64`` payload in row-major
    order. Trajectory ids are not stored; they load as ``"0"``, ``"1"``, ...
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import DimensionError, EmptyInputError, IoError, ParseError

MAGIC = b"RMD1"
FORMATS = ("csv", "binary")


def as_feature_vector(values, dim: int | None = None) -> np.ndarray:
    """Validate ``values`` as a finite 1-D float vector and return a read-only copy."""
    v = np.array(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DimensionError(f"feature vector must be 1-D and non-empty, got shape {v.shape}")
    if dim is not None and v.size != dim:
        raise DimensionError(f"expected dimension {dim}, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise DimensionError("feature vector contains NaN or Inf")
    v.setflags(write=False)
    return v


@dataclass(frozen=True, eq=False)
class Trajectory:
    id: str
    frames: np.ndarray  # (T, d)

    def __post_init__(self):
        f = np.array(self.frames, dtype=np.float64)
        if f.ndim != 2 or f.shape[0] == 0:
            raise EmptyInputError(f"trajectory {self.id!r} has no frames")
        if f.shape[1] == 0:
            raise DimensionError("feature dimension must be positive")
        if not np.all(np.isfinite(f)):
            raise DimensionError(f"trajectory {self.id!r} contains NaN or Inf")
        f.setflags(write=False)
        object.__setattr__(self, "frames", f)
        object.__setattr__(self, "id", str(self.id))

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def __len__(self):
        return self.frames.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return self.id == other.id and np.array_equal(self.frames, other.frames)


@dataclass(frozen=True, eq=False)
class DemonstrationSet:
    trajectories: tuple
    dim: int

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        if not trajs:
            raise EmptyInputError("a demonstration set needs at least one trajectory")
        if self.dim < 1:
            raise DimensionError("dim must be a positive integer")
        for t in trajs:
            if t.dim != self.dim:
                raise DimensionError(
                    f"trajectory {t.id!r} has dimension {t.dim}, expected {self.dim}")
        object.__setattr__(self, "trajectories", trajs)

    @classmethod
    def from_arrays(cls, arrays: Sequence, ids: Sequence[str] | None = None) -> "DemonstrationSet":
        if not len(arrays):
            raise EmptyInputError("no trajectories given")
        ids = ids if ids is not None else [str(i) for i in range(len(arrays))]
        trajs = tuple(Trajectory(i, a) for i, a in zip(ids, arrays))
        return cls(trajs, trajs[0].dim)

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def __eq__(self, other):
        if not isinstance(other, DemonstrationSet):
            return NotImplemented
        return self.dim == other.dim and self.trajectories == other.trajectories

    def stack(self) -> np.ndarray:
        """All frames as one ``(N, d)`` array, trajectory order then frame order."""
        return np.concatenate([t.frames for t in self.trajectories], axis=0)

    def index(self) -> list[tuple[int, int]]:
        """``(trajectory index, frame index)`` for each row of :meth:`stack`."""
        return [(i, j) for i, t in enumerate(self.trajectories) for j in range(len(t))]

    def first_frame_rows(self) -> list[int]:
        rows, offset = [], 0
        for t in self.trajectories:
            rows.append(offset)
            offset += len(t)
        return rows


@dataclass(frozen=True)
class AbstractDemonstration:
    """Sequence of proposition-id sets, one per frame of the source trajectory."""

    steps: tuple

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(frozenset(s) for s in self.steps))

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "binary"
    if fmt not in FORMATS:
        raise ParseError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    return fmt


def save_demonstrations(demos: DemonstrationSet, path, format: str | None = None) -> None:
    path = Path(path)
    fmt = _infer_format(path, format)
    try:
        if fmt == "csv":
            _save_csv(demos, path)
        else:
            _save_binary(demos, path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_demonstrations(path, format: str | None = None) -> DemonstrationSet:
    path = Path(path)
    fmt = _infer_format(path, format)
    try:
        if fmt == "csv":
            return _load_csv(path)
        return _load_binary(path)
    except FileNotFoundError as exc:
        raise IoError(f"demonstration file not found: {path}") from exc
    except (OSError, UnicodeDecodeError) as exc:
        if isinstance(exc, IoError):
            raise
        raise IoError(f"cannot read {path}: {exc}") from exc


def _save_csv(demos: DemonstrationSet, path: Path) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["traj_id", "frame_idx"] + [f"v{i}" for i in range(demos.dim)])
        for t in demos:
            for j, row in enumerate(t.frames):
                # repr() of a float round-trips exactly
                w.writerow([t.id, j] + [repr(float(x)) for x in row])


def _load_csv(path: Path) -> DemonstrationSet:
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [(n, r) for n, r in enumerate(rows, start=1) if r and any(c.strip() for c in r)]
    if not rows:
        raise EmptyInputError(f"{path} is empty")
    _, header = rows[0]
    if len(header) < 3 or header[0].strip() != "traj_id" or header[1].strip() != "frame_idx":
        raise ParseError("expected header 'traj_id,frame_idx,v0,...'", line=rows[0][0])
    dim = len(header) - 2
    if len(rows) == 1:
        raise EmptyInputError(f"{path} has a header but no frames")

    ids: list[str] = []
    frames: dict[str, list] = {}
    last_idx: dict[str, int] = {}
    for line, row in rows[1:]:
        if len(row) != dim + 2:
            raise ParseError(f"expected {dim + 2} fields, got {len(row)}", line=line)
        tid = row[0].strip()
        try:
            fidx = int(row[1])
            vals = [float(c) for c in row[2:]]
        except ValueError as exc:
            raise ParseError(str(exc), line=line) from None
        if not all(np.isfinite(vals)):
            raise ParseError("non-finite value", line=line)
        if tid not in frames:
            ids.append(tid)
            frames[tid] = []
        elif ids[-1] != tid:
            raise ParseError(f"frames of trajectory {tid!r} are not contiguous", line=line)
        elif fidx <= last_idx[tid]:
            raise ParseError(f"frame_idx {fidx} not ascending in trajectory {tid!r}", line=line)
        last_idx[tid] = fidx
        frames[tid].append(vals)
    return DemonstrationSet(tuple(Trajectory(i, frames[i]) for i in ids), dim)


def _save_binary(demos: DemonstrationSet, path: Path) -> None:
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", demos.dim, len(demos)))
        for t in demos:
            fh.write(struct.pack("<I", len(t)))
            fh.write(np.ascontiguousarray(t.frames, dtype="<f8").tobytes())


def _load_binary(path: Path) -> DemonstrationSet:
    data = path.read_bytes()
    if not data:
        raise EmptyInputError(f"{path} is empty")
    if data[:4] != MAGIC:
        raise ParseError(f"{path}: bad magic bytes {data[:4]!r}")
    if len(data) < 12:
        raise ParseError(f"{path}: truncated header")
    dim, count = struct.unpack_from("<II", data, 4)
    if count == 0:
        raise EmptyInputError(f"{path} contains no trajectories")
    if dim == 0:
        raise DimensionError(f"{path}: dimension 0")
    off = 12
    trajs = []
    for i in range(count):
        if off + 4 > len(data):
            raise ParseError(f"{path}: truncated before trajectory {i}")
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        nbytes = n * dim * 8
        if off + nbytes > len(data):
            raise ParseError(f"{path}: truncated payload in trajectory {i}")
        arr = np.frombuffer(data, dtype="<f8", count=n * dim, offset=off).reshape(n, dim)
        off += nbytes
        trajs.append(Trajectory(str(i), arr.astype(np.float64)))
    if off != len(data):
        raise ParseError(f"{path}: {len(data) - off} trailing bytes")
    return DemonstrationSet(tuple(trajs), dim)
