"""Reproducible Brownian increments on fixed time grids.

Randomness is counter based: path ``i`` of an experiment keyed by ``seed``
owns a fixed block of the Philox counter space, so any subset of paths can
be regenerated, in any order and by any number of workers, bit for bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtri

from .errors import InvalidInputError, UnsupportedOperationError

_TIME_ATOL = 1e-12
_DUMP_MAGIC = b"STNOISE2"


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing grid times with their step sizes.

    ``spacing`` defaults to ``diff(times)``.  Sub-grids and shifted grids
    carry the parent's step sizes, so re-based times cannot perturb them by
    rounding.
    """

    times: np.ndarray
    spacing: Optional[np.ndarray] = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size < 1:
            raise InvalidInputError("time grid must be a non-empty 1-d array")
        if times[0] < 0 or not np.all(np.isfinite(times)):
            raise InvalidInputError("time grid must be finite and start at t >= 0")
        diff = np.diff(times)
        if np.any(diff <= 0):
            raise InvalidInputError("time grid must be strictly increasing")
        spacing = diff if self.spacing is None else np.array(self.spacing, dtype=float)
        if spacing.shape != diff.shape or not np.allclose(spacing, diff, rtol=1e-9, atol=_TIME_ATOL):
            raise InvalidInputError("spacing must match the differences of the grid times")
        times.setflags(write=False)
        spacing.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "spacing", spacing)

    @classmethod
    def uniform(cls, T: float, steps: int, start: float = 0.0) -> "TimeGrid":
        if steps < 1:
            raise InvalidInputError("need at least one step")
        h = (T - start) / steps
        return cls(start + (T - start) * np.arange(steps + 1) / steps, np.full(steps, h))

    def window(self, i0: int, i1: int) -> "TimeGrid":
        """Sub-grid of the points ``i0 .. i1`` keeping the step sizes."""
        return TimeGrid(self.times[i0 : i1 + 1], self.spacing[i0:i1])

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def steps(self) -> int:
        return self.times.size - 1

    @property
    def dt(self) -> np.ndarray:
        return self.spacing

    def is_uniform(self, rtol: float = 1e-9) -> bool:
        dt = self.dt
        return dt.size == 0 or bool(np.allclose(dt, dt[0], rtol=rtol, atol=0))

    def index(self, t: float) -> int:
        """Grid index of ``t``; raises if ``t`` is not a grid point."""
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > _TIME_ATOL * max(1.0, abs(t)):
            raise InvalidInputError(f"t={t} is not a grid point")
        return i

    def __eq__(self, other):
        return (
            isinstance(other, TimeGrid)
            and self.times.shape == other.times.shape
            and bool(np.allclose(self.times, other.times, rtol=0, atol=_TIME_ATOL))
        )

    def __len__(self):
        return self.times.size


@dataclass(frozen=True, eq=False)
class NoisePath:
    """Brownian increments for a block of consecutive paths.

    ``increments[k, i, j]`` is the increment of component ``j`` over
    ``[times[i], times[i+1]]`` for path number ``path_index + k``.
    """

    grid: TimeGrid
    d: int
    seed: int
    path_index: int
    increments: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.increments.shape[0]

    def path(self, k: int) -> "NoisePath":
        return NoisePath(self.grid, self.d, self.seed, self.path_index + k, self.increments[k : k + 1])

    def cumulative(self) -> np.ndarray:
        """W(t) - W(t_0) on the grid, shape ``(n_paths, steps + 1, d)``."""
        out = np.zeros((self.n_paths, self.grid.steps + 1, self.d))
        np.cumsum(self.increments, axis=1, out=out[:, 1:])
        return out


def _counters_per_path(steps: int, d: int) -> int:
    # Philox4x64 emits four 64-bit words per counter value.
    return -(-(steps * d) // 4)


def _standard_normals(seed: int, first: int, n_paths: int, steps: int, d: int) -> np.ndarray:
    m = _counters_per_path(steps, d)
    bitgen = np.random.Philox(key=int(seed), counter=int(first) * m)
    raw = bitgen.random_raw(n_paths * m * 4).reshape(n_paths, m * 4)[:, : steps * d]
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u).reshape(n_paths, steps, d)


def generate(grid: TimeGrid, d: int, seed: int, path_index: int = 0, n_paths: int = 1) -> NoisePath:
    """Increments for paths ``path_index .. path_index + n_paths - 1``.

    Row ``k`` is identical to ``generate(grid, d, seed, path_index + k).increments[0]``.
    """
    if d < 1:
        raise InvalidInputError("noise dimension d must be >= 1")
    if n_paths < 0 or path_index < 0 or seed < 0:
        raise InvalidInputError("seed, path_index and n_paths must be non-negative")
    z = _standard_normals(seed, path_index, n_paths, grid.steps, d)
    z *= np.sqrt(grid.dt)[None, :, None]
    return NoisePath(grid, d, int(seed), int(path_index), z)


def restrict_after(path: NoisePath, s: float) -> NoisePath:
    """The two-parameter noise W_s(u) = W(u) - W(s): increments after ``s`` only."""
    i = path.grid.index(s)
    return NoisePath(path.grid.window(i, path.grid.steps), path.d, path.seed, path.path_index, path.increments[:, i:])


def shift(path: NoisePath, s: float) -> NoisePath:
    """The metric-dynamical shift: the noise after ``s`` re-based to start at time 0."""
    if not path.grid.is_uniform():
        raise UnsupportedOperationError("shift requires a uniform grid")
    i = path.grid.index(s)
    t0 = path.grid.times[0]
    rest = path.grid.times[i:]
    times = t0 + (rest - rest[0])
    return NoisePath(TimeGrid(times, path.grid.dt[i:]), path.d, path.seed, path.path_index, path.increments[:, i:])


def coarsen(path: NoisePath, factor: int) -> NoisePath:
    """Sum groups of ``factor`` consecutive increments (nested coarser grid)."""
    steps = path.grid.steps
    if factor < 1 or steps % factor:
        raise InvalidInputError(f"factor {factor} does not divide {steps} steps")
    inc = path.increments.reshape(path.n_paths, steps // factor, factor, path.d).sum(axis=2)
    spacing = path.grid.dt.reshape(steps // factor, factor).sum(axis=1)
    return NoisePath(TimeGrid(path.grid.times[::factor], spacing), path.d, path.seed, path.path_index, inc)


def dump(path: NoisePath, fh) -> None:
    """Write the documented little-endian binary layout to a binary file object.

    Layout: magic ``STNOISE2``; int64 ``n_times``, ``d``, ``n_paths``, ``seed``,
    ``path_index``; float64 ``times[n_times]``; float64 step sizes
    ``[n_times - 1]``; float64 increments in row-major
    ``(n_paths, n_times - 1, d)`` order.
    """
    times = path.grid.times
    fh.write(_DUMP_MAGIC)
    fh.write(struct.pack("<5q", times.size, path.d, path.n_paths, path.seed, path.path_index))
    fh.write(np.ascontiguousarray(times, dtype="<f8").tobytes())
    fh.write(np.ascontiguousarray(path.grid.dt, dtype="<f8").tobytes())
    fh.write(np.ascontiguousarray(path.increments, dtype="<f8").tobytes())


def load(fh) -> NoisePath:
    if fh.read(len(_DUMP_MAGIC)) != _DUMP_MAGIC:
        raise InvalidInputError("not a noise dump")
    n_times, d, n_paths, seed, path_index = struct.unpack("<5q", fh.read(40))
    times = np.frombuffer(fh.read(8 * n_times), dtype="<f8").astype(float)
    spacing = np.frombuffer(fh.read(8 * (n_times - 1)), dtype="<f8").astype(float)
    count = n_paths * (n_times - 1) * d
    inc = np.frombuffer(fh.read(8 * count), dtype="<f8").astype(float)
    return NoisePath(TimeGrid(times, spacing), d, seed, path_index, inc.reshape(n_paths, n_times - 1, d))
