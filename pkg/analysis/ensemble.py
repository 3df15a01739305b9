"""Point clouds flowed under one noise realization: snapshots, diameters and density rasters."""
import math
from typing import List, Literal, Optional, Sequence, Tuple

import logfire
import numpy as np
from scipy.spatial.distance import pdist

from analysis.struct import EnsembleSnapshot, GridSpec, HistogramGrid
from analysis.workers import default_workers, gather_bounded
from dynamics.integrators import evolve
from dynamics.noise import CLOUD_STREAM, normals
from dynamics.rds import CocycleContext
from dynamics.struct import NonConvergence, State

DIAMETER_SAMPLE = 2048
SEGMENT = 65536
GRID_TOL = 1e-9
AUTO_MARGIN = 0.05

FailurePolicy = Literal["abort", "drop"]


def normal_cloud(n: int, seed: int) -> np.ndarray:
    """n standard 2D normal initial points, reproducible from the seed."""
    if n < 1:
        raise ValueError(f"ensemble size must be positive, got {n}")
    return np.array(normals(seed, CLOUD_STREAM, 0, n))


def _finite_rows(points: np.ndarray) -> np.ndarray:
    return points[np.isfinite(points).all(axis=1)]


def _diameter(points: np.ndarray, sample_size: int = DIAMETER_SAMPLE) -> float:
    pts = _finite_rows(points)
    if pts.shape[0] < 2:
        return 0.0
    if pts.shape[0] > sample_size:
        idx = np.linspace(0, pts.shape[0] - 1, sample_size).round().astype(np.int64)
        pts = pts[idx]
    return float(pdist(pts).max())


def diameter(snapshot: EnsembleSnapshot, sample_size: int = DIAMETER_SAMPLE) -> float:
    """Max pairwise distance over an evenly spaced subsample; exact when the cloud fits in sample_size."""
    if sample_size < 2:
        raise ValueError(f"sample size must be at least 2, got {sample_size}")
    return _diameter(snapshot.points, sample_size)


def _snapshot(time: float, points: np.ndarray, dropped: int) -> EnsembleSnapshot:
    pts = points.copy()
    alive = _finite_rows(pts)
    mean = State.of(alive.mean(axis=0)) if alive.shape[0] else State(math.nan, math.nan)
    return EnsembleSnapshot(time=time, points=pts, diameter=_diameter(pts), mean=mean, dropped=dropped)


def _grid_steps(times: Sequence[float], tau: float, T: float) -> List[int]:
    steps = []
    for t in times:
        k = round(t / tau)
        if not (0.0 <= t <= T + GRID_TOL) or abs(t - k * tau) > GRID_TOL * max(1.0, abs(t)):
            raise ValueError(f"snapshot time {t} must lie on the grid tau={tau:g} inside [0, {T}]")
        steps.append(k)
    if steps != sorted(steps):
        raise ValueError("snapshot times must be sorted")
    return steps


async def evolve_ensemble(
    ctx: CocycleContext,
    points0,
    T: float,
    snapshot_times: Sequence[float],
    workers: Optional[int] = None,
    on_failure: FailurePolicy = "abort",
) -> List[EnsembleSnapshot]:
    """Flow every point with the increments of ctx.path and snapshot at the requested times.

    Points are split into one chunk per worker; every chunk reads the same
    increment block, and each snapshot waits for all chunks.
    """
    if on_failure not in ("abort", "drop"):
        raise ValueError(f"unknown failure policy {on_failure!r}")
    tau = ctx.cfg.tau
    n = round(T / tau)
    targets = _grid_steps(snapshot_times, tau, T)
    pts = np.array(points0, dtype=float).reshape(-1, 2).copy()
    n_points = pts.shape[0]
    n_chunks = max(1, min(workers or default_workers, n_points))
    chunks = np.array_split(np.arange(n_points), n_chunks)
    bounds = [(int(c[0]), int(c[-1]) + 1) for c in chunks if c.size]

    logfire.info(f"ENSEMBLE -- {n_points} points, {n} steps, {len(targets)} snapshots, {len(bounds)} chunks")
    snapshots: List[EnsembleSnapshot] = []
    dropped = 0
    cur = 0
    for target in targets:
        while cur < target:
            m = min(SEGMENT, target - cur)
            dw = ctx.path.increments(cur + 1, m)
            fail_step = np.full(n_points, -1, dtype=np.int64)
            fail_res = np.zeros(n_points)
            calls = [(evolve, (ctx.params, ctx.cfg, pts[lo:hi], dw, fail_step[lo:hi], fail_res[lo:hi]))
                     for lo, hi in bounds]
            await gather_bounded(calls, workers)
            bad = np.flatnonzero(fail_step >= 0)
            if bad.size:
                if on_failure == "abort":
                    i = int(bad[0])
                    raise NonConvergence(float(fail_res[i]), step=cur + int(fail_step[i]) + 1, point=i)
                pts[bad] = np.nan
                dropped += int(bad.size)
                logfire.warning(f"ENSEMBLE -- dropped {bad.size} points after step {cur + m}, {dropped} in total")
            cur += m
        snapshots.append(_snapshot(cur * tau, pts, dropped))
    return snapshots


def histogram(snapshot: EnsembleSnapshot, grid: GridSpec = GridSpec()) -> HistogramGrid:
    """Bin the snapshot on the grid; NaN rows and points outside the bounds count as out of bounds."""
    pts = snapshot.points
    alive = _finite_rows(pts)
    x_min, x_max, y_min, y_max = grid.bounds
    if grid.auto and alive.shape[0]:
        lo = alive.min(axis=0)
        hi = alive.max(axis=0)
        pad = AUTO_MARGIN * np.maximum(hi - lo, 1e-12)
        x_min, y_min = (lo - pad).tolist()
        x_max, y_max = (hi + pad).tolist()
    inside = ((alive[:, 0] >= x_min) & (alive[:, 0] <= x_max)
              & (alive[:, 1] >= y_min) & (alive[:, 1] <= y_max))
    counts, _, _ = np.histogram2d(alive[inside, 0], alive[inside, 1], bins=[grid.nx, grid.ny],
                                  range=[[x_min, x_max], [y_min, y_max]])
    counts = counts.astype(np.int64)
    total = int(pts.shape[0])
    return HistogramGrid(x_min=x_min, x_max=x_max, y_min=y_min, y_max=y_max, nx=grid.nx, ny=grid.ny,
                         counts=counts, out_of_bounds=total - int(counts.sum()), total=total, time=snapshot.time)


async def diameter_series(ctx: CocycleContext, points0, T: float, dt: float,
                          workers: Optional[int] = None,
                          on_failure: FailurePolicy = "abort") -> List[Tuple[float, float]]:
    """(time, diameter) every dt up to T."""
    if not dt > 0.0:
        raise ValueError(f"sampling interval must be positive, got {dt}")
    stride = max(1, round(dt / ctx.cfg.tau))
    n = round(T / ctx.cfg.tau)
    times = [k * ctx.cfg.tau for k in range(0, n + 1, stride)]
    snapshots = await evolve_ensemble(ctx, points0, T, times, workers, on_failure)
    return [(s.time, s.diameter) for s in snapshots]
