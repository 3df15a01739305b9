import asyncio
import math

import numpy as np
import pytest
from pydantic import ValidationError

from analysis import ensemble
from analysis.struct import EnsembleSnapshot, GridSpec, HistogramGrid
from dynamics.integrators import trajectory
from dynamics.rds import CocycleContext
from dynamics.struct import ModelParams, NonConvergence, State


def _snap(points, time=0.0) -> EnsembleSnapshot:
    pts = np.asarray(points, dtype=float)
    return EnsembleSnapshot(time=time, points=pts, diameter=0.0, mean=State(0.0, 0.0))


def test_normal_cloud_is_reproducible():
    a = ensemble.normal_cloud(100, seed=5)
    np.testing.assert_array_equal(a, ensemble.normal_cloud(100, seed=5))
    assert a.shape == (100, 2)
    assert not np.array_equal(a, ensemble.normal_cloud(100, seed=6))
    with pytest.raises(ValueError):
        ensemble.normal_cloud(0, seed=5)


def test_single_point_follows_trajectory(ctx):
    x0 = (0.3, -0.8)
    snaps = asyncio.run(ensemble.evolve_ensemble(ctx, [x0], 0.5, [0.5]))
    *_, (X, _) = trajectory(ctx.params, ctx.cfg, ctx.path, x0, 500)
    np.testing.assert_allclose(snaps[0].points[0], X, rtol=0, atol=1e-14)
    assert snaps[0].time == pytest.approx(0.5)


def test_permutation_equivariance(ctx):
    pts = ensemble.normal_cloud(40, seed=1)
    perm = np.random.default_rng(0).permutation(40)
    a = asyncio.run(ensemble.evolve_ensemble(ctx, pts, 0.2, [0.2]))[0].points
    b = asyncio.run(ensemble.evolve_ensemble(ctx, pts[perm], 0.2, [0.2]))[0].points
    np.testing.assert_array_equal(a[perm], b)


def test_result_does_not_depend_on_workers(ctx):
    pts = ensemble.normal_cloud(33, seed=2)
    one = asyncio.run(ensemble.evolve_ensemble(ctx, pts, 0.2, [0.1, 0.2], workers=1))
    many = asyncio.run(ensemble.evolve_ensemble(ctx, pts, 0.2, [0.1, 0.2], workers=7))
    for s, t in zip(one, many):
        np.testing.assert_array_equal(s.points, t.points)
        assert s.diameter == t.diameter


def test_snapshot_at_time_zero_is_initial_cloud(ctx):
    pts = ensemble.normal_cloud(10, seed=3)
    snap = asyncio.run(ensemble.evolve_ensemble(ctx, pts, 0.1, [0.0]))[0]
    np.testing.assert_array_equal(snap.points, pts)
    assert snap.size == 10
    assert snap.mean == pytest.approx(tuple(pts.mean(axis=0)))


def test_snapshot_times_must_be_on_grid(ctx):
    with pytest.raises(ValueError):
        asyncio.run(ensemble.evolve_ensemble(ctx, [(0.0, 0.0)], 0.1, [0.0505]))
    with pytest.raises(ValueError):
        asyncio.run(ensemble.evolve_ensemble(ctx, [(0.0, 0.0)], 0.1, [0.2]))
    with pytest.raises(ValueError):
        asyncio.run(ensemble.evolve_ensemble(ctx, [(0.0, 0.0)], 0.1, [0.1, 0.05]))
    with pytest.raises(ValueError):
        asyncio.run(ensemble.evolve_ensemble(ctx, [(0.0, 0.0)], 0.1, [0.1], on_failure="retry"))


def test_failure_policies():
    c = CocycleContext.build(ModelParams(), 1e-3, seed=4, newton_tol=1e-300, newton_max_iter=1)
    pts = np.array([[0.0, 0.0], [0.5, 0.5]])
    with pytest.raises(NonConvergence) as err:
        asyncio.run(ensemble.evolve_ensemble(c, pts, 0.01, [0.01], on_failure="abort"))
    assert err.value.step == 1
    snap = asyncio.run(ensemble.evolve_ensemble(c, pts, 0.01, [0.01], on_failure="drop"))[0]
    assert snap.dropped == 2
    assert np.isnan(snap.points).all()
    assert snap.diameter == 0.0


def test_diameter_cases():
    assert ensemble.diameter(_snap([[1.0, 1.0]])) == 0.0
    assert ensemble.diameter(_snap([[0.0, 0.0], [3.0, 4.0], [1.0, 1.0]])) == pytest.approx(5.0)
    assert ensemble.diameter(_snap([[0.0, 0.0], [math.nan, math.nan], [0.0, 2.0]])) == pytest.approx(2.0)
    line = np.column_stack([np.linspace(0.0, 1.0, 5000), np.zeros(5000)])
    assert ensemble.diameter(_snap(line)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        ensemble.diameter(_snap(line), sample_size=1)


def test_histogram_conserves_mass():
    pts = np.array([[0.0, 0.0], [10.0, 0.0], [math.nan, math.nan], [-2.9, 2.9]])
    grid = ensemble.histogram(_snap(pts), GridSpec(nx=6, ny=6))
    assert grid.total == 4
    assert grid.out_of_bounds == 2
    assert int(grid.counts.sum()) == 2
    assert grid.counts[0, 5] == 1


def test_histogram_single_cell():
    pts = np.full((50, 2), 0.25)
    grid = ensemble.histogram(_snap(pts, time=1.5), GridSpec(nx=4, ny=4, x_min=0, x_max=1, y_min=0, y_max=1))
    assert grid.occupied_cells() == 1
    assert grid.counts[1, 1] == 50
    assert grid.time == 1.5


def test_histogram_of_uniform_cloud():
    rng = np.random.default_rng(9)
    n = 100_000
    pts = rng.uniform(0.0, 1.0, (n, 2))
    grid = ensemble.histogram(_snap(pts), GridSpec(nx=10, ny=10, x_min=0, x_max=1, y_min=0, y_max=1))
    expected = n / 100
    assert np.abs(grid.counts - expected).max() < 5.0 * math.sqrt(expected)


def test_histogram_auto_bounds():
    pts = np.array([[10.0, 20.0], [12.0, 21.0]])
    grid = ensemble.histogram(_snap(pts), GridSpec(nx=8, ny=8, auto=True))
    assert grid.out_of_bounds == 0
    assert grid.x_min < 10.0 < 12.0 < grid.x_max
    assert grid.y_min < 20.0 < 21.0 < grid.y_max


def test_histogram_grid_validates():
    with pytest.raises(ValidationError):
        GridSpec(x_min=1.0, x_max=0.0)
    with pytest.raises(ValidationError):
        HistogramGrid(x_min=0, x_max=1, y_min=0, y_max=1, nx=2, ny=2, counts=np.ones((2, 2)),
                      out_of_bounds=0, total=5)
    grid = HistogramGrid(x_min=0, x_max=1, y_min=0, y_max=1, nx=2, ny=2, counts=np.array([[3, 0], [0, 0]]),
                         out_of_bounds=1, total=4)
    np.testing.assert_allclose(grid.log_density(), np.log10((grid.counts + 0.5) / 4))


def test_diameter_series_times(ctx):
    series = asyncio.run(ensemble.diameter_series(ctx, ensemble.normal_cloud(5, seed=1), 0.05, 0.01))
    assert [t for t, _ in series] == pytest.approx([0.0, 0.01, 0.02, 0.03, 0.04, 0.05])
    assert all(d > 0.0 for _, d in series)
    with pytest.raises(ValueError):
        asyncio.run(ensemble.diameter_series(ctx, [(0.0, 0.0)], 0.05, 0.0))


def test_sample_measure_moves_between_snapshots():
    c = CocycleContext.build(ModelParams(b=15.0), 1e-3, seed=5)
    snaps = asyncio.run(ensemble.evolve_ensemble(c, ensemble.normal_cloud(1000, seed=5), 5.2, [5.0, 5.1, 5.2]))
    means = np.array([s.mean for s in snaps])
    steps = np.hypot(*np.diff(means, axis=0).T)
    assert np.all(steps > 1e-6)


@pytest.mark.slow
def test_weak_shear_collapses_cloud():
    c = CocycleContext.build(ModelParams(b=2.0), 1e-3, seed=21)
    snap = asyncio.run(ensemble.evolve_ensemble(c, ensemble.normal_cloud(1000, seed=21), 40.0, [40.0]))[0]
    assert snap.diameter < 1e-2


@pytest.mark.slow
def test_strong_shear_keeps_cloud_spread(ctx):
    snap = asyncio.run(ensemble.evolve_ensemble(ctx, ensemble.normal_cloud(1000, seed=22), 40.0, [40.0]))[0]
    assert snap.diameter > 0.5


@pytest.mark.slow
def test_strong_shear_density_is_spread_out():
    grid = GridSpec(nx=256, ny=256)
    cloud = ensemble.normal_cloud(10_000, seed=23)
    shear = CocycleContext.build(ModelParams(b=15.0), 1e-3, seed=23)
    snap = asyncio.run(ensemble.evolve_ensemble(shear, cloud, 50.0, [50.0]))[0]
    spread = ensemble.histogram(snap, grid)
    assert int(spread.counts.sum()) + spread.out_of_bounds == 10_000
    assert spread.occupied_cells() > 200

    weak = CocycleContext.build(ModelParams(b=2.0), 1e-3, seed=23)
    snap = asyncio.run(ensemble.evolve_ensemble(weak, cloud, 50.0, [50.0]))[0]
    assert ensemble.histogram(snap, grid).occupied_cells() < 10
