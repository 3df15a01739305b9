import math

import numpy as np
import pytest
from scipy.optimize import root

from conftest import random_states
from dynamics import model
from dynamics.integrators import be_step, em_step, evolve, tangent_step, trajectory
from dynamics.noise import NoisePath
from dynamics.struct import (
    ModelParams,
    NonConvergence,
    SingularTangentMatrix,
    State,
    StepConfig,
    StepSizeError,
    TangentFrame,
)


def test_be_step_fixed_point_at_origin(params, cfg):
    assert be_step(params, cfg, State(0.0, 0.0), (0.0, 0.0)) == (0.0, 0.0)


def test_be_step_matches_root_finder(shear_params, rng):
    cfg = StepConfig.admissible(shear_params, 0.01)
    for X, dW in zip(random_states(rng, 50), rng.normal(0.0, 0.1, (50, 2))):
        r = X + shear_params.sigma * dW
        sol = root(lambda u: u - cfg.tau * np.array(model.drift(shear_params, u)) - r, r, tol=1e-14)
        got = be_step(shear_params, cfg, State.of(X), dW)
        np.testing.assert_allclose(got, sol.x, atol=1e-8)
        residual = np.array(got) - cfg.tau * np.array(model.drift(shear_params, got)) - r
        assert np.abs(residual).max() < 1e-12


def test_be_step_rejects_large_step(params):
    cfg = StepConfig(tau=0.5)
    with pytest.raises(StepSizeError) as err:
        be_step(params, cfg, State(0.0, 0.0), (0.0, 0.0))
    assert err.value.limit == pytest.approx(model.max_stable_step(params))


def test_em_step_is_explicit(shear_params):
    X, dW = State(0.3, -0.4), (0.01, 0.02)
    f = model.drift(shear_params, X)
    expected = (X.x + 0.01 * f.x + shear_params.sigma * dW[0], X.y + 0.01 * f.y + shear_params.sigma * dW[1])
    assert em_step(shear_params, 0.01, X, dW) == pytest.approx(expected, abs=1e-15)
    with pytest.raises(ValueError):
        em_step(shear_params, 0.0, X, dW)


def test_explicit_and_implicit_steps_differ_at_second_order(params, rng):
    p = params.model_copy(update={"sigma": 0.0})
    r0 = rng.uniform(0.5, 2.0, 20)
    phi = rng.uniform(0.0, 2.0 * math.pi, 20)
    for x, y in zip(r0 * np.cos(phi), r0 * np.sin(phi)):
        errs = []
        for tau in (4e-3, 2e-3, 1e-3):
            be = be_step(p, StepConfig.admissible(p, tau), State(x, y), (0.0, 0.0))
            em = em_step(p, tau, State(x, y), (0.0, 0.0))
            errs.append(math.hypot(be.x - em.x, be.y - em.y))
        assert 3.5 < errs[0] / errs[1] < 4.5
        assert 3.5 < errs[1] / errs[2] < 4.5


def test_tangent_step_at_origin_pure_growth():
    p = ModelParams(alpha=1.0, beta=0.0, a=1.0, b=1.0)
    cfg = StepConfig(tau=0.1)
    frame = tangent_step(p, cfg, State(0.0, 0.0), TangentFrame(1.0, 0.0))
    assert (frame.c, frame.s) == pytest.approx((1.0, 0.0))
    assert frame.log_growth == pytest.approx(-math.log(1.0 - 0.1))


def test_tangent_step_at_origin_pure_rotation():
    p = ModelParams(alpha=0.0, beta=2.0, a=1.0, b=1.0)
    tau = 0.05
    frame = tangent_step(p, StepConfig(tau=tau), State(0.0, 0.0), TangentFrame(1.0, 0.0, 0.3))
    assert frame.log_growth == pytest.approx(0.3 - 0.5 * math.log(1.0 + (2.0 * tau) ** 2))
    assert math.atan2(frame.s, frame.c) == pytest.approx(math.atan(2.0 * tau))


def test_tangent_step_keeps_unit_norm(shear_params, rng):
    cfg = StepConfig.admissible(shear_params, 1e-2)
    for X, xi in zip(random_states(rng, 100), rng.uniform(0, math.pi, 100)):
        frame = tangent_step(shear_params, cfg, State.of(X), TangentFrame(math.cos(xi), math.sin(xi)))
        assert math.hypot(frame.c, frame.s) == pytest.approx(1.0, abs=1e-14)


def test_tangent_step_singular_matrix():
    p = ModelParams(alpha=1.0, beta=0.0, a=1.0, b=0.0)
    with pytest.raises(SingularTangentMatrix):
        tangent_step(p, StepConfig(tau=1.0), State(0.0, 0.0), TangentFrame(1.0, 0.0))


def test_trajectory_zero_steps(params, cfg, path):
    out = list(trajectory(params, cfg, path, (0.2, 0.1), 0, with_tangent=True, U0=(0.0, 3.0)))
    assert out == [(State(0.2, 0.1), TangentFrame(0.0, 1.0, 0.0))]


def test_trajectory_rejects_negative_steps(params, cfg, path):
    with pytest.raises(ValueError):
        list(trajectory(params, cfg, path, (0.0, 0.0), -1))


def test_trajectory_decays_for_stable_origin():
    p = ModelParams(alpha=-1.0, sigma=0.0)
    cfg = StepConfig.admissible(p, 0.01)
    *_, (X, _) = trajectory(p, cfg, NoisePath(seed=1, tau=0.01), (1.0, 1.0), 2000)
    assert X.norm < 1e-6


def test_stable_origin_absorbs_every_start(rng):
    p = ModelParams(alpha=-1.0, b=10.0, sigma=0.0)
    cfg = StepConfig.admissible(p, 1e-3)
    r0 = rng.uniform(0.1, 3.0, 100)
    phi = rng.uniform(0.0, 2.0 * math.pi, 100)
    pts = np.column_stack([r0 * np.cos(phi), r0 * np.sin(phi)])
    evolve(p, cfg, pts, np.zeros((40_000, 2)))
    assert np.hypot(pts[:, 0], pts[:, 1]).max() < 1e-6


def test_trajectory_reports_failing_step(params, path):
    cfg = StepConfig.admissible(params, 1e-3, newton_tol=1e-300, newton_max_iter=1)
    with pytest.raises(NonConvergence) as err:
        list(trajectory(params, cfg, path, (0.5, 0.5), 10))
    assert err.value.step == 1


def test_trajectory_log_growth_matches_linear_solves(shear_params, path):
    cfg = StepConfig.admissible(shear_params, 1e-3)
    n = 500
    steps = list(trajectory(shear_params, cfg, path, (0.5, -0.2), n, with_tangent=True, U0=(1.0, 1.0)))
    u = np.array([1.0, 1.0]) / math.sqrt(2.0)
    total = 0.0
    for X, _ in steps[1:]:
        u = np.linalg.solve(model.tangent_matrix(shear_params, cfg.tau, X).as_array(), u)
        norm = np.linalg.norm(u)
        total += math.log(norm)
        u /= norm
    final = steps[-1][1]
    assert final.log_growth == pytest.approx(total, rel=1e-10, abs=1e-12)
    np.testing.assert_allclose([final.c, final.s], u, atol=1e-10)


def test_evolve_reports_failures_per_point(params):
    cfg = StepConfig.admissible(params, 1e-3, newton_tol=1e-300, newton_max_iter=1)
    pts = np.array([[0.0, 0.0], [0.5, 0.5]])
    dW = np.zeros((3, 2))
    fail_step = np.full(2, -1, dtype=np.int64)
    fail_res = np.zeros(2)
    evolve(params, cfg, pts, dW, fail_step, fail_res)
    assert fail_step[0] == -1
    assert fail_step[1] == 0
    np.testing.assert_array_equal(pts[1], [0.5, 0.5])
    with pytest.raises(NonConvergence) as err:
        evolve(params, cfg, np.array([[0.0, 0.0], [0.5, 0.5]]), dW)
    assert (err.value.step, err.value.point) == (1, 1)
