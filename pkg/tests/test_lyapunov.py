import asyncio
import math

import numpy as np
import pytest
from pydantic import ValidationError

from analysis import lyapunov
from analysis.struct import LyapunovEstimate, Method
from dynamics import model
from dynamics.integrators import trajectory
from dynamics.noise import NoisePath
from dynamics.struct import ModelParams, StepConfig, StepSizeError


@pytest.fixture
def quiet() -> ModelParams:
    return ModelParams(alpha=1.0, beta=1.0, a=1.0, b=1.0, sigma=0.0)


def test_origin_oracle(quiet):
    """At sigma = 0 the origin is fixed and every step grows U by 1/|M(0) U|."""
    tau = 1e-3
    cfg = StepConfig.admissible(quiet, tau)
    scan = lyapunov.lyap_scan(quiet, cfg, NoisePath(seed=1, tau=tau), X0=(0.0, 0.0), T=1.0, burn_in=0.1)
    expected = -0.5 * math.log((1.0 - tau) ** 2 + tau ** 2) / tau
    assert scan.tangent.lambda_hat == pytest.approx(expected, abs=1e-12)
    assert scan.tangent.std_error == pytest.approx(0.0, abs=1e-10)
    assert scan.fk.lambda_hat == pytest.approx(quiet.alpha, abs=1e-12)
    assert scan.gap == pytest.approx(0.5 * tau * 3.0 * (quiet.alpha ** 2 + quiet.beta ** 2))
    assert scan.final_state == (0.0, 0.0)


def test_origin_tangent_exponent_tends_to_alpha(quiet):
    for tau in (1e-2, 1e-3, 1e-4):
        cfg = StepConfig.admissible(quiet, tau)
        est = lyapunov.lyap_tangent(quiet, cfg, NoisePath(seed=1, tau=tau), X0=(0.0, 0.0), T=1.0)
        assert abs(est.lambda_hat - quiet.alpha) < 2.0 * tau


def test_gap_is_linear_in_tau(quiet):
    gaps = [lyapunov.gap_estimate(quiet, StepConfig.admissible(quiet, tau), NoisePath(seed=1, tau=tau),
                                  X0=(0.0, 0.0), T=1.0) for tau in (1e-2, 5e-3)]
    assert gaps[0] == pytest.approx(2.0 * gaps[1])


def test_estimates_carry_metadata(params, cfg, path):
    scan = lyapunov.lyap_scan(params, cfg, path, T=2.0, burn_in=0.5)
    for est, method in ((scan.tangent, Method.TangentGrowth), (scan.fk, Method.FKAverage)):
        assert est.method == method
        assert est.total_time == pytest.approx(2.0)
        assert est.burn_in_time == pytest.approx(0.5)
        assert est.tau == cfg.tau
        assert est.std_error > 0.0
        assert math.isfinite(est.lambda_hat)


def test_wrappers_agree_with_scan(params, cfg, path):
    scan = lyapunov.lyap_scan(params, cfg, path, T=1.0)
    assert lyapunov.lyap_tangent(params, cfg, path, T=1.0) == scan.tangent
    assert lyapunov.lyap_fk(params, cfg, path, xi0=0.0, T=1.0) == scan.fk


def test_default_burn_in_is_a_tenth(params, cfg, path):
    est = lyapunov.lyap_tangent(params, cfg, path, T=2.0)
    assert est.burn_in_time == pytest.approx(0.2)


def test_scan_validates_inputs(params, cfg, path):
    with pytest.raises(ValueError):
        lyapunov.lyap_scan(params, cfg, path, T=1.0, burn_in=1.0)
    with pytest.raises(ValueError):
        lyapunov.lyap_scan(params, cfg, path, T=1.0, burn_in=-0.1)
    with pytest.raises(ValueError):
        lyapunov.lyap_scan(params, cfg, path, T=0.015, burn_in=0.0)
    with pytest.raises(ValueError):
        lyapunov.lyap_scan(params, cfg, path, U0=(0.0, 0.0), T=1.0)
    with pytest.raises(StepSizeError):
        lyapunov.lyap_scan(params, StepConfig(tau=0.5), NoisePath(seed=1, tau=0.5), T=100.0)


def test_estimate_model_rejects_burn_in_past_end():
    with pytest.raises(ValidationError):
        LyapunovEstimate(lambda_hat=0.1, total_time=1.0, tau=1e-3, burn_in_time=1.0, std_error=0.0,
                         method=Method.TangentGrowth)


def test_separated_from_zero():
    est = LyapunovEstimate(lambda_hat=-0.3, total_time=10.0, tau=1e-3, burn_in_time=1.0, std_error=0.1,
                           method=Method.TangentGrowth)
    assert est.separated_from_zero(2.0)
    assert not est.separated_from_zero(3.0)


def test_lambda0_reference():
    assert lyapunov.lambda0_reference() == pytest.approx(0.28930, abs=5e-5)


def test_multi_seed_matches_sequential(params, cfg):
    seeds = [3, 1, 2]
    scans = asyncio.run(lyapunov.multi_seed(params, cfg, seeds, T=0.5, workers=2))
    for seed, scan in zip(seeds, scans):
        direct = lyapunov.lyap_scan(params, cfg, NoisePath(seed=seed, tau=cfg.tau), T=0.5)
        assert scan.tangent.lambda_hat == direct.tangent.lambda_hat
        assert scan.fk.lambda_hat == direct.fk.lambda_hat


@pytest.mark.slow
@pytest.mark.parametrize("b, sign", [(2.0, -1.0), (10.0, 1.0)])
def test_sign_of_lambda(b, sign):
    p = ModelParams(alpha=1.0, beta=1.0, a=1.0, b=b, sigma=1.0)
    cfg = StepConfig.admissible(p, 1e-3)
    est = lyapunov.lyap_tangent(p, cfg, NoisePath(seed=2024, tau=1e-3), T=500.0)
    assert sign * est.lambda_hat > 0.0
    assert est.separated_from_zero(2.0)


@pytest.mark.slow
@pytest.mark.parametrize("b", [2.0, 10.0])
def test_estimators_agree(b):
    p = ModelParams(b=b)
    cfg = StepConfig.admissible(p, 1e-3)
    scan = lyapunov.lyap_scan(p, cfg, NoisePath(seed=77, tau=1e-3), T=500.0)
    slack = scan.gap + 3.0 * (scan.tangent.std_error + scan.fk.std_error)
    assert abs(scan.tangent.lambda_hat - scan.fk.lambda_hat) <= slack


def test_gap_is_time_average_of_h(shear_params):
    cfg = StepConfig.admissible(shear_params, 1e-3)
    path = NoisePath(seed=31, tau=1e-3)
    scan = lyapunov.lyap_scan(shear_params, cfg, path, T=20.0, burn_in=2.0)
    h = [model.h_bound(shear_params, X)
         for k, (X, _) in enumerate(trajectory(shear_params, cfg, path, (1.0, 0.0), 20_000)) if k > 2000]
    assert len(h) == 18_000
    assert scan.gap > 0.0
    assert scan.gap == pytest.approx(0.5 * 1e-3 * np.mean(h), rel=1e-10)


@pytest.mark.slow
@pytest.mark.parametrize("b, sign", [(2.0, -1.0), (10.0, 1.0)])
def test_sign_agrees_across_ten_seeds(b, sign):
    p = ModelParams(b=b)
    scans = asyncio.run(lyapunov.multi_seed(p, StepConfig.admissible(p, 1e-3), list(range(10)), T=1000.0))
    assert [sign * s.tangent.lambda_hat > 0.0 for s in scans] == [True] * 10


@pytest.mark.slow
def test_lambda_increases_with_shear():
    estimates = []
    for b in (2.0, 4.0, 6.0, 8.0, 10.0, 15.0):
        p = ModelParams(b=b)
        estimates.append(lyapunov.lyap_tangent(p, StepConfig.admissible(p, 1e-3), NoisePath(seed=42, tau=1e-3),
                                               T=1000.0))
    for lo, hi in zip(estimates, estimates[1:]):
        assert hi.lambda_hat > lo.lambda_hat - 2.0 * max(lo.std_error, hi.std_error)
