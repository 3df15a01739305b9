"""Property suite and acceptance studies: each check returns a CheckResult, the caller decides what a failure means."""
import asyncio
import math
from typing import Iterable, List, Optional, Sequence, Tuple

import logfire
import numpy as np

from analysis import ensemble
from analysis.experiments import bisect_bifurcation, convergence_study
from analysis.lyapunov import lambda0_reference, lyap_tangent, multi_seed
from analysis.struct import CheckResult, GridSpec
from dynamics import model
from dynamics.integrators import be_step, evolve
from dynamics.noise import NoisePath, OUPath
from dynamics.rds import CocycleContext, cocycle_residual, verify_conjugacy
from dynamics.struct import ModelParams, NonConvergence, SignAmbiguous, State, StepConfig

COCYCLE_PAIRS = ((3, 5), (7, 2), (1, 9))


def _random_params(rng: np.random.Generator) -> ModelParams:
    return ModelParams(alpha=rng.uniform(-2, 2), beta=rng.uniform(-2, 2), a=rng.uniform(0.1, 2),
                       b=rng.uniform(-10, 10), sigma=rng.uniform(0, 2))


def _random_states(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    r = radius * np.sqrt(rng.uniform(0, 1, n))
    phi = rng.uniform(0, 2 * math.pi, n)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi)])


def check_oddness(params: ModelParams, rng: np.random.Generator, n: int = 1000) -> CheckResult:
    worst = 0.0
    for x, y in _random_states(rng, n, 3.0):
        f = model.drift(params, (x, y))
        g = model.drift(params, (-x, -y))
        worst = max(worst, abs(f.x + g.x), abs(f.y + g.y))
    return CheckResult.below("drift oddness", worst, 1e-14, n)


def check_jacobian(params: ModelParams, rng: np.random.Generator, n: int = 1000, h: float = 1e-6) -> CheckResult:
    worst = 0.0
    for x, y in _random_states(rng, n, 3.0):
        jac = model.drift_jacobian(params, (x, y)).as_array()
        fd = np.empty((2, 2))
        for col, (dx, dy) in enumerate(((h, 0.0), (0.0, h))):
            plus = model.drift(params, (x + dx, y + dy))
            minus = model.drift(params, (x - dx, y - dy))
            fd[:, col] = (np.array(plus) - np.array(minus)) / (2.0 * h)
        worst = max(worst, float(np.abs(jac - fd).max() / max(1.0, np.abs(jac).max())))
    return CheckResult.below("jacobian vs finite differences", worst, 1e-5, n)


def check_polar_identity(params: ModelParams, rng: np.random.Generator, n: int = 1000) -> CheckResult:
    worst = 0.0
    for (x, y), xi in zip(_random_states(rng, n, 3.0), rng.uniform(0, math.pi, n)):
        polar = model.polar_state((x, y), xi)
        worst = max(worst, abs(model.q_hat(params, (x, y), xi) - model.q_polar(params, polar.gamma, polar.psi)))
    return CheckResult.below("Q-hat polar identity", worst, 1e-12, n)


def check_tangency(params: ModelParams, rng: np.random.Generator, n: int = 1000) -> CheckResult:
    worst = 0.0
    for (x, y), xi in zip(_random_states(rng, n, 3.0), rng.uniform(0, math.pi, n)):
        c, s = math.cos(xi), math.sin(xi)
        g1, g2 = model.direction_drift(params, (x, y), (c, s))
        worst = max(worst, abs(g1 * c + g2 * s))
    return CheckResult.below("direction drift tangency", worst, 1e-9, n)


def check_solvability(rng: np.random.Generator, n: int = 10_000) -> List[CheckResult]:
    """Random (params, X) at 0.99 of the step guard: det M > 0 and Newton converges."""
    bad_det = 0
    bad_newton = 0
    for _ in range(n):
        params = _random_params(rng)
        tau = 0.99 * model.max_stable_step(params)
        cfg = StepConfig(tau=tau)
        X = State.of(_random_states(rng, 1, 3.0)[0])
        if not model.tangent_matrix(params, tau, X).det > 0.0:
            bad_det += 1
        try:
            be_step(params, cfg, X, rng.normal(0.0, math.sqrt(tau), 2))
        except NonConvergence:
            bad_newton += 1
    return [
        CheckResult.below("tangent matrix determinant <= 0", bad_det, 0.5, n),
        CheckResult.below("Newton failures within 50 iterations", bad_newton, 0.5, n),
    ]


def check_lambda0() -> CheckResult:
    return CheckResult.below("lambda0 reference", abs(lambda0_reference() - 0.2893), 5e-4, 1)


def check_origin_oracle() -> CheckResult:
    params = ModelParams(alpha=-1.0, beta=0.0, sigma=0.0)
    cfg = StepConfig.admissible(params, 0.1)
    est = lyap_tangent(params, cfg, NoisePath(seed=0, tau=0.1), X0=(0.0, 0.0), T=10.0, burn_in=1.0)
    return CheckResult.below("origin Lyapunov closed form", abs(est.lambda_hat + math.log(1.1) / 0.1), 1e-12, 1)


def _annulus(rng: np.random.Generator, n: int, r_min: float = 0.1, r_max: float = 3.0) -> np.ndarray:
    r0 = rng.uniform(r_min, r_max, n)
    phi = rng.uniform(0, 2 * math.pi, n)
    return np.column_stack([r0 * np.cos(phi), r0 * np.sin(phi)])


def check_limit_cycle(rng: np.random.Generator, n: int = 100, tau: float = 1e-3, T: float = 40.0) -> CheckResult:
    params = ModelParams(b=10.0, sigma=0.0)
    cfg = StepConfig.admissible(params, tau)
    pts = _annulus(rng, n)
    evolve(params, cfg, pts, np.zeros((round(T / tau), 2)))
    radius = model.discrete_cycle_radius(params, tau)
    worst = float(np.abs(np.hypot(pts[:, 0], pts[:, 1]) - radius).max())
    return CheckResult.below("deterministic limit cycle radius", worst, 1e-3, n)


def check_stable_origin(rng: np.random.Generator, n: int = 100, tau: float = 1e-3, T: float = 40.0) -> CheckResult:
    params = ModelParams(alpha=-1.0, b=10.0, sigma=0.0)
    cfg = StepConfig.admissible(params, tau)
    pts = _annulus(rng, n)
    evolve(params, cfg, pts, np.zeros((round(T / tau), 2)))
    return CheckResult.below("stable origin decay", float(np.hypot(pts[:, 0], pts[:, 1]).max()), 1e-6, n)


def check_ou3(seed: int, tau: float = 1e-3, n: int = 1000) -> CheckResult:
    ou = OUPath(base=NoisePath(seed=seed, tau=tau))
    worst = 0.0
    for k in range(-n // 2, n // 2):
        z = ou.ou_values(k - 1, 2)
        zt = ou.ou_tilde(k)
        res = z[1] - z[0] + ou.gamma_ou * zt - ou.base.increment(k)
        worst = max(worst, float(np.abs(res).max() / max(1.0, np.abs(zt).max())))
    return CheckResult.below("OU3 identity", worst, 1e-14, n)


def check_cocycle(params: ModelParams, tau: float, seeds: Iterable[int], points: np.ndarray,
                  pairs: Sequence[Tuple[int, int]] = COCYCLE_PAIRS) -> CheckResult:
    worst = 0.0
    samples = 0
    for seed in seeds:
        ctx = CocycleContext.build(params, tau, seed)
        for x in points:
            for k, l in pairs:
                worst = max(worst, cocycle_residual(ctx, k, l, State.of(x)) / (1.0 + math.hypot(*x)))
                samples += 1
    return CheckResult.below("cocycle identity", worst, 1e-10, samples)


def check_conjugacy(params: ModelParams, tau: float, seeds: Iterable[int], points: np.ndarray, k: int) -> CheckResult:
    worst = 0.0
    samples = 0
    for seed in seeds:
        ctx = CocycleContext.build(params, tau, seed)
        for x in points:
            worst = max(worst, verify_conjugacy(ctx, k, State.of(x)) / (1.0 + math.hypot(*x)))
            samples += 1
    return CheckResult.below("conjugacy relation", worst, 1e-8, samples)


def verify_identities(params: ModelParams, tau: float, seeds: Sequence[int], k: int,
                      n_points: int = 20) -> List[CheckResult]:
    """Cocycle and conjugacy residual table for the given seeds."""
    points = _random_states(np.random.default_rng(list(seeds)), n_points, 2.0)
    pairs = COCYCLE_PAIRS + ((k, k),)
    return [
        check_cocycle(params, tau, seeds, points, pairs),
        check_conjugacy(params, tau, seeds, points, k),
    ] + [check_ou3(seed, tau) for seed in seeds[:1]]


async def check_synchronization(seed: int, n: int = 1000, tau: float = 1e-3, T: float = 40.0,
                                workers: Optional[int] = None) -> List[CheckResult]:
    """Weak shear collapses a normal cloud, strong shear keeps it spread."""
    cloud = ensemble.normal_cloud(n, seed)
    weak = CocycleContext.build(ModelParams(b=2.0), tau, seed)
    strong = CocycleContext.build(ModelParams(b=10.0), tau, seed)
    (w,) = await ensemble.evolve_ensemble(weak, cloud, T, [T], workers)
    (s,) = await ensemble.evolve_ensemble(strong, cloud, T, [T], workers)
    return [
        CheckResult.below("ensemble diameter at b=2", w.diameter, 1e-2, n),
        CheckResult.above("ensemble diameter at b=10", s.diameter, 0.5, n),
    ]


async def check_lyapunov_sign(seeds: Sequence[int] = (1, 2, 3), tau: float = 1e-3, T: float = 500.0,
                              workers: Optional[int] = None) -> List[CheckResult]:
    """Sign of lambda at b=2 and b=10 beyond 2 SE, and tangent / FK agreement within gap + 3 SE."""
    results = []
    for b, sign in ((2.0, -1.0), (10.0, 1.0)):
        params = ModelParams(b=b)
        scans = await multi_seed(params, StepConfig.admissible(params, tau), seeds, T=T, workers=workers)
        margin = min(sign * s.tangent.lambda_hat - 2.0 * s.tangent.std_error for s in scans)
        excess = max(abs(s.fk.lambda_hat - s.tangent.lambda_hat)
                     - (s.gap + 3.0 * (s.fk.std_error + s.tangent.std_error)) for s in scans)
        results.append(CheckResult.above(f"lambda sign at b={b:g} beyond 2 SE", margin, 0.0, len(seeds)))
        results.append(CheckResult.below(f"tangent vs FK excess over gap + 3 SE at b={b:g}", excess, 0.0, len(seeds)))
    return results


async def check_bifurcation(seeds: Sequence[int] = (1, 2, 3), tau: float = 1e-3, T: float = 500.0,
                            workers: Optional[int] = None) -> CheckResult:
    try:
        b_star = await bisect_bifurcation(ModelParams(), 4.0, 7.0, tau, T, seeds=seeds, workers=workers)
    except SignAmbiguous as e:
        logfire.warning(f"CLI -- selftest bisection stopped: {e}")
        b_star = math.nan
    return CheckResult.below("bifurcation point distance from 5.5", abs(b_star - 5.5), 1.0, len(seeds))


async def check_strong_order(n_seeds: int = 256, workers: Optional[int] = None) -> List[CheckResult]:
    taus = [0.2 * 2.0 ** -k for k in range(5, 10)]
    report = await convergence_study(ModelParams(b=2.0), taus, ref_refinement=256, T=1.0, n_seeds=n_seeds,
                                     workers=workers)
    return [
        CheckResult.above("strong order of the state", report.fitted_order_state, 0.45, n_seeds),
        CheckResult.above("strong order of the direction", report.fitted_order_direction, 0.45, n_seeds),
    ]


async def check_srb(seed: int, n: int = 10_000, tau: float = 1e-3, T: float = 50.0,
                    workers: Optional[int] = None) -> List[CheckResult]:
    """Occupied cells of the b=15 sample measure against the collapsed b=2 control on a 256x256 grid."""
    grid = GridSpec(nx=256, ny=256)
    cloud = ensemble.normal_cloud(n, seed)
    (spread,) = await ensemble.evolve_ensemble(CocycleContext.build(ModelParams(b=15.0), tau, seed), cloud, T, [T],
                                               workers)
    (control,) = await ensemble.evolve_ensemble(CocycleContext.build(ModelParams(b=2.0), tau, seed), cloud, T, [T],
                                                workers)
    hist = ensemble.histogram(spread, grid)
    lost = abs(int(hist.counts.sum()) + hist.out_of_bounds - n)
    return [
        CheckResult.below("histogram mass conservation", lost, 0.5, n),
        CheckResult.above("occupied cells at b=15", hist.occupied_cells(), 200, n),
        CheckResult.below("occupied cells at b=2", ensemble.histogram(control, grid).occupied_cells(), 10, n),
    ]


def _property_checks(seed: int) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    params = ModelParams(b=10.0)
    return [
        check_oddness(params, rng),
        check_jacobian(params, rng),
        check_polar_identity(params, rng),
        check_tangency(params, rng),
        *check_solvability(rng),
        check_lambda0(),
        check_origin_oracle(),
        check_limit_cycle(rng),
        check_stable_origin(rng),
        *verify_identities(params, 1e-3, [seed, seed + 1], k=10),
    ]


async def run_selftest(seed: int = 0, workers: Optional[int] = None) -> List[CheckResult]:
    """Property checks followed by the acceptance studies at CI scale."""
    seeds = (seed + 1, seed + 2, seed + 3)
    results = await asyncio.to_thread(_property_checks, seed)
    results += await check_synchronization(seed, workers=workers)
    results += await check_lyapunov_sign(seeds, workers=workers)
    results.append(await check_bifurcation(seeds, workers=workers))
    results += await check_strong_order(workers=workers)
    results += await check_srb(seed, workers=workers)
    for r in results:
        log = logfire.info if r.passed else logfire.warning
        log(f"CLI -- selftest {r.name}: {r.value:.3e} (threshold {r.threshold:.1e}, {r.samples} samples)")
    return results
