"""Studies built on the estimators: lambda sweeps over (alpha, b), bisection of the
sign change in b, and the strong convergence order of the backward Euler scheme."""
import asyncio
import math
from typing import List, Literal, Optional, Sequence, Tuple

import logfire
import numpy as np

from analysis.lyapunov import lyap_tangent, multi_seed
from analysis.struct import ConvergenceReport, LyapunovEstimate, SweepResult
from analysis.workers import gather_bounded
from dynamics import kernels
from dynamics.noise import NoisePath, aggregate_increments, refine_increments
from dynamics.struct import (
    HopfError,
    ModelParams,
    NonConvergence,
    SignAmbiguous,
    SingularTangentMatrix,
    StepConfig,
)

SEPARATION_SE = 2.0
MIN_BISECT_SEEDS = 3
MIN_REF_REFINEMENT = 64
DYADIC_TOL = 1e-9


def cell_seed(seed: int, i: int, j: int) -> int:
    """Seed of sweep cell (i, j), independent of the order cells are run in."""
    return int(np.random.SeedSequence([seed, i, j]).generate_state(1, np.uint64)[0])


def _estimate_cell(params: ModelParams, tau: float, seed: int, T: float, burn_in: Optional[float]) -> LyapunovEstimate:
    cfg = StepConfig.admissible(params, tau)
    return lyap_tangent(params, cfg, NoisePath(seed=seed, tau=tau), T=T, burn_in=burn_in)


def zero_border(alpha_grid: Sequence[float], b_grid: Sequence[float], lam: np.ndarray) -> List[Tuple[float, float]]:
    """Points (alpha, b) where lambda changes sign between neighbouring cells, by linear interpolation."""
    border = []
    for i, alpha in enumerate(alpha_grid):
        for j in range(len(b_grid) - 1):
            l0, l1 = lam[i, j], lam[i, j + 1]
            if np.isfinite(l0) and np.isfinite(l1) and l0 * l1 < 0.0:
                border.append((alpha, b_grid[j] + (b_grid[j + 1] - b_grid[j]) * l0 / (l0 - l1)))
    for j, b in enumerate(b_grid):
        for i in range(len(alpha_grid) - 1):
            l0, l1 = lam[i, j], lam[i + 1, j]
            if np.isfinite(l0) and np.isfinite(l1) and l0 * l1 < 0.0:
                border.append((alpha_grid[i] + (alpha_grid[i + 1] - alpha_grid[i]) * l0 / (l0 - l1), b))
    return sorted(border)


async def scan_lambda(
    params_base: ModelParams,
    alpha_grid: Sequence[float],
    b_grid: Sequence[float],
    tau: float,
    T: float,
    seed: int,
    burn_in: Optional[float] = None,
    workers: Optional[int] = None,
) -> SweepResult:
    """lyap_tangent on every (alpha, b) cell; failed cells are recorded as NaN instead of aborting the sweep."""
    alpha_grid = sorted(float(v) for v in alpha_grid)
    b_grid = sorted(float(v) for v in b_grid)
    cells = [(i, j, params_base.model_copy(update={"alpha": alpha, "b": b}))
             for i, alpha in enumerate(alpha_grid) for j, b in enumerate(b_grid)]
    for _, _, p in cells:
        StepConfig.admissible(p, tau)

    logfire.info(f"SCAN -- {len(alpha_grid)}x{len(b_grid)} cells, tau={tau:g} T={T:g} seed={seed:#x}")
    calls = [(_estimate_cell, (p, tau, cell_seed(seed, i, j), T, burn_in)) for i, j, p in cells]
    results = await gather_bounded(calls, workers, return_exceptions=True)

    lam = np.full((len(alpha_grid), len(b_grid)), np.nan)
    se = np.full_like(lam, np.nan)
    failed = []
    for (i, j, p), r in zip(cells, results):
        if isinstance(r, HopfError):
            logfire.warning(f"SCAN -- cell alpha={p.alpha:g} b={p.b:g} failed: {r}")
            failed.append((i, j, str(r)))
            continue
        if isinstance(r, BaseException):
            raise r
        lam[i, j] = r.lambda_hat
        se[i, j] = r.std_error

    border = zero_border(alpha_grid, b_grid, lam)
    logfire.info(f"SCAN -- done, {len(failed)} failed cells, {len(border)} border points")
    return SweepResult(alpha_grid=alpha_grid, b_grid=b_grid, lambda_matrix=lam, std_errors=se,
                       tau=tau, T=T, seed=seed, border=border, failed=failed)


async def _seed_averaged(params: ModelParams, tau: float, seeds: Sequence[int], T: float,
                         burn_in: Optional[float], workers: Optional[int]) -> Tuple[float, float]:
    cfg = StepConfig.admissible(params, tau)
    scans = await multi_seed(params, cfg, seeds, T=T, burn_in=burn_in, workers=workers)
    lams = np.array([s.tangent.lambda_hat for s in scans])
    ses = np.array([s.tangent.std_error for s in scans])
    return float(lams.mean()), float(math.sqrt((ses ** 2).sum()) / len(ses))


async def bisect_bifurcation(
    params_base: ModelParams,
    b_lo: float = 4.0,
    b_hi: float = 7.0,
    tau: float = 1e-3,
    T: float = 500.0,
    tol_b: float = 0.25,
    seeds: Sequence[int] = (1, 2, 3),
    burn_in: Optional[float] = None,
    workers: Optional[int] = None,
) -> float:
    """Bisect on the sign of the seed-averaged lambda(b) until the bracket is narrower than tol_b."""
    if len(seeds) < MIN_BISECT_SEEDS:
        raise ValueError(f"bisection needs at least {MIN_BISECT_SEEDS} seeds, got {len(seeds)}")
    if not (b_lo < b_hi and tol_b > 0.0):
        raise ValueError(f"need b_lo < b_hi and tol_b > 0, got [{b_lo}, {b_hi}] tol_b={tol_b}")

    async def at(b: float) -> Tuple[float, float]:
        return await _seed_averaged(params_base.model_copy(update={"b": b}), tau, seeds, T, burn_in, workers)

    (lam_lo, se_lo), (lam_hi, se_hi) = await asyncio.gather(at(b_lo), at(b_hi))
    for b, lam, se in ((b_lo, lam_lo, se_lo), (b_hi, lam_hi, se_hi)):
        if abs(lam) <= SEPARATION_SE * se:
            raise SignAmbiguous(b, lam, se)
    if not (lam_lo < 0.0 < lam_hi):
        raise ValueError(f"lambda does not change sign on [{b_lo}, {b_hi}]: {lam_lo:.4g} and {lam_hi:.4g}")

    logfire.info(f"BISECT -- bracket [{b_lo:g}, {b_hi:g}] lambda {lam_lo:.4g} .. {lam_hi:.4g}")
    lo, hi = b_lo, b_hi
    while hi - lo > tol_b:
        mid = 0.5 * (lo + hi)
        lam, se = await at(mid)
        if abs(lam) <= SEPARATION_SE * se:
            logfire.warning(f"BISECT -- lambda({mid:g}) = {lam:.4g} +- {se:.2g} is not separated from 0")
        if lam < 0.0:
            lo = mid
        else:
            hi = mid
        logfire.info(f"BISECT -- lambda({mid:g}) = {lam:.4g}, bracket [{lo:g}, {hi:g}]")
    return 0.5 * (lo + hi)


def _dyadic_ratio(tau: float, tau_fine: float) -> int:
    m = round(tau / tau_fine)
    if m < 1 or abs(tau - m * tau_fine) > DYADIC_TOL * tau or m & (m - 1):
        raise ValueError(f"tau={tau:g} is not a power-of-two multiple of the reference step {tau_fine:g}")
    return m


def _raise_status(status: int, k: int, val: float) -> None:
    if status == kernels.NON_CONVERGENCE:
        raise NonConvergence(val, step=k + 1)
    if status == kernels.SINGULAR:
        raise SingularTangentMatrix(val, step=k + 1)


def _be_path(params: ModelParams, tau: float, dw: np.ndarray, X0, U0) -> Tuple[np.ndarray, np.ndarray]:
    cfg = StepConfig.admissible(params, tau)
    alpha, beta, a, b, sigma = params.unpack()
    n = dw.shape[0]
    states = np.empty((n + 1, 2))
    dirs = np.empty((n + 1, 2))
    status, k, val = kernels.be_tangent_path(alpha, beta, a, b, sigma, tau, cfg.newton_tol, cfg.newton_max_iter,
                                             float(X0[0]), float(X0[1]), float(U0[0]), float(U0[1]), dw, states, dirs)
    _raise_status(status, k, val)
    return states, dirs


def _convergence_seed(params: ModelParams, taus: List[float], ms: List[int], tau_fine: float, T: float,
                      seed: int, X0, U0, reference_scheme: str) -> Tuple[np.ndarray, np.ndarray]:
    m_max = ms[-1]
    m_min = ms[0]
    n_coarse = round(T / taus[-1])
    coarse = NoisePath(seed=seed, tau=taus[-1]).increments(1, n_coarse)
    fine = refine_increments(coarse, taus[-1], int(m_max).bit_length() - 1, seed)

    if reference_scheme == "em":
        n_ref = fine.shape[0] // m_min
        ref_states = np.empty((n_ref + 1, 2))
        ref_dirs = np.empty((n_ref + 1, 2))
        alpha, beta, a, b, sigma = params.unpack()
        kernels.em_tangent_path(alpha, beta, a, b, sigma, tau_fine, float(X0[0]), float(X0[1]),
                                float(U0[0]), float(U0[1]), fine, m_min, ref_states, ref_dirs)
    else:
        ref_states, ref_dirs = _be_path(params, tau_fine, fine, X0, U0)
        ref_states, ref_dirs = ref_states[::m_min], ref_dirs[::m_min]

    err_state = np.empty(len(taus))
    err_dir = np.empty(len(taus))
    for i, (tau, m) in enumerate(zip(taus, ms)):
        states, dirs = _be_path(params, tau, aggregate_increments(fine, m), X0, U0)
        r = m // m_min
        rs, rd = ref_states[::r], ref_dirs[::r]
        err_state[i] = np.linalg.norm(states - rs, axis=1).max()
        err_dir[i] = np.minimum(np.linalg.norm(dirs - rd, axis=1), np.linalg.norm(dirs + rd, axis=1)).max()
    return err_state, err_dir


def fit_order(taus: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of log(error) against log(tau); NaN when an error is not positive."""
    errors = np.asarray(errors, dtype=float)
    if len(taus) < 2 or not np.all(errors > 0.0):
        return math.nan
    return float(np.polyfit(np.log(taus), np.log(errors), 1)[0])


async def convergence_study(
    params: ModelParams,
    tau_list: Sequence[float],
    ref_refinement: int = 256,
    T: float = 1.0,
    n_seeds: int = 256,
    seed: int = 0,
    X0=(0.5, 0.5),
    U0=(1.0, 0.0),
    reference_scheme: Literal["em", "be"] = "em",
    workers: Optional[int] = None,
) -> ConvergenceReport:
    """RMS over seeds of the sup-in-time state and direction errors against a fine reference.

    Every tau must be a power-of-two multiple of min(tau_list) / ref_refinement.
    The finest increments come from Brownian-bridge halving of the coarsest
    path and every level integrates their block sums. reference_scheme="be"
    swaps the explicit reference for backward Euler at the fine step.
    """
    if reference_scheme not in ("em", "be"):
        raise ValueError(f"unknown reference scheme {reference_scheme!r}")
    min_refinement = MIN_REF_REFINEMENT if reference_scheme == "em" else 1
    if ref_refinement < min_refinement:
        raise ValueError(f"ref_refinement must be at least {min_refinement}, got {ref_refinement}")
    if n_seeds < 1:
        raise ValueError(f"need at least one seed, got {n_seeds}")
    taus = sorted(float(t) for t in tau_list)
    cfgs = [StepConfig.admissible(params, tau) for tau in taus]
    tau_fine = taus[0] / ref_refinement
    ms = [_dyadic_ratio(tau, tau_fine) for tau in taus]
    n_coarse = round(T / taus[-1])
    if n_coarse < 1 or abs(T - n_coarse * taus[-1]) > DYADIC_TOL * T:
        raise ValueError(f"T={T:g} is not a multiple of the coarsest step {taus[-1]:g}")

    seeds = np.random.SeedSequence(seed).generate_state(n_seeds, np.uint64).tolist()
    logfire.info(f"CONVERGE -- {len(taus)} steps, reference tau={tau_fine:g} ({reference_scheme}), {n_seeds} seeds")
    calls = [(_convergence_seed, (params, taus, ms, tau_fine, T, s, X0, U0, reference_scheme)) for s in seeds]
    errors = await gather_bounded(calls, workers)

    err_state = np.array([e[0] for e in errors])
    err_dir = np.array([e[1] for e in errors])
    rms_state = np.sqrt((err_state ** 2).mean(axis=0))
    rms_dir = np.sqrt((err_dir ** 2).mean(axis=0))
    order_state = fit_order(taus, rms_state)
    order_dir = fit_order(taus, rms_dir)
    if math.isnan(order_state) or math.isnan(order_dir):
        logfire.warning("CONVERGE -- order fit undefined, some RMS errors are zero")
    logfire.info(f"CONVERGE -- order state {order_state:.3f}, direction {order_dir:.3f}")
    return ConvergenceReport(tau_list=[c.tau for c in cfgs], rms_errors_state=rms_state.tolist(),
                             rms_errors_direction=rms_dir.tolist(), fitted_order_state=order_state,
                             fitted_order_direction=order_dir, seeds=n_seeds, tau_reference=tau_fine)
