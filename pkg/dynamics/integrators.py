import math
from typing import Iterator, Optional, Tuple

import numpy as np

from dynamics import kernels
from dynamics.noise import NoisePath
from dynamics.struct import (
    ModelParams,
    NonConvergence,
    SingularTangentMatrix,
    State,
    StepConfig,
    TangentFrame,
)

_CHUNK = 4096


def be_step(params: ModelParams, cfg: StepConfig, X: State, dW) -> State:
    """One backward Euler step: solve X' = X + tau*F(X') + sigma*dW by Newton."""
    cfg.check(params)
    alpha, beta, a, b, sigma = params.unpack()
    x, y, res, ok = kernels.be_step(alpha, beta, a, b, sigma, cfg.tau, float(X[0]), float(X[1]),
                                    float(dW[0]), float(dW[1]), cfg.newton_tol, cfg.newton_max_iter)
    if not ok or not (math.isfinite(x) and math.isfinite(y)):
        raise NonConvergence(res)
    return State(x, y)


def em_step(params: ModelParams, tau: float, X: State, dW) -> State:
    """Explicit Euler-Maruyama step X + tau*F(X) + sigma*dW."""
    if not tau > 0.0:
        raise ValueError(f"tau must be positive, got {tau}")
    alpha, beta, a, b, sigma = params.unpack()
    return State(*kernels.em_step(alpha, beta, a, b, sigma, tau, float(X[0]), float(X[1]), float(dW[0]), float(dW[1])))


def tangent_step(params: ModelParams, cfg: StepConfig, X_next: State, frame: TangentFrame) -> TangentFrame:
    """Solve M(X_next) U' = U for the frame direction U and renormalize."""
    c, s, lg, det, ok = kernels.tangent_solve(params.alpha, params.beta, params.a, params.b, cfg.tau,
                                              float(X_next[0]), float(X_next[1]), frame.c, frame.s)
    if not ok:
        raise SingularTangentMatrix(det)
    return TangentFrame(c, s, frame.log_growth + lg)


def trajectory(
    params: ModelParams,
    cfg: StepConfig,
    path: NoisePath,
    X0: State,
    n: int,
    with_tangent: bool = False,
    U0=(1.0, 0.0),
) -> Iterator[Tuple[State, Optional[TangentFrame]]]:
    """Stream (X_k, frame_k) for k = 0..n, consuming increments dW_1..dW_n of path."""
    if n < 0:
        raise ValueError(f"number of steps must be non-negative, got {n}")
    cfg.check(params)
    X = State.of(X0)
    frame = TangentFrame.from_direction(U0) if with_tangent else None
    yield X, frame
    for start in range(1, n + 1, _CHUNK):
        dws = path.increments(start, min(_CHUNK, n + 1 - start))
        for i, dW in enumerate(dws):
            k = start + i
            try:
                X = be_step(params, cfg, X, dW)
                if frame is not None:
                    frame = tangent_step(params, cfg, X, frame)
            except NonConvergence as e:
                raise NonConvergence(e.residual, step=k) from e
            except SingularTangentMatrix as e:
                raise SingularTangentMatrix(e.det, step=k) from e
            yield X, frame


def evolve(params: ModelParams, cfg: StepConfig, points: np.ndarray, dW: np.ndarray,
           fail_step: Optional[np.ndarray] = None, fail_res: Optional[np.ndarray] = None) -> np.ndarray:
    """Advance an (n, 2) float array of points in place under a shared block of increments.

    Without failure buffers a failed solve raises NonConvergence; with them the
    failing step per point is recorded and the caller decides.
    """
    raise_on_failure = fail_step is None
    if raise_on_failure:
        fail_step = np.full(points.shape[0], -1, dtype=np.int64)
        fail_res = np.zeros(points.shape[0])
    alpha, beta, a, b, sigma = params.unpack()
    kernels.evolve_points(alpha, beta, a, b, sigma, cfg.tau, cfg.newton_tol, cfg.newton_max_iter,
                          points, np.ascontiguousarray(dW, dtype=float), fail_step, fail_res)
    if raise_on_failure:
        bad = np.flatnonzero(fail_step >= 0)
        if bad.size:
            i = int(bad[0])
            raise NonConvergence(float(fail_res[i]), step=int(fail_step[i]) + 1, point=i)
    return points
