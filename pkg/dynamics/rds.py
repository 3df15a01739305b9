"""Discrete random dynamical system generated by the backward Euler scheme.

phi_tau(k, omega, x) composes k backward Euler steps over the increments
dW_1..dW_k of omega; theta_{t_l} is NoisePath.shift(l). The conjugated
system runs on X^ = X - sigma*Z*, with Z* the stationary OU sequence.
"""
import math
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from dynamics import kernels
from dynamics.integrators import evolve
from dynamics.noise import NoisePath, OUPath
from dynamics.struct import ModelParams, NonConvergence, State, StepConfig


class Direction(Enum):
    Forward = "forward"
    Inverse = "inverse"


class CocycleContext(BaseModel):
    model_config = ConfigDict(frozen=True)

    params: ModelParams
    cfg: StepConfig
    path: NoisePath
    ou: OUPath

    @model_validator(mode="after")
    def _consistent(self) -> "CocycleContext":
        if self.ou.base != self.path:
            raise ValueError("OU sequence must be driven by the context's noise path (same seed, tau and offset)")
        if self.path.tau != self.cfg.tau:
            raise ValueError(f"noise grid step {self.path.tau} differs from integration step {self.cfg.tau}")
        self.cfg.check(self.params)
        return self

    @classmethod
    def build(cls, params: ModelParams, tau: float, seed: int, gamma_ou: float = 1.0,
              silent: bool = False, **step_kwargs) -> "CocycleContext":
        cfg = StepConfig.admissible(params, tau, **step_kwargs)
        path = NoisePath(seed=seed, tau=tau, silent=silent)
        return cls(params=params, cfg=cfg, path=path, ou=OUPath(gamma_ou=gamma_ou, base=path))

    def shift(self, l: int) -> "CocycleContext":
        return self.model_copy(update={"path": self.path.shift(l), "ou": self.ou.shift(l)})


def _as_points(x) -> np.ndarray:
    pts = np.array(x, dtype=float, copy=True)
    return pts.reshape(-1, 2) if pts.ndim == 1 else pts


def cocycle(ctx: CocycleContext, k: int, x):
    """phi_tau(k, omega, x). Accepts one state or an (n, 2) array of states."""
    if k < 0:
        raise ValueError(f"cocycle is defined for k >= 0, got {k}")
    single = np.ndim(x) == 1
    pts = _as_points(x)
    if k > 0:
        evolve(ctx.params, ctx.cfg, pts, ctx.path.increments(1, k))
    return State(float(pts[0, 0]), float(pts[0, 1])) if single else pts


def pullback_point(ctx: CocycleContext, k: int, x):
    """phi_tau(k, theta_{-t_k} omega, x): the fiber of the attractor seen at time 0."""
    if k < 0:
        raise ValueError(f"pullback is defined for k >= 0, got {k}")
    return cocycle(ctx.shift(-k), k, x)


def transform(ctx: CocycleContext, k: int, x: State, direction: Direction = Direction.Forward) -> State:
    """T(theta_{t_k} omega, x) = x - sigma*Z*_k, or its inverse."""
    z = ctx.ou.ou_value(k)
    sign = -1.0 if direction == Direction.Forward else 1.0
    sigma = ctx.params.sigma
    return State(float(x[0]) + sign * sigma * float(z[0]), float(x[1]) + sign * sigma * float(z[1]))


def _hat_terms(ctx: CocycleContext, k: int):
    sigma = ctx.params.sigma
    z = ctx.ou.ou_value(k + 1)
    zt = ctx.ou.ou_tilde(k + 1)
    return sigma * z, ctx.ou.gamma_ou * sigma * zt


def hat_step(ctx: CocycleContext, k: int, y: State) -> State:
    """Step k -> k+1 of the conjugated equation X^' = y + tau*F(X^' + sigma*Z*_{k+1}) + gamma*sigma*Z~*_{k+1}."""
    shift, push = _hat_terms(ctx, k)
    alpha, beta, a, b, _ = ctx.params.unpack()
    rx = float(y[0]) + push[0]
    ry = float(y[1]) + push[1]
    ux, uy, res, ok = kernels.implicit_solve(alpha, beta, a, b, ctx.cfg.tau, rx, ry, shift[0], shift[1],
                                             rx, ry, ctx.cfg.newton_tol, ctx.cfg.newton_max_iter)
    if not ok or not (math.isfinite(ux) and math.isfinite(uy)):
        raise NonConvergence(res, step=k + 1)
    return State(ux, uy)


def hat_step_composed(ctx: CocycleContext, k: int, y: State) -> State:
    """The same step written as F_tau(y + sigma*Z*_{k+1} + gamma*sigma*Z~*_{k+1}) - sigma*Z*_{k+1}."""
    shift, push = _hat_terms(ctx, k)
    alpha, beta, a, b, _ = ctx.params.unpack()
    rx = float(y[0]) + shift[0] + push[0]
    ry = float(y[1]) + shift[1] + push[1]
    vx, vy, res, ok = kernels.implicit_solve(alpha, beta, a, b, ctx.cfg.tau, rx, ry, 0.0, 0.0,
                                             rx, ry, ctx.cfg.newton_tol, ctx.cfg.newton_max_iter)
    if not ok:
        raise NonConvergence(res, step=k + 1)
    return State(vx - shift[0], vy - shift[1])


def hat_cocycle(ctx: CocycleContext, k: int, y: State) -> State:
    """phi^_tau(k, omega, y), the k-fold composition of hat_step."""
    y = State.of(y)
    for j in range(k):
        y = hat_step(ctx, j, y)
    return y


def verify_conjugacy(ctx: CocycleContext, k: int, x: State) -> float:
    """|phi_tau(k, omega, x) - T^-1(theta_{t_k} omega, phi^_tau(k, omega, T(omega, x)))|."""
    if k < 0:
        raise ValueError(f"conjugacy is defined for k >= 0, got {k}")
    x = State.of(x)
    if k == 0:
        return 0.0
    direct = cocycle(ctx, k, x)
    conjugated = transform(ctx, k, hat_cocycle(ctx, k, transform(ctx, 0, x, Direction.Forward)), Direction.Inverse)
    return math.hypot(direct.x - conjugated.x, direct.y - conjugated.y)


def cocycle_residual(ctx: CocycleContext, k: int, l: int, x: State) -> float:
    """|phi_tau(k+l, omega, x) - phi_tau(k, theta_{t_l} omega, phi_tau(l, omega, x))|."""
    whole = cocycle(ctx, k + l, x)
    split = cocycle(ctx.shift(l), k, cocycle(ctx, l, x))
    return math.hypot(whole.x - split.x, whole.y - split.y)
