import math
from typing import Tuple

from dynamics import kernels
from dynamics.struct import Mat2, ModelParams, PolarState, State

UNIT_TOL = 1e-9


def drift(params: ModelParams, X: State) -> State:
    """Vector field F of the Hopf normal form."""
    return State(*kernels.drift(params.alpha, params.beta, params.a, params.b, float(X[0]), float(X[1])))


def drift_jacobian(params: ModelParams, X: State) -> Mat2:
    return Mat2(*kernels.jacobian(params.alpha, params.beta, params.a, params.b, float(X[0]), float(X[1])))


def tangent_matrix(params: ModelParams, tau: float, X: State) -> Mat2:
    """M(x, y) = I - tau * grad F(x, y), the matrix of both the Newton and the tangent solves."""
    if not tau > 0.0:
        raise ValueError(f"tau must be positive, got {tau}")
    return Mat2(*kernels.tangent_matrix(params.alpha, params.beta, params.a, params.b, tau, float(X[0]), float(X[1])))


def q_hat(params: ModelParams, X: State, xi: float) -> float:
    x, y = float(X[0]), float(X[1])
    cos2 = math.cos(2.0 * xi)
    sin2 = math.sin(2.0 * xi)
    a, b = params.a, params.b
    return (params.alpha - 2.0 * a * (x * x + y * y) - (2.0 * b * cos2 + 2.0 * a * sin2) * x * y
            + (b * sin2 - a * cos2) * (x * x - y * y))


def q_polar(params: ModelParams, gamma: float, psi: float) -> float:
    if gamma < 0.0:
        raise ValueError(f"gamma must be non-negative, got {gamma}")
    g2 = gamma * gamma
    return params.alpha - 2.0 * params.a * g2 + g2 * (params.b * math.sin(2.0 * psi) - params.a * math.cos(2.0 * psi))


def h_bound(params: ModelParams, X: State) -> float:
    return kernels.h_bound(params.alpha, params.beta, params.a, params.b, float(X[0]), float(X[1]))


def direction_drift(params: ModelParams, X: State, C) -> Tuple[float, float]:
    """Drift G(X, C) of the unit tangent direction C = (cos xi, sin xi)."""
    c, s = float(C[0]), float(C[1])
    if abs(math.hypot(c, s) - 1.0) > UNIT_TOL:
        raise ValueError(f"direction must be a unit vector, got ({c}, {s}) with norm {math.hypot(c, s)}")
    x, y = float(X[0]), float(X[1])
    a, b, beta = params.a, params.b, params.beta
    r2 = x * x + y * y
    d2 = x * x - y * y
    xy = x * y
    g1 = (-beta * s - 2.0 * b * s * r2 - (2.0 * a * c * s * s + b * c * c * s - b * s ** 3) * d2
          - (4.0 * b * c * s * s - 2.0 * a * c * c * s + 2.0 * a * s ** 3) * xy)
    g2 = (beta * c + 2.0 * b * c * r2 + (2.0 * a * c * c * s + b * c ** 3 - b * c * s * s) * d2
          + (4.0 * b * c * c * s - 2.0 * a * c ** 3 + 2.0 * a * c * s * s) * xy)
    return g1, g2


def direction_angular_speed(params: ModelParams, X: State, xi: float) -> float:
    """Drift of the direction angle xi; equals G(X, C) . (-sin xi, cos xi)."""
    x, y = float(X[0]), float(X[1])
    gamma = math.hypot(x, y)
    phi = polar_angle(x, y)
    g2 = gamma * gamma
    return params.beta + 2.0 * params.b * g2 + g2 * (
        params.a * math.sin(2.0 * xi - 2.0 * phi) + params.b * math.cos(2.0 * xi - 2.0 * phi))


def polar_angle(x: float, y: float) -> float:
    """atan2 reduced to [0, 2pi); the origin is assigned angle 0."""
    if x == 0.0 and y == 0.0:
        return 0.0
    return math.atan2(y, x) % (2.0 * math.pi)


def polar_state(X: State, xi: float) -> PolarState:
    x, y = float(X[0]), float(X[1])
    phi = polar_angle(x, y)
    return PolarState(math.hypot(x, y), phi, (xi - phi) % math.pi)


def polar_drift(params: ModelParams, polar: PolarState) -> Tuple[float, float, float]:
    """Ito drifts of (gamma, phi, psi). The gamma drift is singular at gamma = 0 when sigma > 0."""
    g, psi = polar.gamma, polar.psi
    sigma = params.sigma
    if g == 0.0 and sigma > 0.0:
        raise ValueError("radial drift is undefined at gamma = 0 for sigma > 0")
    d_gamma = params.alpha * g - params.a * g ** 3 + (sigma * sigma / (2.0 * g) if sigma > 0.0 else 0.0)
    d_phi = params.beta + params.b * g * g
    d_psi = 2.0 * g * g * math.cos(psi) * (params.a * math.sin(psi) + params.b * math.cos(psi))
    return d_gamma, d_phi, d_psi


def polar_diffusion(params: ModelParams, polar: PolarState) -> Tuple[float, float, float]:
    """Noise amplitudes of (gamma, phi, psi) against the radial and angular Brownian motions."""
    if polar.gamma == 0.0:
        raise ValueError("angular diffusion is undefined at gamma = 0")
    return params.sigma, params.sigma / polar.gamma, -params.sigma / polar.gamma


def max_stable_step(params: ModelParams) -> float:
    """Largest admissible step: the state recursion bound intersected with the tangent recursion bound."""
    alpha = abs(params.alpha)
    return min(
        1.0 / (1.0 + 4.0 * alpha),
        params.a / (1.0 + abs(params.a * params.alpha) + abs(params.b * params.beta)),
        1.0 / (1.0 + alpha),
    )


def discrete_cycle_radius(params: ModelParams, tau: float) -> float:
    """Radius of the invariant circle of the noiseless backward Euler map.

    On |X'| = r the step divides X' by 1 - tau*(alpha - a r^2) - i tau*(beta + b r^2),
    so the circle is invariant when that factor has modulus 1. Tends to sqrt(alpha/a)
    as tau -> 0.
    """
    if not params.alpha > 0.0:
        raise ValueError(f"no limit cycle for alpha={params.alpha:g} <= 0")
    if not tau > 0.0:
        raise ValueError(f"tau must be positive, got {tau}")
    a, b, beta = params.a, params.b, params.beta
    p = 1.0 - tau * params.alpha
    qa = tau * tau * (a * a + b * b)
    qb = 2.0 * tau * (a * p + tau * beta * b)
    qc = p * p + tau * tau * beta * beta - 1.0
    disc = qb * qb - 4.0 * qa * qc
    if disc < 0.0:
        raise ValueError(f"no invariant circle at tau={tau:g}")
    q = -0.5 * (qb + math.copysign(math.sqrt(disc), qb))
    roots = [r2 for r2 in (q / qa, qc / q) if r2 > 0.0] if q != 0.0 else []
    if not roots:
        raise ValueError(f"no invariant circle at tau={tau:g}")
    target = params.alpha / a
    return math.sqrt(min(roots, key=lambda r2: abs(r2 - target)))
