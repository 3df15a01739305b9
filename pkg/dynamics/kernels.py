"""Compiled scalar kernels shared by every integrator entry point.

All functions take the model coefficients unpacked as floats so they can be
called from Python and from other kernels alike. Nothing here raises: failures
are reported through status flags and converted to typed errors by callers.
"""
import math

from numba import njit

OK = 0
NON_CONVERGENCE = 1
SINGULAR = 2

SINGULAR_DET = 1e-14
_MAX_BACKTRACK = 40


@njit(cache=True, nogil=True)
def drift(alpha, beta, a, b, x, y):
    r2 = x * x + y * y
    fx = alpha * x - beta * y + r2 * (-a * x - b * y)
    fy = beta * x + alpha * y + r2 * (b * x - a * y)
    return fx, fy


@njit(cache=True, nogil=True)
def jacobian(alpha, beta, a, b, x, y):
    xx = x * x
    yy = y * y
    xy = x * y
    j11 = alpha - 3.0 * a * xx - a * yy - 2.0 * b * xy
    j12 = -beta - b * xx - 3.0 * b * yy - 2.0 * a * xy
    j21 = beta + 3.0 * b * xx + b * yy - 2.0 * a * xy
    j22 = alpha - a * xx - 3.0 * a * yy + 2.0 * b * xy
    return j11, j12, j21, j22


@njit(cache=True, nogil=True)
def tangent_matrix(alpha, beta, a, b, tau, x, y):
    j11, j12, j21, j22 = jacobian(alpha, beta, a, b, x, y)
    return 1.0 - tau * j11, -tau * j12, -tau * j21, 1.0 - tau * j22


@njit(cache=True, nogil=True)
def q_hat_cs(alpha, a, b, x, y, c, s):
    cos2 = c * c - s * s
    sin2 = 2.0 * c * s
    return (alpha - 2.0 * a * (x * x + y * y) - (2.0 * b * cos2 + 2.0 * a * sin2) * x * y
            + (b * sin2 - a * cos2) * (x * x - y * y))


@njit(cache=True, nogil=True)
def h_bound(alpha, beta, a, b, x, y):
    r2 = x * x + y * y
    return 3.0 * (alpha * alpha + beta * beta) + 15.0 * (a * a + b * b) * r2 * r2


@njit(cache=True, nogil=True)
def implicit_solve(alpha, beta, a, b, tau, rx, ry, zx, zy, ux, uy, tol, max_iter):
    """Solve u - tau*F(u + z) = r for u by backtracking Newton, starting at (ux, uy).

    Returns (ux, uy, residual, converged).
    """
    fx, fy = drift(alpha, beta, a, b, ux + zx, uy + zy)
    ex = ux - tau * fx - rx
    ey = uy - tau * fy - ry
    res = math.sqrt(ex * ex + ey * ey)
    it = 0
    while not res < tol:
        if it >= max_iter:
            return ux, uy, res, False
        it += 1
        m11, m12, m21, m22 = tangent_matrix(alpha, beta, a, b, tau, ux + zx, uy + zy)
        det = m11 * m22 - m12 * m21
        dx = (m22 * ex - m12 * ey) / det
        dy = (m11 * ey - m21 * ex) / det
        lam = 1.0
        nx = ux - dx
        ny = uy - dy
        nex = ex
        ney = ey
        nres = res
        for _ in range(_MAX_BACKTRACK):
            nx = ux - lam * dx
            ny = uy - lam * dy
            fx, fy = drift(alpha, beta, a, b, nx + zx, ny + zy)
            nex = nx - tau * fx - rx
            ney = ny - tau * fy - ry
            nres = math.sqrt(nex * nex + ney * ney)
            if nres < res:
                break
            lam *= 0.5
        ux = nx
        uy = ny
        ex = nex
        ey = ney
        res = nres
    return ux, uy, res, True


@njit(cache=True, nogil=True)
def be_step(alpha, beta, a, b, sigma, tau, x, y, dwx, dwy, tol, max_iter):
    rx = x + sigma * dwx
    ry = y + sigma * dwy
    return implicit_solve(alpha, beta, a, b, tau, rx, ry, 0.0, 0.0, rx, ry, tol, max_iter)


@njit(cache=True, nogil=True)
def em_step(alpha, beta, a, b, sigma, tau, x, y, dwx, dwy):
    fx, fy = drift(alpha, beta, a, b, x, y)
    return x + tau * fx + sigma * dwx, y + tau * fy + sigma * dwy


@njit(cache=True, nogil=True)
def tangent_solve(alpha, beta, a, b, tau, x, y, c, s):
    """Solve M(x, y) U' = (c, s); returns the unit direction of U', log|U'|, det M and a flag."""
    m11, m12, m21, m22 = tangent_matrix(alpha, beta, a, b, tau, x, y)
    det = m11 * m22 - m12 * m21
    if not abs(det) >= SINGULAR_DET:
        return c, s, 0.0, det, False
    uc = (m22 * c - m12 * s) / det
    us = (m11 * s - m21 * c) / det
    r = math.sqrt(uc * uc + us * us)
    return uc / r, us / r, math.log(r), det, True


@njit(cache=True, nogil=True)
def tangent_scan(alpha, beta, a, b, sigma, tau, tol, max_iter, x, y, c, s, dw, grow, q, h):
    """Backward Euler plus tangent recursion over the increments in dw.

    Fills per-step log growth, Q-hat and H values. Returns the final state and
    direction, a status code, the index of the failing step (or the number of
    steps on success) and the offending residual or determinant.
    """
    n = dw.shape[0]
    for k in range(n):
        nx, ny, res, ok = be_step(alpha, beta, a, b, sigma, tau, x, y, dw[k, 0], dw[k, 1], tol, max_iter)
        if not ok:
            return x, y, c, s, NON_CONVERGENCE, k, res
        nc, ns, lg, det, ok = tangent_solve(alpha, beta, a, b, tau, nx, ny, c, s)
        if not ok:
            return nx, ny, c, s, SINGULAR, k, det
        x = nx
        y = ny
        c = nc
        s = ns
        grow[k] = lg
        q[k] = q_hat_cs(alpha, a, b, x, y, c, s)
        h[k] = h_bound(alpha, beta, a, b, x, y)
    return x, y, c, s, OK, n, 0.0


@njit(cache=True, nogil=True)
def be_tangent_path(alpha, beta, a, b, sigma, tau, tol, max_iter, x, y, c, s, dw, states, dirs):
    """Like tangent_scan but records every state and direction, states[0] being the start."""
    n = dw.shape[0]
    states[0, 0] = x
    states[0, 1] = y
    dirs[0, 0] = c
    dirs[0, 1] = s
    for k in range(n):
        nx, ny, res, ok = be_step(alpha, beta, a, b, sigma, tau, x, y, dw[k, 0], dw[k, 1], tol, max_iter)
        if not ok:
            return NON_CONVERGENCE, k, res
        nc, ns, lg, det, ok = tangent_solve(alpha, beta, a, b, tau, nx, ny, c, s)
        if not ok:
            return SINGULAR, k, det
        x = nx
        y = ny
        c = nc
        s = ns
        states[k + 1, 0] = x
        states[k + 1, 1] = y
        dirs[k + 1, 0] = c
        dirs[k + 1, 1] = s
    return OK, n, 0.0


@njit(cache=True, nogil=True)
def em_tangent_path(alpha, beta, a, b, sigma, tau, x, y, c, s, dw, stride, states, dirs):
    """Explicit Euler for state and tangent, recording every stride-th step."""
    states[0, 0] = x
    states[0, 1] = y
    dirs[0, 0] = c
    dirs[0, 1] = s
    n = dw.shape[0]
    for k in range(n):
        j11, j12, j21, j22 = jacobian(alpha, beta, a, b, x, y)
        uc = c + tau * (j11 * c + j12 * s)
        us = s + tau * (j21 * c + j22 * s)
        r = math.sqrt(uc * uc + us * us)
        c = uc / r
        s = us / r
        x, y = em_step(alpha, beta, a, b, sigma, tau, x, y, dw[k, 0], dw[k, 1])
        if (k + 1) % stride == 0:
            idx = (k + 1) // stride
            states[idx, 0] = x
            states[idx, 1] = y
            dirs[idx, 0] = c
            dirs[idx, 1] = s
    return x, y


@njit(cache=True, nogil=True)
def evolve_points(alpha, beta, a, b, sigma, tau, tol, max_iter, pts, dw, fail_step, fail_res):
    """Advance every row of pts in place under the same increments.

    Rows holding NaN are skipped. A row whose Newton solve fails keeps its last
    accepted value and gets the failing step index in fail_step.
    """
    n = pts.shape[0]
    m = dw.shape[0]
    for i in range(n):
        x = pts[i, 0]
        y = pts[i, 1]
        if x != x or y != y:
            continue
        for k in range(m):
            nx, ny, res, ok = be_step(alpha, beta, a, b, sigma, tau, x, y, dw[k, 0], dw[k, 1], tol, max_iter)
            if not ok:
                fail_step[i] = k
                fail_res[i] = res
                break
            x = nx
            y = ny
        pts[i, 0] = x
        pts[i, 1] = y
