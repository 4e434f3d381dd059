"""Shared numerical kernels used by every other module.

Fixed-step RK4 integration, ridge-regularised right-sided least squares
(the pseudo-inverse workhorse behind all the fits), central-difference
linearisation of a plant about an operating point, and the single seeded
RNG entry point that makes every experiment reproducible.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
import scipy.linalg

# f(x, u, t) -> dx/dt
RightHandSide = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


class IntegrationDiverged(RuntimeError):
    """State stopped being finite during integration or rollout.

    ``where`` is the time at which the first non-finite value appeared
    (a step index for discrete rollouts).
    """

    def __init__(self, where: float, context: str = "integration", message: str | None = None):
        super().__init__(message or f"{context} produced a non-finite state at t={where:g}")
        self.where = where


class FactorizationFailed(RuntimeError):
    """A linear solve could not be completed reliably."""


def rng_stream(seed: int, *path: int) -> np.random.Generator:
    """Deterministic PCG64 generator for ``seed`` plus an integer derivation path.

    Streams for distinct paths are statistically independent, and the same
    (seed, path) yields the same stream on every platform.  All randomness in
    the package flows through this function.
    """
    if int(seed) < 0:
        raise ValueError("seed must be a non-negative integer")
    entropy = [int(seed)] + [int(p) for p in path]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def rk4_step(f: RightHandSide, x, u, t: float, dt: float) -> np.ndarray:
    """One classical 4-stage Runge-Kutta step with the input held constant.

    Raises IntegrationDiverged if the update stops being finite.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        k1 = np.asarray(f(x, u, t), dtype=np.float64)
        k2 = np.asarray(f(x + 0.5 * dt * k1, u, t + 0.5 * dt), dtype=np.float64)
        k3 = np.asarray(f(x + 0.5 * dt * k2, u, t + 0.5 * dt), dtype=np.float64)
        k4 = np.asarray(f(x + dt * k3, u, t + dt), dtype=np.float64)
        out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise IntegrationDiverged(t + dt)
    return out


def rk4_rollout(f: RightHandSide, x0, U, dt: float, t0: float = 0.0) -> np.ndarray:
    """Integrate ``f`` over ``len(U)`` steps, one input row per step.

    Returns the states after each step, shape (K, n); the initial state is
    not included.
    """
    x = np.asarray(x0, dtype=np.float64)
    U = np.atleast_2d(np.asarray(U, dtype=np.float64))
    out = np.empty((U.shape[0], x.size))
    for k in range(U.shape[0]):
        x = rk4_step(f, x, U[k], t0 + k * dt, dt)
        out[k] = x
    return out


def ridge_right_solve(lhs: np.ndarray, rhs: np.ndarray, alpha: float) -> np.ndarray:
    """Solve min_M ||M @ lhs - rhs||_F^2 + alpha * ||M||_F^2.

    Parameters
    ----------
    lhs : (p, N) regressor matrix (one column per sample).
    rhs : (q, N) target matrix with matching column count.
    alpha : ridge weight, >= 0.  With alpha == 0 the problem is solved by an
        SVD-based least squares, which returns the minimum-norm solution when
        ``lhs`` is rank deficient (pseudo-inverse semantics).

    Returns
    -------
    M : (q, p)
    """
    lhs = np.asarray(lhs, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    if lhs.ndim != 2 or rhs.ndim != 2:
        raise ValueError("lhs and rhs must be 2-D")
    if lhs.shape[1] != rhs.shape[1]:
        raise ValueError(
            f"column counts differ: lhs has {lhs.shape[1]}, rhs has {rhs.shape[1]}"
        )
    if alpha < 0.0:
        raise ValueError("alpha must be >= 0")
    if alpha == 0.0:
        try:
            Mt, _, _, _ = np.linalg.lstsq(lhs.T, rhs.T, rcond=None)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - numpy internal
            raise FactorizationFailed(str(exc)) from exc
        M = Mt.T
        if not np.all(np.isfinite(M)):
            raise FactorizationFailed("least-squares solution is not finite")
        return M
    return ridge_solve_gram(lhs @ lhs.T, rhs @ lhs.T, alpha)


def ridge_solve_gram(gram: np.ndarray, cross: np.ndarray, alpha: float) -> np.ndarray:
    """Ridge solve from precomputed Gram matrices: cross @ (gram + alpha*I)^-1.

    ``gram`` is lhs @ lhs.T (p, p) and ``cross`` is rhs @ lhs.T (q, p); the
    result equals ridge_right_solve(lhs, rhs, alpha) for alpha > 0 but lets
    callers accumulate the products chunk-wise.
    """
    gram = np.asarray(gram, dtype=np.float64)
    cross = np.atleast_2d(np.asarray(cross, dtype=np.float64))
    if alpha <= 0.0:
        raise ValueError("gram-based solve requires alpha > 0")
    G = gram + alpha * np.eye(gram.shape[0])
    try:
        cho = scipy.linalg.cho_factor(G, check_finite=False)
        Mt = scipy.linalg.cho_solve(cho, cross.T, check_finite=False)
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise FactorizationFailed(f"Cholesky solve failed: {exc}") from exc
    M = Mt.T
    if not np.all(np.isfinite(M)):
        raise FactorizationFailed("ridge solution is not finite")
    return M


def linearize(f: RightHandSide, x0, u0, h_fd: float = 1e-6):
    """Central-difference Jacobians of ``f`` at (x0, u0).

    Returns (A, B, c) with A = df/dx, B = df/du and c = f(x0, u0), defining
    the local affine model  xdot = c + A (x - x0) + B (u - u0).
    """
    if h_fd <= 0.0:
        raise ValueError("h_fd must be positive")
    x0 = np.asarray(x0, dtype=np.float64)
    u0 = np.asarray(u0, dtype=np.float64)
    n, l = x0.size, u0.size
    c = np.asarray(f(x0, u0, 0.0), dtype=np.float64)
    A = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h_fd
        A[:, j] = (np.asarray(f(x0 + e, u0, 0.0)) - np.asarray(f(x0 - e, u0, 0.0))) / (2 * h_fd)
    B = np.empty((n, l))
    for j in range(l):
        e = np.zeros(l)
        e[j] = h_fd
        B[:, j] = (np.asarray(f(x0, u0 + e, 0.0)) - np.asarray(f(x0, u0 - e, 0.0))) / (2 * h_fd)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B)) and np.all(np.isfinite(c))):
        raise FactorizationFailed("finite-difference Jacobian has non-finite entries")
    return A, B, c
