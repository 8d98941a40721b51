"""Spectral-norm estimation by power iteration on composed linear operators."""

import numpy as np

DEFAULT_TOL = 1e-9
MAX_ITERATIONS = 10_000


class PowerIterationError(RuntimeError):
    """Power iteration failed to converge within the iteration cap."""


def operator_norm(matvec, rmatvec, dim, tol=DEFAULT_TOL,
                  max_iterations=MAX_ITERATIONS, seed=0):
    """Estimate the spectral norm of a linear operator given by matvec callables.

    Runs power iteration on AᵀA with a deterministic seeded start vector and
    stops once the singular-value estimate changes by less than ``tol`` in
    relative terms. Returns 0.0 for the zero operator.
    """
    if dim <= 0:
        raise ValueError("operator dimension must be positive")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    nv = np.linalg.norm(v)
    v /= nv
    sigma = 0.0
    for _ in range(max_iterations):
        w = rmatvec(matvec(v))
        lam = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        sigma_new = np.sqrt(max(lam, 0.0))
        if abs(sigma_new - sigma) <= tol * max(sigma_new, 1e-300):
            return sigma_new
        sigma = sigma_new
    raise PowerIterationError(
        f"power iteration did not converge in {max_iterations} iterations"
    )


def matrix_norm(matrix, tol=DEFAULT_TOL, max_iterations=MAX_ITERATIONS, seed=0):
    """Spectral norm of a (sparse or dense) matrix via `operator_norm`."""
    mt = matrix.T
    return operator_norm(
        lambda v: matrix @ v,
        lambda v: mt @ v,
        matrix.shape[1],
        tol=tol,
        max_iterations=max_iterations,
        seed=seed,
    )
