"""Small shared helpers: RNG coercion and SPD validation."""
from __future__ import annotations

import numpy as np

from .errors import SpdError

# Relative eigenvalue floor below which a nominally SPD matrix is rejected.
SPD_EIG_FLOOR = 1e-10
# Relative tolerance for the symmetry check.
SYM_TOL = 1e-12


def as_generator(seed) -> np.random.Generator:
    """Coerce ``seed`` (None, int, SeedSequence or Generator) to a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def check_square(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise SpdError(f"{name} must be square, got shape {a.shape}")
    return a


def validate_spd(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Validate that ``a`` is symmetric positive definite.

    Symmetry is required to within a relative tolerance of ``SYM_TOL``;
    the smallest eigenvalue must exceed ``SPD_EIG_FLOOR`` times the
    largest.  Violations raise :class:`SpdError` naming the offending
    quantity.  No jitter is ever applied.
    """
    a = check_square(a, name)
    scale = np.abs(a).max() if a.size else 0.0
    asym = np.abs(a - a.T).max() if a.size else 0.0
    if asym > SYM_TOL * max(1.0, scale):
        raise SpdError(
            f"{name} is not symmetric: max |a - a.T| = {asym:.3e} "
            f"exceeds {SYM_TOL:.1e} relative tolerance"
        )
    w = np.linalg.eigvalsh(a)
    w_max = w[-1]
    if w_max <= 0.0 or w[0] <= SPD_EIG_FLOOR * w_max:
        raise SpdError(
            f"{name} is not positive definite at the required floor: "
            f"min eigenvalue {w[0]:.6e} vs floor {SPD_EIG_FLOOR:.1e} * "
            f"max eigenvalue {w_max:.6e}"
        )
    return a


def spd_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a x = b for SPD ``a`` via Cholesky."""
    import scipy.linalg

    c = scipy.linalg.cho_factor(a, lower=True, check_finite=False)
    return scipy.linalg.cho_solve(c, b, check_finite=False)


def spd_inv(a: np.ndarray) -> np.ndarray:
    out = spd_solve(a, np.eye(a.shape[0]))
    return 0.5 * (out + out.T)


def spd_logdet(a: np.ndarray) -> float:
    sign, val = np.linalg.slogdet(a)
    if sign <= 0:
        raise SpdError("log-determinant of a non-positive-definite matrix")
    return float(val)


def draw_mvn_from_precision(prec: np.ndarray, lin: np.ndarray,
                            rng: np.random.Generator) -> np.ndarray:
    """Draw x ~ N(prec^{-1} lin, prec^{-1}) via one Cholesky of ``prec``.

    ``lin`` may be a vector or a matrix whose columns are independent
    linear terms sharing the same precision; one draw per column.
    """
    import scipy.linalg

    low = np.linalg.cholesky(prec)
    mean = scipy.linalg.cho_solve((low, True), lin, check_finite=False)
    z = rng.standard_normal(mean.shape)
    noise = scipy.linalg.solve_triangular(low.T, z, lower=False,
                                          check_finite=False)
    return mean + noise
