"""Matrix-variate distributions and closed-form moments of the shared
variation matrix.

The factor model writes the covariance of p observed series as
``lam @ lam.T + diag(sigma2)``; the priors below place a matrix normal or
matrix t distribution on the p-by-k loading matrix ``lam``.  Both are
parameterized by an among-row scale ``phi`` (p-by-p) and an among-column
scale ``psi`` (k-by-k, diagonal in practice), chosen so that the prior
mean of ``lam @ lam.T`` equals ``trace(psi) * phi``.  Closed-form first
and second moments of that product are provided for Monte Carlo
cross-checks and prior elicitation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import SpdError, ValidationError
from .util import as_generator, validate_spd

__all__ = [
    "MatrixNormalParams",
    "MatrixTParams",
    "DeltaMoments",
    "sym_sqrt",
    "sym_inv_sqrt",
    "sample_matrix_normal",
    "sample_wishart",
    "sample_matrix_t",
    "delta_mean_mn",
    "delta_cov_mn",
    "delta_mean_t",
    "delta_var_t",
    "scale_factor_sk",
    "ledermann",
    "max_truncation",
]


def _as_col_scale(psi, k=None):
    """Accept a diagonal vector or a full SPD matrix for the column scale."""
    psi = np.asarray(psi, dtype=float)
    if psi.ndim == 1:
        if np.any(psi <= 0):
            raise SpdError("diagonal column scale has non-positive entries")
        psi = np.diag(psi)
    else:
        validate_spd(psi, "column scale")
    if k is not None and psi.shape[0] != k:
        raise ValidationError(
            f"column scale has dim {psi.shape[0]}, expected {k}")
    return psi


@dataclass
class MatrixNormalParams:
    """Location and row/column scales of a matrix normal distribution."""

    mean: np.ndarray
    phi: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_2d(np.asarray(self.mean, dtype=float))
        self.phi = validate_spd(np.asarray(self.phi, dtype=float), "phi")
        self.psi = _as_col_scale(self.psi, self.mean.shape[1])
        if self.phi.shape[0] != self.mean.shape[0]:
            raise ValidationError(
                f"row scale dim {self.phi.shape[0]} does not match "
                f"location row count {self.mean.shape[0]}")


@dataclass
class MatrixTParams:
    """Parameters of the matrix t prior in its Wishart-mixture form.

    ``phi_breve`` is the unstandardized row scale; the standardized form
    ``phi = phi_breve / (dof - 2)`` exists for dof > 2 and carries the
    prior mean of the loading outer product.
    """

    dof: float
    mean: np.ndarray
    phi_breve: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        if not self.dof > 0:
            raise ValidationError(f"dof must be positive, got {self.dof}")
        self.mean = np.atleast_2d(np.asarray(self.mean, dtype=float))
        self.phi_breve = validate_spd(
            np.asarray(self.phi_breve, dtype=float), "phi_breve")
        self.psi = _as_col_scale(self.psi, self.mean.shape[1])
        if self.phi_breve.shape[0] != self.mean.shape[0]:
            raise ValidationError("row scale / location dimension mismatch")

    @property
    def phi(self) -> np.ndarray:
        if not self.dof > 2:
            raise ValidationError(
                f"standardized row scale needs dof > 2, got {self.dof}")
        return self.phi_breve / (self.dof - 2.0)


@dataclass
class DeltaMoments:
    """Mean matrix and covariance accessor for delta = lam @ lam.T."""

    mean: np.ndarray
    cov: Callable[[int, int, int, int], float]
    var: Callable[[int, int], float] = field(default=None)

    def __post_init__(self):
        if self.var is None:
            self.var = lambda i, j: self.cov(i, j, i, j)


def sym_sqrt(s: np.ndarray) -> np.ndarray:
    """Symmetric square root of an SPD matrix via eigendecomposition.

    Returns the unique symmetric X with X @ X = s.
    """
    s = validate_spd(np.asarray(s, dtype=float), "sym_sqrt input")
    w, v = np.linalg.eigh(s)
    out = (v * np.sqrt(w)) @ v.T
    return 0.5 * (out + out.T)


def sym_inv_sqrt(s: np.ndarray) -> np.ndarray:
    """Symmetric inverse square root of an SPD matrix."""
    s = validate_spd(np.asarray(s, dtype=float), "sym_inv_sqrt input")
    w, v = np.linalg.eigh(s)
    out = (v / np.sqrt(w)) @ v.T
    return 0.5 * (out + out.T)


def sample_matrix_normal(params: MatrixNormalParams, rng, size=None):
    """Draw from a matrix normal distribution.

    The draw is mean + Lphi @ Z @ Lpsi.T with Lphi, Lpsi Cholesky factors
    of the row and column scales and Z standard normal.  With ``size=n``
    an (n, p, k) stack of independent draws is returned.
    """
    rng = as_generator(rng)
    p, k = params.mean.shape
    lphi = np.linalg.cholesky(params.phi)
    lpsi = np.linalg.cholesky(params.psi)
    if size is None:
        z = rng.standard_normal((p, k))
        return params.mean + lphi @ z @ lpsi.T
    z = rng.standard_normal((int(size), p, k))
    return params.mean[None] + lphi @ z @ lpsi.T


def _bartlett_factor(q: float, dim: int, rng, size):
    """Lower-triangular Bartlett factor A with A @ A.T ~ W(q, I)."""
    shape = (dim, dim) if size is None else (int(size), dim, dim)
    a = np.zeros(shape)
    idx = np.tril_indices(dim, k=-1)
    ndraw = 1 if size is None else int(size)
    offdiag = rng.standard_normal((ndraw, len(idx[0])))
    diag = np.sqrt(rng.chisquare(q - np.arange(dim), size=(ndraw, dim)))
    if size is None:
        a[idx] = offdiag[0]
        a[np.arange(dim), np.arange(dim)] = diag[0]
    else:
        a[:, idx[0], idx[1]] = offdiag
        a[:, np.arange(dim), np.arange(dim)] = diag
    return a


def sample_wishart(q: float, u: np.ndarray, rng, size=None):
    """Wishart draw with degrees of freedom q and scale u (mean q*u).

    Uses the Bartlett decomposition; requires q > dim - 1 strictly.
    """
    u = validate_spd(np.asarray(u, dtype=float), "Wishart scale")
    dim = u.shape[0]
    if not q > dim - 1:
        raise ValidationError(
            f"Wishart degrees of freedom must exceed dim - 1 = {dim - 1}, "
            f"got {q}")
    rng = as_generator(rng)
    c = np.linalg.cholesky(u)
    a = _bartlett_factor(float(q), dim, rng, size)
    f = c @ a
    if size is None:
        w = f @ f.T
        return 0.5 * (w + w.T)
    w = f @ f.transpose(0, 2, 1)
    return 0.5 * (w + w.transpose(0, 2, 1))


def sample_matrix_t(params: MatrixTParams, rng, size=None):
    """Draw from the matrix t distribution via its Wishart mixture.

    Draws S ~ Wishart(dof + p - 1, phi_breve^{-1}) and a matrix normal
    X with identity row scale, then returns a matrix with row covariance
    S^{-1} plus the location.  The internal factorization of S^{-1} is a
    sampler detail (unobservable in distribution).
    """
    rng = as_generator(rng)
    p, k = params.mean.shape
    q = params.dof + p - 1
    u = np.linalg.inv(params.phi_breve)
    u = 0.5 * (u + u.T)
    c = np.linalg.cholesky(u)
    a = _bartlett_factor(float(q), p, rng, size)
    lpsi = np.linalg.cholesky(params.psi)
    if size is None:
        x = rng.standard_normal((p, k)) @ lpsi.T
        f = c @ a  # f @ f.T = S
        return params.mean + np.linalg.solve(f.T, x)
    x = rng.standard_normal((int(size), p, k)) @ lpsi.T
    f = c @ a
    return params.mean[None] + np.linalg.solve(f.transpose(0, 2, 1), x)


def delta_mean_mn(phi: np.ndarray, psi) -> np.ndarray:
    """Prior mean of lam @ lam.T under the matrix normal: trace(psi)*phi."""
    phi = validate_spd(np.asarray(phi, dtype=float), "phi")
    psi = _as_col_scale(psi)
    return np.trace(psi) * phi


def _check_index(i: int, p: int):
    if not 0 <= i < p:
        raise ValidationError(f"index {i} out of range for dimension {p}")


def delta_cov_mn(phi: np.ndarray, psi, i: int, j: int, k: int, l: int) -> float:
    """Cov(delta_ij, delta_kl) under the matrix normal prior.

    Indices are zero-based.  The value is
    trace(psi @ psi) * (phi_ik * phi_jl + phi_il * phi_jk).
    """
    phi = np.asarray(phi, dtype=float)
    psi = _as_col_scale(psi)
    p = phi.shape[0]
    for idx in (i, j, k, l):
        _check_index(idx, p)
    tr2 = np.trace(psi @ psi)
    return float(tr2 * (phi[i, k] * phi[j, l] + phi[i, l] * phi[j, k]))


def delta_mean_t(dof: float, phi_breve: np.ndarray, psi) -> np.ndarray:
    """Prior mean of lam @ lam.T under the matrix t.

    Equals trace(psi) * phi_breve / (dof - 2); requires dof > 2.
    """
    if not dof > 2:
        raise ValidationError(
            f"mean undefined: matrix-t dof must exceed 2, got {dof}")
    phi_breve = validate_spd(np.asarray(phi_breve, dtype=float), "phi_breve")
    psi = _as_col_scale(psi)
    return np.trace(psi) * phi_breve / (dof - 2.0)


def delta_var_t(dof: float, phi: np.ndarray, psi, i: int, j: int) -> float:
    """Var(delta_ij) under the matrix t prior with standardized row scale.

    ``phi`` is the standardized scale (phi_breve / (dof - 2)).  Requires
    dof > 4.  Value:

        {tr(psi)^2 + (dof-2) tr(psi^2)}
        * {dof phi_ij^2 + (dof-2) phi_ii phi_jj} / {(dof-1)(dof-4)}
    """
    if not dof > 4:
        raise ValidationError(
            f"variance undefined: matrix-t dof must exceed 4, got {dof}")
    phi = np.asarray(phi, dtype=float)
    psi = _as_col_scale(psi)
    p = phi.shape[0]
    _check_index(i, p)
    _check_index(j, p)
    tr1 = np.trace(psi)
    tr2 = np.trace(psi @ psi)
    a = tr1 ** 2 + (dof - 2.0) * tr2
    b = dof * phi[i, j] ** 2 + (dof - 2.0) * phi[i, i] * phi[j, j]
    return float(a * b / ((dof - 1.0) * (dof - 4.0)))


def matrix_normal_delta_moments(phi, psi) -> DeltaMoments:
    return DeltaMoments(
        mean=delta_mean_mn(phi, psi),
        cov=lambda i, j, k, l: delta_cov_mn(phi, psi, i, j, k, l),
    )


def matrix_t_delta_moments(dof, phi_breve, psi) -> DeltaMoments:
    phi = np.asarray(phi_breve, dtype=float) / (dof - 2.0)
    return DeltaMoments(
        mean=delta_mean_t(dof, phi_breve, psi),
        cov=None if dof <= 4 else (
            lambda i, j, k, l: _delta_cov_t_diag_only(dof, phi, psi, i, j, k, l)
        ),
    )


def _delta_cov_t_diag_only(dof, phi, psi, i, j, k, l):
    if (i, j) != (k, l) and (i, j) != (l, k):
        raise ValidationError(
            "matrix-t second moments implemented for variances only")
    return delta_var_t(dof, phi, psi, i, j)


def scale_factor_sk(k: int, vs_check: float) -> float:
    """Tail-thickness scale factor for the matrix t relative to the
    matrix normal, as a function of the transformed dof vs_check = 1/(dof-4).

    Equals (1 + 2 v)(1 + (2 + k) v)/(1 + 3 v); value 1 at v = 0 and
    strictly increasing in v.
    """
    if vs_check < 0:
        raise ValidationError(
            f"transformed dof must be non-negative, got {vs_check}")
    if k < 1:
        raise ValidationError(f"column count must be >= 1, got {k}")
    v = float(vs_check)
    return (1.0 + 2.0 * v) * (1.0 + (2.0 + k) * v) / (1.0 + 3.0 * v)


def ledermann(p: int) -> float:
    """Largest non-trivial factor dimension bound for p observed series:
    (2p + 1 - sqrt(8p + 1)) / 2."""
    if p < 1:
        raise ValidationError(f"dimension must be >= 1, got {p}")
    return (2.0 * p + 1.0 - math.sqrt(8.0 * p + 1.0)) / 2.0


def max_truncation(p: int) -> int:
    """ceil(ledermann(p)) - 1, the largest admissible number of factor
    columns for p observed series."""
    if p < 1:
        raise ValidationError(f"dimension must be >= 1, got {p}")
    disc = 8 * p + 1
    r = math.isqrt(disc)
    if r * r == disc:
        # 8p+1 a perfect square: phi(p) = (2p+1-r)/2 is exact in integers
        # (2p+1 and r are both odd), so the ceiling needs no float care.
        num = 2 * p + 1 - r
        ceil_phi = num // 2 + (num % 2 != 0)
    else:
        ceil_phi = math.ceil(ledermann(p))
    return int(ceil_phi) - 1
