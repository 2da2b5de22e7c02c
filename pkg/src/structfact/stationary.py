"""Unconstrained parameterization of stationary VAR(m) factor dynamics.

The latent factor process is constrained to have stationary variance
equal to the identity.  Free parameters are unconstrained square
matrices A_1..A_m; each maps to a partial autocorrelation matrix P_i
with singular values below one, and the P_i map to the VAR coefficient
matrices and innovation variance through a Levinson-type recursion that
treats the unit stationary variance as fixed.  Lag autocovariances fall
out of the same recursion and feed the initial state distribution.

Autocovariance orientation used throughout: ``autocov[j]`` is
E[eta_t eta_{t-j}'].
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .matrixvariate import sym_inv_sqrt, sym_sqrt
from .util import validate_spd

__all__ = [
    "PACParams",
    "VARParams",
    "InitialDist",
    "a_to_p",
    "p_to_a",
    "pac_to_var",
    "companion_matrix",
    "companion_spectral_radius",
    "build_initial_dist",
    "companion_initial_cov",
    "rotate_expansion",
]


@dataclass
class PACParams:
    """Unconstrained dynamics parameters A_1..A_m (k-by-k each)."""

    a: list

    def __post_init__(self):
        self.a = [np.atleast_2d(np.asarray(x, dtype=float)) for x in self.a]
        if not self.a:
            raise ValidationError("need at least one coefficient matrix")
        k = self.a[0].shape[0]
        for x in self.a:
            if x.shape != (k, k):
                raise ValidationError(
                    f"coefficient matrices must share shape ({k}, {k})")

    @property
    def m(self) -> int:
        return len(self.a)

    @property
    def k(self) -> int:
        return self.a[0].shape[0]

    def pacf(self) -> list:
        return [a_to_p(x) for x in self.a]


@dataclass
class VARParams:
    """Stationary VAR coefficients, innovation variance, and the
    autocovariances autocov[0..m-1] with autocov[0] = I."""

    gammas: list
    pi: np.ndarray
    autocov: list

    def __post_init__(self):
        self.gammas = [np.atleast_2d(np.asarray(g, float)) for g in self.gammas]
        self.pi = np.atleast_2d(np.asarray(self.pi, dtype=float))
        self.autocov = [np.atleast_2d(np.asarray(g, float))
                        for g in self.autocov]

    @property
    def m(self) -> int:
        return len(self.gammas)

    @property
    def k(self) -> int:
        return self.pi.shape[0]


@dataclass
class InitialDist:
    """Joint covariance of the m pre-sample states, block-Toeplitz."""

    g: np.ndarray

    def __post_init__(self):
        self.g = validate_spd(np.asarray(self.g, dtype=float),
                              "initial state covariance")


def a_to_p(a: np.ndarray) -> np.ndarray:
    """Map an unconstrained matrix to one with singular values < 1:
    P = (I + A A')^{-1/2} A (symmetric inverse root)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    k = a.shape[0]
    return sym_inv_sqrt(np.eye(k) + a @ a.T) @ a


def p_to_a(p: np.ndarray) -> np.ndarray:
    """Inverse of a_to_p: A = (I - P P')^{-1/2} P; needs sigma_max(P) < 1."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    k = p.shape[0]
    smax = np.linalg.svd(p, compute_uv=False)[0] if p.size else 0.0
    if smax >= 1.0:
        raise ValidationError(
            f"partial autocorrelation matrix has max singular value "
            f"{smax:.6f} >= 1")
    return sym_inv_sqrt(np.eye(k) - p @ p.T) @ p


def pac_to_var(pac: PACParams) -> VARParams:
    """Map partial autocorrelations to stationary VAR coefficients under
    the unit-stationary-variance constraint.

    Runs the forward Levinson recursion with both the forward and
    backward innovation variances started at the identity; lag
    autocovariances are accumulated as by-products.
    """
    ps = pac.pacf()
    m, k = pac.m, pac.k
    eye = np.eye(k)
    sig_f = eye.copy()       # forward innovation variance
    sig_b = eye.copy()       # backward innovation variance
    phis: list = []          # forward prediction coefficients, lags 1..s
    phis_b: list = []        # backward prediction coefficients
    autocov = [eye.copy()]   # autocov[j] = E[eta_t eta_{t-j}']
    for s in range(m):
        lf = sym_sqrt(sig_f)
        lb = sym_sqrt(sig_b)
        lf_inv = np.linalg.inv(lf)
        lb_inv = np.linalg.inv(lb)
        delta = lf @ ps[s] @ lb
        phi_new = lf @ ps[s] @ lb_inv
        phib_new = lb @ ps[s].T @ lf_inv
        phis_next = [phis[j] - phi_new @ phis_b[s - 1 - j] for j in range(s)]
        phis_b_next = [phis_b[j] - phib_new @ phis[s - 1 - j] for j in range(s)]
        phis_next.append(phi_new)
        phis_b_next.append(phib_new)
        if s < m - 1:
            g_new = delta.copy()
            for j in range(s):
                g_new = g_new + phis[j] @ autocov[s - j]
            autocov.append(g_new)
        sig_f = lf @ (eye - ps[s] @ ps[s].T) @ lf
        sig_b = lb @ (eye - ps[s].T @ ps[s]) @ lb
        sig_f = 0.5 * (sig_f + sig_f.T)
        sig_b = 0.5 * (sig_b + sig_b.T)
        phis, phis_b = phis_next, phis_b_next
    return VARParams(gammas=phis, pi=sig_f, autocov=autocov)


def companion_matrix(gammas: Sequence[np.ndarray]) -> np.ndarray:
    gammas = [np.atleast_2d(np.asarray(g, dtype=float)) for g in gammas]
    m = len(gammas)
    k = gammas[0].shape[0]
    f = np.zeros((k * m, k * m))
    for i, g in enumerate(gammas):
        f[:k, i * k:(i + 1) * k] = g
    if m > 1:
        f[k:, :-k] = np.eye(k * (m - 1))
    return f


def companion_spectral_radius(var) -> float:
    """Largest eigenvalue modulus of the companion matrix; < 1 iff the
    process is stable."""
    gammas = var.gammas if isinstance(var, VARParams) else list(var)
    f = companion_matrix(gammas)
    return float(np.abs(np.linalg.eigvals(f)).max())


def _toeplitz_blocks(var: VARParams, lag_of_block):
    m, k = var.m, var.k
    g = np.zeros((k * m, k * m))
    for i in range(m):
        for j in range(m):
            lag = lag_of_block(i, j)
            blk = var.autocov[abs(lag)]
            if lag < 0:
                blk = blk.T
            g[i * k:(i + 1) * k, j * k:(j + 1) * k] = blk
    return g


def build_initial_dist(var: VARParams) -> InitialDist:
    """Covariance of the stacked pre-sample states, oldest first.

    Block (i, j) depends on i - j only; off-diagonal blocks are the lag
    autocovariances emitted by pac_to_var.
    """
    if companion_spectral_radius(var) >= 1.0:
        raise ValidationError(
            "initial distribution undefined: coefficient matrices are not "
            "in the stationary region")
    return InitialDist(g=_toeplitz_blocks(var, lambda i, j: i - j))


def companion_initial_cov(var: VARParams) -> np.ndarray:
    """Same matrix re-ordered for the companion state (newest block
    first), as used by the forward filter."""
    return _toeplitz_blocks(var, lambda i, j: j - i)


def rotate_expansion(q: np.ndarray, lam=None, eta=None, gammas=None,
                     pi=None, a_mats=None) -> dict:
    """Apply the parameter-expansion rotation to any of the state pieces.

    Loading matrix maps as lam @ q, factor rows as eta @ q, and the
    dynamics matrices by conjugation q' X q.  Returns a dict holding the
    rotated version of every piece passed in.
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    k = q.shape[0]
    if q.shape != (k, k) or np.abs(q.T @ q - np.eye(k)).max() > 1e-10:
        raise ValidationError("rotation matrix is not orthogonal to 1e-10")
    out = {}
    if lam is not None:
        out["lam"] = np.asarray(lam, dtype=float) @ q
    if eta is not None:
        out["eta"] = np.asarray(eta, dtype=float) @ q
    if gammas is not None:
        out["gammas"] = [q.T @ np.asarray(g, dtype=float) @ q for g in gammas]
    if pi is not None:
        out["pi"] = q.T @ np.asarray(pi, dtype=float) @ q
    if a_mats is not None:
        out["a_mats"] = [q.T @ np.asarray(a, dtype=float) @ q for a in a_mats]
    return out
