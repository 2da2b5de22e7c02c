"""Predictive evaluation: proper scores, conditional predictive
ordinates, and cross-validation folds.

Both scores are positively oriented (larger is better, zero is
perfect).  Ordinates are harmonic means over posterior draws, computed
in log space so enormous reciprocal likelihoods cannot overflow.
"""

from __future__ import annotations

import numpy as np
from scipy.special import log_ndtr, logsumexp, ndtr

from .errors import ValidationError


def _check_probs(p_hat: np.ndarray, y: np.ndarray):
    p_hat = np.asarray(p_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    if p_hat.shape != y.shape:
        raise ValidationError(
            f"predictions shaped {p_hat.shape} but outcomes {y.shape}")
    if p_hat.size == 0:
        raise ValidationError("cannot score an empty prediction set")
    if np.any(p_hat < 0) or np.any(p_hat > 1):
        raise ValidationError("predicted probabilities must lie in [0, 1]")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise ValidationError("outcomes must be 0/1")
    return p_hat, y


def brier_score(p_hat, y) -> float:
    """Negated mean squared probability error; 0 at perfect forecasts."""
    p_hat, y = _check_probs(p_hat, y)
    return float(0.0 - np.mean((p_hat - y) ** 2))


def log_score(p_hat, y) -> float:
    """Mean log predictive probability of the realized outcomes.

    A certain-and-wrong prediction (probability exactly 0 or 1 on the
    losing side) makes the whole score minus infinity.
    """
    p_hat, y = _check_probs(p_hat, y)
    won = np.where(y == 1.0, p_hat, 1.0 - p_hat)
    if np.any(won == 0.0):
        return float("-inf")
    return float(np.mean(np.log(won)))


def cpo_pml(log_lik: np.ndarray) -> dict:
    """Conditional predictive ordinates from per-draw log-likelihoods.

    ``log_lik`` has one row per posterior draw and one column per
    observation.  The ordinate of observation i is the harmonic mean of
    its likelihood across draws; their log-sum is the pseudo marginal
    likelihood.  Any draw assigning an observation zero likelihood
    drags that ordinate to zero and the total to minus infinity.
    """
    log_lik = np.asarray(log_lik, dtype=float)
    if log_lik.ndim != 2 or log_lik.size == 0:
        raise ValidationError(
            "need a draws-by-observations matrix of log-likelihoods")
    if np.any(np.isnan(log_lik)) or np.any(log_lik == np.inf):
        raise ValidationError("log-likelihoods must be finite or -inf")
    n_draws = log_lik.shape[0]
    log_cpo = np.log(n_draws) - logsumexp(-log_lik, axis=0)
    return {
        "cpo": np.exp(log_cpo),
        "log_cpo": log_cpo,
        "log_pml": float(log_cpo.sum()),
    }


def kfold_split(n: int, k: int = 4, seed: int = 0) -> np.ndarray:
    """Balanced random fold labels in [0, k) for n items, deterministic
    in the seed."""
    if k < 1:
        raise ValidationError("need at least one fold")
    if n < k:
        raise ValidationError(f"cannot split {n} items into {k} folds")
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % k
    return labels[rng.permutation(n)]


def probit_success_prob(mean: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Success probabilities with the factors integrated out.

    For a fresh observation the latent signal is the mean plus a
    standard-normal combination through the loading row plus unit
    noise, so the success probability shrinks the mean by the implied
    total scale.
    """
    mean = np.asarray(mean, dtype=float)
    lam = np.asarray(lam, dtype=float)
    scale = np.sqrt(1.0 + np.sum(lam ** 2, axis=1))
    return ndtr(mean / scale)


def probit_row_loglik(y: np.ndarray, mean: np.ndarray,
                      lam: np.ndarray) -> np.ndarray:
    """Per-row log-likelihood of binary outcomes, factors integrated
    out, suitable as one draw's row of a cpo_pml input."""
    y = np.asarray(y, dtype=float)
    mean = np.asarray(mean, dtype=float)
    lam = np.asarray(lam, dtype=float)
    scale = np.sqrt(1.0 + np.sum(lam ** 2, axis=1))
    z = mean / scale
    terms = np.where(y == 1.0, log_ndtr(z), log_ndtr(-z))
    return terms.sum(axis=-1)


def gaussian_row_loglik(y_centered: np.ndarray, lam: np.ndarray,
                        sigma2: np.ndarray) -> np.ndarray:
    """Per-row Gaussian log density under one draw's implied
    covariance (shared part plus idiosyncratic floor)."""
    y_centered = np.atleast_2d(np.asarray(y_centered, dtype=float))
    omega = lam @ lam.T + np.diag(sigma2)
    sign, logdet = np.linalg.slogdet(omega)
    if sign <= 0:
        raise ValidationError("implied covariance is not positive definite")
    sol = np.linalg.solve(omega, y_centered.T)
    quad = np.einsum("ij,ji->i", y_centered, sol)
    p = y_centered.shape[1]
    return -0.5 * (p * np.log(2.0 * np.pi) + logdet + quad)
