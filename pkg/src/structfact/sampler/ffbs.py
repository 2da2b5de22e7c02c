"""Forward-filter backward-sample moves for dynamic factor paths.

The filter runs on the stacked state (current and lagged factor rows,
newest first).  The backward pass draws the terminal stack jointly, then
walks back one time point at a time: the filtered stack is conditioned
on its already-drawn newer rows and combined with the transition that
ties the oldest undetermined row to the next step ahead.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cholesky

from ..errors import NumericalError, SpdError
from ..stationary import VARParams, companion_initial_cov, companion_matrix
from ..util import as_generator, draw_mvn_from_precision, spd_inv, spd_solve
from .conditionals import mean_matrix, observation_matrix
from .modelspec import FactorModelSpec, ModelData
from .state import ChainState


def _chol_draw(mean: np.ndarray, cov: np.ndarray, rng) -> np.ndarray:
    cov = 0.5 * (cov + cov.T)
    try:
        low = cholesky(cov, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            "sampling covariance lost positive definiteness") from exc
    return mean + low @ rng.standard_normal(mean.size)


def simulate_var_path(var: VARParams, n: int, rng) -> np.ndarray:
    """Stationary path of n + order rows: the leading rows come from the
    stationary distribution of the stacked state, the rest recurse."""
    rng = as_generator(rng)
    k, m = var.k, var.m
    eta = np.empty((n + m, k))
    x0 = _chol_draw(np.zeros(k * m), companion_initial_cov(var), rng)
    for i in range(m):
        eta[m - 1 - i] = x0[i * k:(i + 1) * k]
    if n == 0:
        return eta
    low = cholesky(0.5 * (var.pi + var.pi.T), lower=True)
    for t in range(m, n + m):
        drift = sum(g @ eta[t - i - 1] for i, g in enumerate(var.gammas))
        eta[t] = drift + low @ rng.standard_normal(k)
    return eta


def kalman_filter_companion(resid: np.ndarray, lam: np.ndarray,
                            sigma2: np.ndarray, var: VARParams):
    """Filtered means and covariances of the stacked state given centered
    observations.  Returns arrays of length n + 1 whose first entry is
    the stationary prior."""
    n = resid.shape[0]
    k, m = var.k, var.m
    d = k * m
    fmat = companion_matrix(var.gammas)
    means = np.zeros((n + 1, d))
    covs = np.zeros((n + 1, d, d))
    covs[0] = companion_initial_cov(var)
    lam_w = lam / sigma2[:, None]
    gram = lam.T @ lam_w
    try:
        for t in range(1, n + 1):
            mp = fmat @ means[t - 1]
            pp = fmat @ covs[t - 1] @ fmat.T
            pp[:k, :k] += var.pi
            pp = 0.5 * (pp + pp.T)
            pp_inv = spd_inv(pp)
            prec = pp_inv.copy()
            prec[:k, :k] += gram
            cov = spd_inv(prec)
            lin = pp_inv @ mp
            lin[:k] += lam_w.T @ resid[t - 1]
            means[t] = cov @ lin
            covs[t] = 0.5 * (cov + cov.T)
    except (SpdError, np.linalg.LinAlgError) as exc:
        raise NumericalError(
            f"filter covariance lost positive definiteness at step {t}"
        ) from exc
    return means, covs


def ffbs_factors(state: ChainState, data: ModelData,
                 spec: FactorModelSpec, rng) -> None:
    """Joint draw of the whole factor path, pre-sample rows included."""
    rng = as_generator(rng)
    var = state.var_params()
    k, m, n = var.k, var.m, data.n
    if n == 0:
        state.eta = simulate_var_path(var, 0, rng)
        return
    resid = observation_matrix(state, data, spec) \
        - mean_matrix(state, data, spec)
    means, covs = kalman_filter_companion(resid, state.lam, state.sigma2, var)

    eta = np.empty((n + m, k))

    def row(t: int) -> int:
        return t + m - 1

    xn = _chol_draw(means[n], covs[n], rng)
    for i in range(m):
        eta[row(n - i)] = xn[i * k:(i + 1) * k]

    pi_inv = spd_inv(var.pi)
    gm = var.gammas[m - 1]
    obs_prec = gm.T @ pi_inv @ gm
    try:
        for t in range(n - m, -m, -1):
            mf, pf = means[t + m - 1], covs[t + m - 1]
            if m > 1:
                cut = (m - 1) * k
                known = np.concatenate(
                    [eta[row(t + m - 1 - i)] for i in range(m - 1)])
                s12 = pf[:cut, cut:]
                sol = spd_solve(pf[:cut, :cut],
                                np.column_stack([known - mf[:cut], s12]))
                mc = mf[cut:] + s12.T @ sol[:, 0]
                pc = pf[cut:, cut:] - s12.T @ sol[:, 1:]
                pc = 0.5 * (pc + pc.T)
            else:
                mc, pc = mf, pf
            r = eta[row(t + m)].copy()
            for i in range(1, m):
                r -= var.gammas[i - 1] @ eta[row(t + m - i)]
            prec = spd_inv(pc) + obs_prec
            lin = spd_solve(pc, mc) + gm.T @ pi_inv @ r
            eta[row(t)] = draw_mvn_from_precision(prec, lin, rng)
    except (SpdError, np.linalg.LinAlgError) as exc:
        raise NumericalError(
            "smoothing covariance lost positive definiteness") from exc
    state.eta = eta
