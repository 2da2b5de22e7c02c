"""Full-conditional and Metropolis updates for one Gibbs sweep.

All updates mutate the state in place.  Functions that need the shared
row precision of the loadings take it as an argument so the sweep can
decide when to rebuild it (it changes whenever the scale hyperparameters
or the mixing matrix move).
"""

from __future__ import annotations

import numpy as np
from scipy.special import log_expit, multigammaln, ndtr, ndtri

from ..errors import SpdError, ValidationError
from ..matrixvariate import sample_wishart
from ..priors import build_phi, build_xi
from ..util import draw_mvn_from_precision, spd_inv, spd_logdet
from .modelspec import FactorModelSpec, ModelData
from .state import ChainState

# Latents pinned to the wrong side of zero by rounding get nudged this
# far into the correct half-line.
_PROBIT_EDGE = 1e-12


def observation_matrix(state: ChainState, data: ModelData,
                       spec: FactorModelSpec) -> np.ndarray:
    return state.z if spec.kind == "probit" else data.y


def mean_matrix(state: ChainState, data: ModelData,
                spec: FactorModelSpec) -> np.ndarray:
    if spec.mean.kind == "constant":
        return np.broadcast_to(state.mu, (data.n, spec.p))
    return data.w @ state.b


def row_scale_precision(state: ChainState, spec: FactorModelSpec) -> np.ndarray:
    """Precision shared by the loading rows: the mixing matrix under the
    heavy-tailed prior, the inverse structured scale otherwise."""
    if spec.prior == "matrix-t":
        return state.s_mat
    model = spec.phi.with_theta(state.theta)
    if model.side == "inverse":
        return build_xi(model)
    return spd_inv(build_phi(model))


def update_factors_static(state: ChainState, data: ModelData,
                          spec: FactorModelSpec, rng) -> None:
    """Joint draw of all factor rows for exchangeable observations."""
    if data.n == 0:
        return
    resid = observation_matrix(state, data, spec) \
        - mean_matrix(state, data, spec)
    lam_w = state.lam / state.sigma2[:, None]
    prec = np.eye(state.h) + state.lam.T @ lam_w
    lin = (resid @ lam_w).T
    state.eta = draw_mvn_from_precision(prec, lin, rng).T


def update_loadings(state: ChainState, data: ModelData,
                    spec: FactorModelSpec, rng, row_prec: np.ndarray) -> None:
    """Row-wise draw of the loadings.

    Row i couples to the other rows only through the shared row
    precision, so its conditional is Gaussian with a diagonal-plus-Gram
    precision; rows are scanned in order using the freshest values of
    the others.
    """
    n = data.n
    psi_inv = np.cumprod(state.rho)
    eta_obs = state.eta[-n:] if n else state.eta[:0]
    ete = eta_obs.T @ eta_obs
    resid = observation_matrix(state, data, spec) \
        - mean_matrix(state, data, spec)
    for i in range(spec.p):
        cross = row_prec[i] @ state.lam - row_prec[i, i] * state.lam[i]
        lin = -psi_inv * cross
        prec = np.diag(row_prec[i, i] * psi_inv)
        if n:
            prec += ete / state.sigma2[i]
            lin = lin + eta_obs.T @ resid[:, i] / state.sigma2[i]
        state.lam[i] = draw_mvn_from_precision(prec, lin, rng)


def update_idiosyncratic_variances(state: ChainState, data: ModelData,
                                   spec: FactorModelSpec, rng) -> None:
    if spec.kind == "probit":
        raise ValidationError("probit models fix the idiosyncratic variances")
    n = data.n
    eta_obs = state.eta[-n:] if n else state.eta[:0]
    resid = data.y - mean_matrix(state, data, spec) - eta_obs @ state.lam.T
    shape = spec.sigma_shape + 0.5 * n
    rate = spec.sigma_rate + 0.5 * np.sum(resid ** 2, axis=0)
    state.sigma2 = 1.0 / rng.gamma(shape, 1.0 / rate)


def update_mean(state: ChainState, data: ModelData,
                spec: FactorModelSpec, rng) -> None:
    """Intercepts, regression coefficients, and (if present) the
    metadata stage, each from its Gaussian conditional."""
    n = data.n
    eta_obs = state.eta[-n:] if n else state.eta[:0]
    resid = observation_matrix(state, data, spec) - eta_obs @ state.lam.T
    mk = spec.mean.kind
    if mk == "constant":
        prec = n / state.sigma2 + 1.0 / spec.mean.s_mu2
        mean = np.sum(resid, axis=0) / state.sigma2 / prec
        state.mu = mean + rng.standard_normal(spec.p) / np.sqrt(prec)
        return

    c = spec.n_covariates
    wtw = data.w.T @ data.w if n else np.zeros((c, c))
    prior_mean_t = data.x @ state.kmat if mk == "hierarchical" \
        else np.zeros((spec.p, c))
    for j in range(spec.p):
        prec = wtw / state.sigma2[j] + np.eye(c) / spec.mean.s_beta2
        lin = prior_mean_t[j] / spec.mean.s_beta2
        if n:
            lin = lin + data.w.T @ resid[:, j] / state.sigma2[j]
        state.b[:, j] = draw_mvn_from_precision(prec, lin, rng)

    if mk == "hierarchical":
        q = spec.n_meta
        prec = data.x.T @ data.x / spec.mean.s_beta2 \
            + np.eye(q) / spec.mean.s_kappa2
        lin = data.x.T @ state.b.T / spec.mean.s_beta2
        state.kmat = draw_mvn_from_precision(prec, lin, rng)


def column_quadforms(state: ChainState, row_prec: np.ndarray) -> np.ndarray:
    """Per-column quadratic forms of the loadings in the row precision."""
    return np.einsum("ih,il,lh->h", state.lam, row_prec, state.lam)


def update_shrinkage(state: ChainState, spec: FactorModelSpec, rng,
                     row_prec: np.ndarray) -> None:
    """Scan the gamma multipliers; each conditional pools the quadratic
    forms of all deeper columns with the current other multipliers."""
    h = state.h
    p = spec.p
    q = column_quadforms(state, row_prec)
    for ell in range(h):
        cp = np.cumprod(state.rho)
        shape = (spec.mgp_a1 if ell == 0 else spec.mgp_a2) \
            + 0.5 * p * (h - ell)
        rate = 1.0 + 0.5 * np.sum(cp[ell:] / state.rho[ell] * q[ell:])
        state.rho[ell] = rng.gamma(shape, 1.0 / rate)


def _to_unconstrained(theta: np.ndarray, bounds) -> np.ndarray:
    u = np.empty_like(theta)
    for idx, (t, b) in enumerate(zip(theta, bounds)):
        if b[0] == "log":
            u[idx] = np.log(t)
        else:
            _, lo, hi = b
            frac = (t - lo) / (hi - lo)
            u[idx] = np.log(frac) - np.log1p(-frac)
    return u


def _from_unconstrained(u: np.ndarray, bounds):
    """Back-transform plus the log Jacobian of theta(u)."""
    theta = np.empty_like(u)
    logjac = 0.0
    for idx, (v, b) in enumerate(zip(u, bounds)):
        if b[0] == "log":
            theta[idx] = np.exp(v)
            logjac += v
        else:
            _, lo, hi = b
            theta[idx] = lo + (hi - lo) / (1.0 + np.exp(-v))
            logjac += np.log(hi - lo) + log_expit(v) + log_expit(-v)
    return theta, logjac


def _theta_loglik(state: ChainState, spec: FactorModelSpec,
                  theta: np.ndarray) -> float:
    """Terms of the log conditional that involve the scale
    hyperparameters, for either loading prior."""
    model = spec.phi.with_theta(theta)
    if spec.prior == "matrix-t":
        varsigma = state.varsigma()
        phi = build_phi(model)
        qdof = varsigma + spec.p - 1.0
        return 0.5 * qdof * spd_logdet(phi) \
            - 0.5 * (varsigma - 2.0) * float(np.sum(phi * state.s_mat))
    if model.side == "inverse":
        xi = build_xi(model)
        logdet_phi = -spd_logdet(xi)
    else:
        xi = spd_inv(build_phi(model))
        logdet_phi = -spd_logdet(xi)
    psi_inv = np.cumprod(state.rho)
    quad = float(np.sum(psi_inv * column_quadforms(state, xi)))
    return -0.5 * state.h * logdet_phi - 0.5 * quad


def update_theta_mh(state: ChainState, spec: FactorModelSpec, rng,
                    step: float) -> bool:
    """Joint random-walk move for the scale hyperparameters on their
    unconstrained transforms.  Returns whether the move was accepted."""
    bounds = spec.phi.theta_bounds()
    if not bounds:
        return False
    for t, b in zip(state.theta, bounds):
        if b[0] == "interval" and not b[1] < t < b[2]:
            raise ValidationError(
                f"hyperparameter {t!r} sits on its boundary; start strictly "
                f"inside ({b[1]}, {b[2]}) to sample it")
    u_cur = _to_unconstrained(state.theta, bounds)
    u_prop = u_cur + step * rng.standard_normal(u_cur.size)
    theta_prop, jac_prop = _from_unconstrained(u_prop, bounds)
    _, jac_cur = _from_unconstrained(u_cur, bounds)
    try:
        num = _theta_loglik(state, spec, theta_prop) \
            + spec.phi.log_prior(theta_prop) + jac_prop
    except (SpdError, np.linalg.LinAlgError):
        return False
    den = _theta_loglik(state, spec, state.theta) \
        + spec.phi.log_prior(state.theta) + jac_cur
    if np.log(rng.random()) < num - den:
        state.theta = theta_prop
        return True
    return False


def refresh_mixing_matrix(state: ChainState, spec: FactorModelSpec,
                          rng) -> None:
    """Conjugate Wishart draw of the mixing matrix given the loadings."""
    varsigma = state.varsigma()
    p = spec.p
    phi_breve = (varsigma - 2.0) * build_phi(spec.phi.with_theta(state.theta))
    psi_inv = np.cumprod(state.rho)
    scale = spd_inv(phi_breve + (state.lam * psi_inv) @ state.lam.T)
    state.s_mat = sample_wishart(varsigma + p - 1.0 + state.h, scale, rng)


def _collapsed_tail_logpost(varsigma_check: float, phi: np.ndarray,
                            logdet_phi: float, lam_gram: np.ndarray,
                            p: int, h: int, rate: float) -> float:
    """Log posterior of the tail-weight parameter with the mixing matrix
    integrated out, up to a constant."""
    varsigma = 4.0 + 1.0 / varsigma_check
    qdof = varsigma + p - 1.0
    phi_breve = (varsigma - 2.0) * phi
    cmat = phi_breve + lam_gram
    logdet_breve = p * np.log(varsigma - 2.0) + logdet_phi
    logz = multigammaln(0.5 * (qdof + h), p) - multigammaln(0.5 * qdof, p) \
        + 0.5 * qdof * logdet_breve - 0.5 * (qdof + h) * spd_logdet(cmat)
    return logz - rate * varsigma_check


def update_tail_weight(state: ChainState, spec: FactorModelSpec, rng,
                       step: float) -> bool:
    """Joint move of the tail-weight parameter and the mixing matrix.

    The mixing matrix is integrated out of the acceptance ratio; on
    acceptance it is redrawn from its conditional at the new value, so
    the pair moves together and the ratio itself never depends on the
    proposed matrix.
    """
    p, h = spec.p, state.h
    phi = build_phi(spec.phi.with_theta(state.theta))
    logdet_phi = spd_logdet(phi)
    psi_inv = np.cumprod(state.rho)
    lam_gram = (state.lam * psi_inv) @ state.lam.T

    cur = state.varsigma_check
    prop = cur * np.exp(step * rng.standard_normal())
    num = _collapsed_tail_logpost(prop, phi, logdet_phi, lam_gram, p, h,
                                  spec.varsigma_rate) + np.log(prop)
    den = _collapsed_tail_logpost(cur, phi, logdet_phi, lam_gram, p, h,
                                  spec.varsigma_rate) + np.log(cur)
    if np.log(rng.random()) < num - den:
        state.varsigma_check = float(prop)
        varsigma = state.varsigma()
        cmat = (varsigma - 2.0) * phi + lam_gram
        state.s_mat = sample_wishart(varsigma + p - 1.0 + h, spd_inv(cmat),
                                     rng)
        return True
    return False


def update_probit_latents(state: ChainState, data: ModelData,
                          spec: FactorModelSpec, rng) -> None:
    """Draw the latent sheet from the correct half-line at each cell.

    Inverse-CDF sampling is rearranged so the interval endpoint feeding
    ndtri is computed in the tail where ndtr is accurate, which keeps
    far-from-zero cells finite instead of saturating.
    """
    n = data.n
    eta_obs = state.eta[-n:] if n else state.eta[:0]
    center = mean_matrix(state, data, spec) + eta_obs @ state.lam.T
    u = rng.random((n, spec.p))
    pos = data.y > 0.5
    z = np.empty_like(center)
    tail_pos = np.clip(u * ndtr(center), 1e-300, None)
    tail_neg = np.clip(u * ndtr(-center), 1e-300, None)
    z[pos] = center[pos] - ndtri(tail_pos[pos])
    z[~pos] = center[~pos] + ndtri(tail_neg[~pos])
    np.maximum(z, _PROBIT_EDGE, out=z, where=pos)
    np.minimum(z, -_PROBIT_EDGE, out=z, where=~pos)
    state.z = z


def gaussian_loglik_given_state(state: ChainState, data: ModelData,
                                spec: FactorModelSpec) -> float:
    """Observation log likelihood at the current parameters (Gaussian
    kinds only); used by diagnostics and tests."""
    if spec.kind == "probit":
        raise ValidationError("probit models have no Gaussian likelihood")
    n = data.n
    eta_obs = state.eta[-n:] if n else state.eta[:0]
    resid = data.y - mean_matrix(state, data, spec) - eta_obs @ state.lam.T
    return float(-0.5 * n * np.sum(np.log(2.0 * np.pi * state.sigma2))
                 - 0.5 * np.sum(resid ** 2 / state.sigma2))
