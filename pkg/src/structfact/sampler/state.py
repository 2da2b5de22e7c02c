"""Mutable chain state and prior initialization.

The state holds every sampled quantity for one chain at its current
truncation level.  Derived objects (scale matrices, VAR coefficients)
are rebuilt from the state on demand rather than cached, which keeps
truncation changes simple.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from ..errors import ValidationError
from ..matrixvariate import sample_wishart
from ..priors import MgpState, build_phi, mgp_psi, mgp_sample_prior
from ..stationary import PACParams, pac_to_var
from ..util import as_generator
from .modelspec import FactorModelSpec, ModelData


@dataclass
class ChainState:
    """Current values of all sampled parameters.

    ``eta`` has one row per observation for static and probit models and
    ``order`` extra leading rows of pre-sample factors for dynamic ones.
    ``s_mat``/``varsigma_check`` are only present under the heavy-tailed
    loading prior, ``a_mats`` only for dynamic models, ``z`` only for
    probit models.
    """

    lam: np.ndarray
    eta: np.ndarray
    sigma2: np.ndarray
    rho: np.ndarray
    theta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mu: np.ndarray | None = None
    b: np.ndarray | None = None
    kmat: np.ndarray | None = None
    s_mat: np.ndarray | None = None
    varsigma_check: float | None = None
    a_mats: list | None = None
    z: np.ndarray | None = None

    @property
    def h(self) -> int:
        return self.lam.shape[1]

    def psi(self, spec: FactorModelSpec) -> np.ndarray:
        return mgp_psi(MgpState(spec.mgp_a1, spec.mgp_a2, self.rho))

    def var_params(self):
        if self.a_mats is None:
            raise ValidationError("state has no autoregressive parameters")
        return pac_to_var(PACParams([np.asarray(a) for a in self.a_mats]))

    def varsigma(self) -> float:
        if self.varsigma_check is None:
            raise ValidationError("state has no tail-weight parameter")
        return 4.0 + 1.0 / self.varsigma_check

    def copy(self) -> "ChainState":
        return ChainState(
            lam=self.lam.copy(),
            eta=self.eta.copy(),
            sigma2=self.sigma2.copy(),
            rho=self.rho.copy(),
            theta=self.theta.copy(),
            mu=None if self.mu is None else self.mu.copy(),
            b=None if self.b is None else self.b.copy(),
            kmat=None if self.kmat is None else self.kmat.copy(),
            s_mat=None if self.s_mat is None else self.s_mat.copy(),
            varsigma_check=self.varsigma_check,
            a_mats=None if self.a_mats is None
            else [a.copy() for a in self.a_mats],
            z=None if self.z is None else self.z.copy(),
        )


def draw_loadings_given_scales(spec: FactorModelSpec, theta, psi, s_mat, rng):
    """One loadings matrix draw from its conditional prior.

    Under the Gaussian prior the rows share the structured scale built
    from ``theta``; under the heavy-tailed prior they share the inverse
    of the current mixing matrix ``s_mat``.
    """
    p, h = spec.p, len(psi)
    z = rng.standard_normal((p, h))
    if spec.prior == "matrix-t":
        f = cholesky(s_mat, lower=True)
        half = solve_triangular(f.T, z, lower=False)
    else:
        phi = build_phi(spec.phi.with_theta(theta))
        half = cholesky(phi, lower=True) @ z
    return half * np.sqrt(psi)[None, :]


def init_theta(spec: FactorModelSpec, rng) -> np.ndarray:
    """Starting hyperparameters: mid-interval for bounded ones, unit for
    positive length-scales, jittered so distinct seeds start apart."""
    vals = []
    for b in spec.phi.theta_bounds():
        if b[0] == "log":
            vals.append(float(np.exp(0.1 * rng.standard_normal())))
        else:
            _, lo, hi = b
            mid = 0.5 * (lo + hi)
            width = hi - lo
            vals.append(float(np.clip(mid + 0.05 * width * rng.standard_normal(),
                                      lo + 0.01 * width, hi - 0.01 * width)))
    return np.asarray(vals)


def init_state_from_prior(spec: FactorModelSpec, data: ModelData,
                          rng) -> ChainState:
    """Draw every parameter from its prior (factors from theirs given the
    rest) to start a chain.  Probit latents are drawn from their truncated
    conditional so the state is consistent with the observed signs."""
    from .conditionals import update_probit_latents
    from .ffbs import simulate_var_path

    rng = as_generator(rng)
    spec.check_data(data)
    p, n, h = spec.p, data.n, spec.h_init

    theta = init_theta(spec, rng)
    mgp = mgp_sample_prior(spec.mgp_a1, spec.mgp_a2, h, rng)
    psi = mgp_psi(mgp)

    varsigma_check = None
    s_mat = None
    if spec.prior == "matrix-t":
        varsigma_check = float(rng.exponential(1.0 / spec.varsigma_rate))
        varsigma = 4.0 + 1.0 / varsigma_check
        phi_breve = (varsigma - 2.0) * build_phi(spec.phi.with_theta(theta))
        s_mat = sample_wishart(varsigma + p - 1.0, np.linalg.inv(phi_breve),
                               rng)

    lam = draw_loadings_given_scales(spec, theta, psi, s_mat, rng)

    if spec.kind == "probit":
        sigma2 = np.ones(p)
    else:
        sigma2 = 1.0 / rng.gamma(spec.sigma_shape, 1.0 / spec.sigma_rate,
                                 size=p)

    mu = b = kmat = None
    mk = spec.mean.kind
    if mk == "constant":
        mu = np.sqrt(spec.mean.s_mu2) * rng.standard_normal(p)
    else:
        if mk == "hierarchical":
            kmat = np.sqrt(spec.mean.s_kappa2) * rng.standard_normal(
                (spec.n_meta, spec.n_covariates))
            bt = data.x @ kmat + np.sqrt(spec.mean.s_beta2) \
                * rng.standard_normal((p, spec.n_covariates))
        else:
            bt = np.sqrt(spec.mean.s_beta2) * rng.standard_normal(
                (p, spec.n_covariates))
        b = bt.T

    a_mats = None
    if spec.kind == "dynamic":
        a_mats = [rng.standard_normal((h, h)) for _ in range(spec.order)]
        var = pac_to_var(PACParams(a_mats))
        eta = simulate_var_path(var, n, rng)
    else:
        eta = rng.standard_normal((n, h))

    state = ChainState(lam=lam, eta=eta, sigma2=sigma2, rho=mgp.rho,
                       theta=theta, mu=mu, b=b, kmat=kmat, s_mat=s_mat,
                       varsigma_check=varsigma_check, a_mats=a_mats)

    if spec.kind == "probit":
        state.z = np.zeros((n, p))
        if n:
            update_probit_latents(state, data, spec, rng)
    return state


def simulate_data(spec: FactorModelSpec, state: ChainState,
                  data: ModelData, rng) -> np.ndarray:
    """Draw a fresh observation matrix given the current parameters.

    For probit models this refreshes the latent sheet in place and
    returns the implied binary matrix.  Covariates in ``data`` are held
    fixed.
    """
    from .conditionals import mean_matrix

    rng = as_generator(rng)
    n, p = data.n, spec.p
    eta_obs = state.eta[-n:] if n else state.eta[:0]
    signal = mean_matrix(state, data, spec) + eta_obs @ state.lam.T
    if spec.kind == "probit":
        state.z = signal + rng.standard_normal((n, p))
        return (state.z > 0).astype(float)
    return signal + rng.standard_normal((n, p)) * np.sqrt(state.sigma2)
