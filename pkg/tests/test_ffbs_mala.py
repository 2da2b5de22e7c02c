"""Oracles for the dynamic-factor machinery.

The path sampler is checked against the exact Gaussian conditional of
the whole factor path computed from the stationary autocovariances (a
construction the sampler itself never uses).  The gradient of the
dynamics posterior is checked against central finite differences, and
the full Langevin move against one-dimensional quadrature.
"""

import numpy as np
import pytest

from structfact.sampler import FactorModelSpec, MeanModel, ModelData
from structfact.sampler.state import ChainState
from structfact.sampler.ffbs import ffbs_factors, simulate_var_path
from structfact.sampler.mala import (
    dynamics_gradient,
    logpost_dynamics,
    pac_to_var_jvp,
    path_loglik,
    update_dynamics_mala,
)
from structfact.stationary import (
    PACParams,
    companion_initial_cov,
    companion_spectral_radius,
    pac_to_var,
)


def path_autocovariances(var, max_lag):
    """Lag autocovariances 0..max_lag; beyond the stored ones they
    follow the Yule-Walker recursion."""
    gs = [g.copy() for g in var.autocov]
    for j in range(var.m, max_lag + 1):
        if j < len(gs):
            continue
        gs.append(sum(var.gammas[i] @ gs[j - 1 - i] for i in range(var.m)))
    return gs


def full_path_cov(var, n):
    """Covariance of (eta_{1-m}, ..., eta_n) stacked oldest to newest."""
    k, m = var.k, var.m
    total = n + m
    gs = path_autocovariances(var, total)
    cov = np.zeros((total * k, total * k))
    for a in range(total):
        for b in range(total):
            lag = a - b
            blk = gs[abs(lag)]
            if lag < 0:
                blk = blk.T
            cov[a * k:(a + 1) * k, b * k:(b + 1) * k] = blk
    return cov


def brute_force_conditional(var, lam, sigma2, y):
    """Exact posterior mean and covariance of the stacked path."""
    n, p = y.shape
    k, m = var.k, var.m
    total = n + m
    sig = full_path_cov(var, n)
    bmat = np.zeros((n * p, total * k))
    for t in range(1, n + 1):
        at = (t + m - 1) * k
        bmat[(t - 1) * p:t * p, at:at + k] = lam
    rmat = np.diag(np.tile(sigma2, n))
    s_obs = bmat @ sig @ bmat.T + rmat
    gain = sig @ bmat.T @ np.linalg.inv(s_obs)
    mean = gain @ y.ravel()
    cov = sig - gain @ bmat @ sig
    return mean, cov


class TestPathSampler:
    def test_matches_exact_conditional_order_two(self):
        rng = np.random.default_rng(0)
        k, m, p, n = 1, 2, 2, 4
        a_mats = [np.array([[0.9]]), np.array([[-0.4]])]
        var = pac_to_var(PACParams(a_mats))
        lam = np.array([[1.2], [-0.7]])
        sigma2 = np.array([0.5, 0.8])
        y = rng.standard_normal((n, p))

        spec = FactorModelSpec(p=p, kind="dynamic", order=m, h_init=1,
                               h_max=1, mean=MeanModel("constant"))
        data = ModelData(y=y)
        state = ChainState(lam=lam, eta=np.zeros((n + m, k)),
                           sigma2=sigma2, rho=np.ones(1),
                           mu=np.zeros(p), a_mats=a_mats)

        n_draw = 60000
        draws = np.empty((n_draw, n + m))
        for i in range(n_draw):
            ffbs_factors(state, data, spec, rng)
            draws[i] = state.eta[:, 0]

        mean, cov = brute_force_conditional(var, lam, sigma2, y)
        se_mean = np.sqrt(np.diag(cov) / n_draw)
        assert np.all(np.abs(draws.mean(axis=0) - mean) < 4 * se_mean)

        emp_cov = np.cov(draws.T)
        se_cov = np.sqrt((np.outer(np.diag(cov), np.diag(cov))
                          + cov ** 2) / n_draw)
        assert np.all(np.abs(emp_cov - cov) < 4 * se_cov)

    def test_no_data_draws_from_stationary_prior(self):
        rng = np.random.default_rng(1)
        k, m = 2, 1
        a_mats = [np.array([[0.5, 0.2], [-0.1, 0.3]])]
        var = pac_to_var(PACParams(a_mats))
        spec = FactorModelSpec(p=50, kind="dynamic", order=1, h_init=2,
                               h_max=2)
        data = ModelData(y=np.zeros((0, 50)))
        state = ChainState(lam=np.zeros((50, k)), eta=np.zeros((m, k)),
                           sigma2=np.ones(50), rho=np.ones(k),
                           mu=np.zeros(50), a_mats=a_mats)
        n_draw = 40000
        draws = np.empty((n_draw, k))
        for i in range(n_draw):
            ffbs_factors(state, data, spec, rng)
            draws[i] = state.eta[0]
        # stationary variance is pinned to the identity
        emp = np.cov(draws.T)
        assert np.all(np.abs(emp - np.eye(k)) < 4 * np.sqrt(2.0 / n_draw))

    def test_simulated_path_has_unit_stationary_variance(self):
        rng = np.random.default_rng(2)
        a_mats = [0.8 * np.eye(2), np.array([[0.1, 0.3], [-0.2, 0.0]])]
        var = pac_to_var(PACParams(a_mats))
        path = simulate_var_path(var, 40000, rng)
        emp = path.T @ path / len(path)
        assert np.all(np.abs(emp - np.eye(2)) < 0.05)


class TestDynamicsGradient:
    def _fd_gradient(self, a_mats, eta):
        flat_idx = [(i, r, c) for i in range(len(a_mats))
                    for r in range(a_mats[0].shape[0])
                    for c in range(a_mats[0].shape[0])]
        out = np.empty(len(flat_idx))
        for j, (i, r, c) in enumerate(flat_idx):
            step = 1e-6 * (1.0 + abs(a_mats[i][r, c]))
            plus = [a.copy() for a in a_mats]
            minus = [a.copy() for a in a_mats]
            plus[i][r, c] += step
            minus[i][r, c] -= step
            out[j] = (logpost_dynamics(plus, eta)
                      - logpost_dynamics(minus, eta)) / (2 * step)
        return out

    def test_forward_mode_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        k, m, n = 2, 2, 30
        a_mats = [rng.standard_normal((k, k)) * 0.6 for _ in range(m)]
        eta = simulate_var_path(pac_to_var(PACParams(a_mats)), n, rng)
        grad = dynamics_gradient(a_mats, eta)
        fd = self._fd_gradient(a_mats, eta)
        rel = np.abs(grad - fd) / (1.0 + np.abs(fd))
        assert rel.max() < 1e-6, rel.max()

    def test_jvp_of_reparameterization_matches_fd(self):
        rng = np.random.default_rng(4)
        k, m = 2, 3
        a_mats = [rng.standard_normal((k, k)) * 0.5 for _ in range(m)]
        i0, r0, c0 = 1, 0, 1
        da = [np.zeros((k, k)) for _ in range(m)]
        da[i0][r0, c0] = 1.0
        var, dgam, dpi, dauto = pac_to_var_jvp(a_mats, da)

        h = 1e-7
        plus = [a.copy() for a in a_mats]
        minus = [a.copy() for a in a_mats]
        plus[i0][r0, c0] += h
        minus[i0][r0, c0] -= h
        vp = pac_to_var(PACParams(plus))
        vm = pac_to_var(PACParams(minus))
        for j in range(m):
            fd = (vp.gammas[j] - vm.gammas[j]) / (2 * h)
            assert np.allclose(dgam[j], fd, atol=1e-6)
        assert np.allclose(dpi, (vp.pi - vm.pi) / (2 * h), atol=1e-6)
        for j in range(1, m):
            fd = (vp.autocov[j] - vm.autocov[j]) / (2 * h)
            assert np.allclose(dauto[j], fd, atol=1e-6)

    def test_primal_of_jvp_matches_plain_map(self):
        rng = np.random.default_rng(5)
        a_mats = [rng.standard_normal((3, 3)) * 0.4 for _ in range(2)]
        da = [np.zeros((3, 3)) for _ in range(2)]
        var_j, _, _, _ = pac_to_var_jvp(a_mats, da)
        var = pac_to_var(PACParams(a_mats))
        for g1, g2 in zip(var_j.gammas, var.gammas):
            assert np.allclose(g1, g2, atol=1e-12)
        assert np.allclose(var_j.pi, var.pi, atol=1e-12)


class TestLangevinMove:
    def test_marginal_matches_quadrature_scalar_case(self):
        rng = np.random.default_rng(6)
        true_a = [np.array([[1.0]])]
        eta = simulate_var_path(pac_to_var(PACParams(true_a)), 60,
                                np.random.default_rng(7))
        state = ChainState(lam=np.zeros((2, 1)), eta=eta,
                           sigma2=np.ones(2), rho=np.ones(1),
                           mu=np.zeros(2), a_mats=[np.array([[0.3]])])
        n_iter = 20000
        draws = np.empty(n_iter)
        for i in range(n_iter):
            update_dynamics_mala(state, rng, 0.25, 1)
            draws[i] = state.a_mats[0][0, 0]

        grid = np.linspace(-4.0, 6.0, 3001)
        logp = np.array([logpost_dynamics([np.array([[a]])], eta)
                         for a in grid])
        dens = np.exp(logp - logp.max())
        dens /= np.trapezoid(dens, grid)
        cdf = np.concatenate([[0.0], np.cumsum(
            0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
        cdf /= cdf[-1]
        edges = np.interp(np.linspace(0.0, 1.0, 9), cdf, grid)
        edges[0], edges[-1] = -np.inf, np.inf
        hist, _ = np.histogram(draws, bins=edges)
        tv = 0.5 * np.abs(hist / n_iter - 1.0 / 8).sum()
        assert tv < 0.05, tv

    def test_moves_stay_stationary_and_mix(self):
        rng = np.random.default_rng(8)
        k, m = 2, 2
        a_mats = [rng.standard_normal((k, k)) * 0.4 for _ in range(m)]
        eta = simulate_var_path(pac_to_var(PACParams(a_mats)), 80, rng)
        state = ChainState(lam=np.zeros((3, k)), eta=eta,
                           sigma2=np.ones(3), rho=np.ones(k),
                           mu=np.zeros(3),
                           a_mats=[a.copy() for a in a_mats])
        accepted = attempted = 0
        for _ in range(150):
            acc, att = update_dynamics_mala(state, rng, 0.08, 2)
            accepted += acc
            attempted += att
            var = state.var_params()
            assert companion_spectral_radius(var) < 1.0
        assert accepted > 0.1 * attempted


class TestPathDensity:
    def test_loglik_matches_direct_multivariate_normal(self):
        rng = np.random.default_rng(9)
        k, m, n = 2, 2, 6
        a_mats = [rng.standard_normal((k, k)) * 0.5 for _ in range(m)]
        var = pac_to_var(PACParams(a_mats))
        eta = simulate_var_path(var, n, rng)
        val = path_loglik(var, eta)
        cov = full_path_cov(var, n)
        x = eta.ravel()
        sign, logdet = np.linalg.slogdet(cov)
        direct = -0.5 * (logdet + x @ np.linalg.solve(cov, x))
        assert np.isclose(val, direct, atol=1e-8)
