"""Stationarity-preserving reparameterization of the factor dynamics.

The binding oracle: for any unconstrained parameters, the implied
companion form must be stable and its Lyapunov stationary variance must
have identity top-left block.
"""
from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg

from structfact.errors import ValidationError
from structfact.stationary import (
    PACParams,
    VARParams,
    a_to_p,
    build_initial_dist,
    companion_initial_cov,
    companion_matrix,
    companion_spectral_radius,
    p_to_a,
    pac_to_var,
    rotate_expansion,
)


def lyapunov_stationary_cov(var: VARParams) -> np.ndarray:
    """Independent oracle: solve the companion-form discrete Lyapunov
    equation for the stationary covariance of the stacked state."""
    m, k = var.m, var.k
    f = companion_matrix(var.gammas)
    q = np.zeros((k * m, k * m))
    q[:k, :k] = var.pi
    return scipy.linalg.solve_discrete_lyapunov(f, q)


def test_a_to_p_basics():
    assert np.allclose(a_to_p(np.zeros((3, 3))), 0.0)
    assert a_to_p(np.array([[1.0]]))[0, 0] == pytest.approx(1.0 / np.sqrt(2.0))


def test_p_to_a_basics():
    assert np.allclose(p_to_a(np.zeros((2, 2))), 0.0)
    assert p_to_a(np.array([[1.0 / np.sqrt(2.0)]]))[0, 0] == pytest.approx(1.0)
    with pytest.raises(ValidationError):
        p_to_a(np.array([[1.0]]))


def test_round_trip_sweep():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        k = int(rng.integers(1, 7))
        a = rng.standard_normal((k, k)) * rng.uniform(0.2, 3.0)
        p = a_to_p(a)
        assert np.linalg.svd(p, compute_uv=False)[0] < 1.0
        assert np.allclose(p_to_a(p), a, atol=1e-10)
        q = rng.uniform(0.0, 0.99) * rng.standard_normal((k, k))
        q = q / max(1.01, np.linalg.svd(q, compute_uv=False)[0] * 1.01)
        assert np.allclose(a_to_p(p_to_a(q)), q, atol=1e-10)


def test_var1_closed_form():
    pac = PACParams([np.zeros((2, 2))])
    var = pac_to_var(pac)
    assert np.allclose(var.gammas[0], 0.0)
    assert np.allclose(var.pi, np.eye(2))

    pac = PACParams([np.array([[1.0]])])
    var = pac_to_var(pac)
    g = var.gammas[0][0, 0]
    assert g == pytest.approx(1.0 / np.sqrt(2.0), abs=1e-9)
    assert var.pi[0, 0] == pytest.approx(0.5)
    # scalar stationary-variance identity
    assert g * g + var.pi[0, 0] == pytest.approx(1.0)


def test_var1_matches_direct_formulas():
    rng = np.random.default_rng(12)
    a = rng.standard_normal((3, 3))
    var = pac_to_var(PACParams([a]))
    p = a_to_p(a)
    assert np.allclose(var.gammas[0], p, atol=1e-12)
    assert np.allclose(var.pi, np.eye(3) - p @ p.T, atol=1e-12)


def test_scalar_ar2_autocov():
    rng = np.random.default_rng(13)
    a1, a2 = rng.standard_normal(2)
    var = pac_to_var(PACParams([[[a1]], [[a2]]]))
    p1 = a1 / np.sqrt(1 + a1 * a1)
    p2 = a2 / np.sqrt(1 + a2 * a2)
    assert var.gammas[0][0, 0] == pytest.approx(p1 * (1 - p2))
    assert var.gammas[1][0, 0] == pytest.approx(p2)
    assert var.pi[0, 0] == pytest.approx((1 - p1 * p1) * (1 - p2 * p2))
    init = build_initial_dist(var)
    assert np.allclose(init.g, [[1.0, p1], [p1, 1.0]])


def test_companion_spectral_radius_values():
    assert companion_spectral_radius([np.zeros((2, 2))]) == 0.0
    r = companion_spectral_radius([np.array([[0.70711]])])
    assert r == pytest.approx(0.70711)


def test_stationarity_and_unit_variance_sweep():
    # 1000 random parameter draws, m <= 3, k <= 4: companion radius < 1
    # and Lyapunov stationary variance of the current state equals I.
    rng = np.random.default_rng(14)
    for _ in range(1000):
        m = int(rng.integers(1, 4))
        k = int(rng.integers(1, 5))
        pac = PACParams([rng.standard_normal((k, k)) * rng.uniform(0.3, 2.0)
                         for _ in range(m)])
        var = pac_to_var(pac)
        assert companion_spectral_radius(var) < 1.0
        cov = lyapunov_stationary_cov(var)
        assert np.abs(cov[:k, :k] - np.eye(k)).max() < 1e-8


def test_autocov_by_products_match_lyapunov():
    rng = np.random.default_rng(15)
    for _ in range(50):
        m = int(rng.integers(2, 4))
        k = int(rng.integers(1, 4))
        pac = PACParams([rng.standard_normal((k, k)) for _ in range(m)])
        var = pac_to_var(pac)
        cov = lyapunov_stationary_cov(var)
        # companion state is (eta_t, eta_{t-1}, ...): block (0, j) is
        # E[eta_t eta_{t-j}'] which the recursion emits as autocov[j]
        for j in range(1, m):
            assert np.allclose(cov[:k, j * k:(j + 1) * k], var.autocov[j],
                               atol=1e-8)
        assert np.allclose(companion_initial_cov(var), cov, atol=1e-8)


def test_initial_dist_spd_and_toeplitz():
    rng = np.random.default_rng(16)
    for _ in range(50):
        m = int(rng.integers(1, 4))
        k = int(rng.integers(1, 4))
        var = pac_to_var(PACParams([rng.standard_normal((k, k))
                                    for _ in range(m)]))
        init = build_initial_dist(var)
        g = init.g
        assert np.allclose(g, g.T)
        for i in range(m):
            for j in range(m):
                ii, jj = i + 1, j + 1
                if ii < m and jj < m:
                    a = g[i * k:(i + 1) * k, j * k:(j + 1) * k]
                    b = g[ii * k:(ii + 1) * k, jj * k:(jj + 1) * k]
                    assert np.array_equal(a, b)
        if m == 1:
            assert np.array_equal(g, np.eye(k))


def test_initial_dist_rejects_nonstationary():
    var = VARParams(gammas=[np.array([[1.2]])], pi=np.array([[1.0]]),
                    autocov=[np.array([[1.0]])])
    with pytest.raises(ValidationError):
        build_initial_dist(var)


def random_orthogonal(rng, k):
    q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    return q


def test_rotation_identity_and_invariants():
    rng = np.random.default_rng(17)
    k = 3
    lam = rng.standard_normal((6, k))
    eta = rng.standard_normal((10, k))
    var = pac_to_var(PACParams([rng.standard_normal((k, k))]))
    out = rotate_expansion(np.eye(k), lam=lam, eta=eta,
                           gammas=var.gammas, pi=var.pi)
    assert np.allclose(out["lam"], lam)
    assert np.allclose(out["eta"], eta)

    q = random_orthogonal(rng, k)
    out = rotate_expansion(q, lam=lam, eta=eta, gammas=var.gammas,
                           pi=var.pi, a_mats=[rng.standard_normal((k, k))])
    assert np.allclose(out["lam"] @ out["lam"].T, lam @ lam.T, atol=1e-10)
    ev_before = np.sort_complex(np.linalg.eigvals(var.gammas[0]))
    ev_after = np.sort_complex(np.linalg.eigvals(out["gammas"][0]))
    assert np.allclose(ev_before, ev_after, atol=1e-10)


def test_rotation_preserves_likelihood_and_dynamics_consistency():
    # Rotating (lam, eta, gammas, pi) must leave both the observation
    # likelihood and the state-transition likelihood unchanged.
    rng = np.random.default_rng(18)
    k, p, n = 2, 5, 30
    lam = rng.standard_normal((p, k))
    a = rng.standard_normal((k, k))
    var = pac_to_var(PACParams([a]))
    eta = np.zeros((n + 1, k))
    chol_pi = np.linalg.cholesky(var.pi)
    eta[0] = rng.standard_normal(k)
    for t in range(1, n + 1):
        eta[t] = var.gammas[0] @ eta[t - 1] + chol_pi @ rng.standard_normal(k)
    sigma2 = rng.uniform(0.5, 1.5, size=p)
    y = eta[1:] @ lam.T + rng.standard_normal((n, p)) * np.sqrt(sigma2)

    def obs_ll(lam_, eta_):
        resid = y - eta_[1:] @ lam_.T
        return -0.5 * np.sum(resid ** 2 / sigma2)

    def trans_ll(eta_, gam, pi):
        innov = eta_[1:] - eta_[:-1] @ gam.T
        pinv = np.linalg.inv(pi)
        _, logdet = np.linalg.slogdet(pi)
        return -0.5 * (n * logdet + np.einsum("ti,ij,tj->", innov, pinv, innov))

    q = random_orthogonal(rng, k)
    out = rotate_expansion(q, lam=lam, eta=eta, gammas=var.gammas, pi=var.pi)
    assert abs(obs_ll(lam, eta) - obs_ll(out["lam"], out["eta"])) < 1e-8
    assert abs(trans_ll(eta, var.gammas[0], var.pi)
               - trans_ll(out["eta"], out["gammas"][0], out["pi"])) < 1e-8


def test_rotation_rejects_non_orthogonal():
    with pytest.raises(ValidationError):
        rotate_expansion(np.array([[1.0, 0.1], [0.0, 1.0]]),
                         lam=np.zeros((3, 2)))
