"""Gradient-based Metropolis moves for the dynamics parameters.

The unconstrained coefficient matrices map through the partial-
autocorrelation recursion to VAR coefficients, an innovation variance,
and the stationary initial covariance; the factor-path log density is a
function of those three.  Gradients are obtained by a hand-written
forward-mode pass through the recursion (one directional derivative per
coordinate) combined with closed-form adjoints of the path density, and
are checked against finite differences in the tests.
"""

from __future__ import annotations

import numpy as np

from ..errors import NumericalError
from ..stationary import PACParams, VARParams, companion_initial_cov, pac_to_var
from ..util import spd_inv, spd_logdet, spd_solve


def _sqrt_dual(s, ds):
    """Symmetric matrix square root and its directional derivative."""
    s = 0.5 * (s + s.T)
    w, v = np.linalg.eigh(s)
    if w[0] <= 0:
        raise NumericalError("square-root argument not positive definite")
    r = np.sqrt(w)
    root = (v * r) @ v.T
    mid = (v.T @ (0.5 * (ds + ds.T)) @ v) / (r[:, None] + r[None, :])
    droot = v @ mid @ v.T
    return 0.5 * (root + root.T), 0.5 * (droot + droot.T)


def _inv_dual(x, dx):
    inv = np.linalg.inv(x)
    return inv, -inv @ dx @ inv


def _a_to_p_dual(a, da):
    k = a.shape[0]
    mat = np.eye(k) + a @ a.T
    dmat = da @ a.T + a @ da.T
    root, droot = _sqrt_dual(mat, dmat)
    rinv, drinv = _inv_dual(root, droot)
    return rinv @ a, drinv @ a + rinv @ da


def pac_to_var_jvp(a_mats, da_mats):
    """Forward-mode derivative of the stationarity map.

    Mirrors the Levinson recursion step for step, carrying a tangent for
    every intermediate.  Returns the VAR parameters together with the
    tangents of the coefficients, the innovation variance, and the lag
    autocovariances.
    """
    m = len(a_mats)
    k = a_mats[0].shape[0]
    eye = np.eye(k)
    zero = np.zeros((k, k))
    ps, dps = [], []
    for a, da in zip(a_mats, da_mats):
        p_, dp_ = _a_to_p_dual(np.asarray(a, float), np.asarray(da, float))
        ps.append(p_)
        dps.append(dp_)
    sig_f, dsig_f = eye.copy(), zero.copy()
    sig_b, dsig_b = eye.copy(), zero.copy()
    phis, dphis = [], []
    phis_b, dphis_b = [], []
    autocov, dautocov = [eye.copy()], [zero.copy()]
    for s in range(m):
        lf, dlf = _sqrt_dual(sig_f, dsig_f)
        lb, dlb = _sqrt_dual(sig_b, dsig_b)
        lf_inv, dlf_inv = _inv_dual(lf, dlf)
        lb_inv, dlb_inv = _inv_dual(lb, dlb)
        pm, dpm = ps[s], dps[s]
        delta = lf @ pm @ lb
        ddelta = dlf @ pm @ lb + lf @ dpm @ lb + lf @ pm @ dlb
        phi_new = lf @ pm @ lb_inv
        dphi_new = dlf @ pm @ lb_inv + lf @ dpm @ lb_inv + lf @ pm @ dlb_inv
        phib_new = lb @ pm.T @ lf_inv
        dphib_new = dlb @ pm.T @ lf_inv + lb @ dpm.T @ lf_inv \
            + lb @ pm.T @ dlf_inv
        phis_next = [phis[j] - phi_new @ phis_b[s - 1 - j] for j in range(s)]
        dphis_next = [dphis[j] - dphi_new @ phis_b[s - 1 - j]
                      - phi_new @ dphis_b[s - 1 - j] for j in range(s)]
        phis_b_next = [phis_b[j] - phib_new @ phis[s - 1 - j]
                       for j in range(s)]
        dphis_b_next = [dphis_b[j] - dphib_new @ phis[s - 1 - j]
                        - phib_new @ dphis[s - 1 - j] for j in range(s)]
        phis_next.append(phi_new)
        dphis_next.append(dphi_new)
        phis_b_next.append(phib_new)
        dphis_b_next.append(dphib_new)
        if s < m - 1:
            g_new = delta.copy()
            dg_new = ddelta.copy()
            for j in range(s):
                g_new = g_new + phis[j] @ autocov[s - j]
                dg_new = dg_new + dphis[j] @ autocov[s - j] \
                    + phis[j] @ dautocov[s - j]
            autocov.append(g_new)
            dautocov.append(dg_new)
        qf = eye - pm @ pm.T
        dqf = -(dpm @ pm.T + pm @ dpm.T)
        qb = eye - pm.T @ pm
        dqb = -(dpm.T @ pm + pm.T @ dpm)
        sig_f = lf @ qf @ lf
        dsig_f = dlf @ qf @ lf + lf @ dqf @ lf + lf @ qf @ dlf
        sig_b = lb @ qb @ lb
        dsig_b = dlb @ qb @ lb + lb @ dqb @ lb + lb @ qb @ dlb
        sig_f = 0.5 * (sig_f + sig_f.T)
        dsig_f = 0.5 * (dsig_f + dsig_f.T)
        sig_b = 0.5 * (sig_b + sig_b.T)
        dsig_b = 0.5 * (dsig_b + dsig_b.T)
        phis, phis_b = phis_next, phis_b_next
        dphis, dphis_b = dphis_next, dphis_b_next
    var = VARParams(gammas=phis, pi=sig_f, autocov=autocov)
    return var, dphis, dsig_f, dautocov


def _toeplitz_tangent(dautocov, m, k):
    """Tangent of the stacked initial covariance (newest block first)."""
    dv = np.zeros((k * m, k * m))
    for i in range(m):
        for j in range(m):
            lag = j - i
            blk = dautocov[abs(lag)]
            if lag < 0:
                blk = blk.T
            dv[i * k:(i + 1) * k, j * k:(j + 1) * k] = blk
    return dv


def _lagged(eta, m, i, n):
    return eta[m - i: n + m - i]


def path_residuals(var: VARParams, eta: np.ndarray) -> np.ndarray:
    """One-step transition residuals for the in-sample rows."""
    m = var.m
    n = eta.shape[0] - m
    zeta = eta[m:].copy()
    for i, g in enumerate(var.gammas, start=1):
        zeta -= _lagged(eta, m, i, n) @ g.T
    return zeta


def path_loglik(var: VARParams, eta: np.ndarray) -> float:
    """Log density of the factor path under the stationary dynamics,
    dropping constants that do not involve the dynamics parameters."""
    m, k = var.m, var.k
    n = eta.shape[0] - m
    v0 = companion_initial_cov(var)
    x0 = np.concatenate([eta[m - 1 - i] for i in range(m)])
    val = -0.5 * (spd_logdet(v0) + float(x0 @ spd_solve(v0, x0)))
    if n:
        zeta = path_residuals(var, eta)
        val -= 0.5 * n * spd_logdet(var.pi)
        val -= 0.5 * float(np.sum(zeta * spd_solve(var.pi, zeta.T).T))
    return val


def path_adjoints(var: VARParams, eta: np.ndarray):
    """Closed-form derivatives of the path log density with respect to
    the VAR coefficients, the innovation variance, and the stacked
    initial covariance."""
    m, k = var.m, var.k
    n = eta.shape[0] - m
    pi_inv = spd_inv(var.pi)
    if n:
        zeta = path_residuals(var, eta)
        zw = zeta @ pi_inv
        d_gammas = [zw.T @ _lagged(eta, m, i, n) for i in range(1, m + 1)]
        d_pi = -0.5 * n * pi_inv + 0.5 * pi_inv @ (zeta.T @ zeta) @ pi_inv
    else:
        d_gammas = [np.zeros((k, k)) for _ in range(m)]
        d_pi = np.zeros((k, k))
    v0 = companion_initial_cov(var)
    v0_inv = spd_inv(v0)
    x0 = np.concatenate([eta[m - 1 - i] for i in range(m)])
    w = v0_inv @ x0
    d_v0 = 0.5 * (np.outer(w, w) - v0_inv)
    return d_gammas, d_pi, d_v0


def logpost_dynamics(a_mats, eta) -> float:
    """Path log density plus the standard-normal prior on the entries."""
    var = pac_to_var(PACParams([np.asarray(a, float) for a in a_mats]))
    prior = -0.5 * sum(float(np.sum(np.asarray(a) ** 2)) for a in a_mats)
    return path_loglik(var, eta) + prior


def dynamics_gradient(a_mats, eta, which=None):
    """Gradient of logpost_dynamics with respect to selected coordinates.

    ``which`` lists (matrix index, row, col) triples; None means every
    coordinate.  One forward-mode pass per coordinate, contracted with
    the shared adjoints.
    """
    a_mats = [np.asarray(a, float) for a in a_mats]
    m = len(a_mats)
    k = a_mats[0].shape[0]
    var = pac_to_var(PACParams(a_mats))
    d_gammas, d_pi, d_v0 = path_adjoints(var, eta)
    if which is None:
        which = [(i, r, c) for i in range(m)
                 for r in range(k) for c in range(k)]
    grad = np.empty(len(which))
    zeros = [np.zeros((k, k)) for _ in range(m)]
    for out_idx, (i, r, c) in enumerate(which):
        da = [z.copy() for z in zeros]
        da[i][r, c] = 1.0
        _, dgam, dpi, dautocov = pac_to_var_jvp(a_mats, da)
        val = float(np.sum(d_pi * dpi))
        for dg_adj, dg in zip(d_gammas, dgam):
            val += float(np.sum(dg_adj * dg))
        val += float(np.sum(d_v0 * _toeplitz_tangent(dautocov, m, k)))
        grad[out_idx] = val - a_mats[i][r, c]
    return grad


def _blocks(total: int, size: int):
    return [list(range(at, min(at + size, total)))
            for at in range(0, total, size)]


def update_dynamics_mala(state, rng, step: float, block: int):
    """Langevin-proposal scan over coordinate blocks of each coefficient
    matrix.  Returns (accepted, attempted) move counts for tuning."""
    m = len(state.a_mats)
    k = state.a_mats[0].shape[0]
    eta = state.eta
    accepted = attempted = 0
    cur_val = logpost_dynamics(state.a_mats, eta)
    if not np.isfinite(cur_val):
        raise NumericalError("dynamics log posterior is not finite")
    for i in range(m):
        for idx in _blocks(k * k, block):
            attempted += 1
            which = [(i, r // k, r % k) for r in idx]
            grad_cur = dynamics_gradient(state.a_mats, eta, which)
            if not np.all(np.isfinite(grad_cur)):
                continue
            flat = state.a_mats[i].ravel()
            cur = flat[idx]
            noise = rng.standard_normal(len(idx))
            prop = cur + 0.5 * step ** 2 * grad_cur + step * noise
            prop_mats = [a.copy() for a in state.a_mats]
            prop_mats[i].ravel()[idx] = prop
            try:
                prop_val = logpost_dynamics(prop_mats, eta)
                grad_prop = dynamics_gradient(prop_mats, eta, which)
            except (NumericalError, np.linalg.LinAlgError):
                continue
            if not (np.isfinite(prop_val) and np.all(np.isfinite(grad_prop))):
                continue
            fwd = prop - cur - 0.5 * step ** 2 * grad_cur
            rev = cur - prop - 0.5 * step ** 2 * grad_prop
            log_q = (np.sum(fwd ** 2) - np.sum(rev ** 2)) / (2.0 * step ** 2)
            if np.log(rng.random()) < prop_val - cur_val + log_q:
                state.a_mats[i] = prop_mats[i]
                cur_val = prop_val
                accepted += 1
    return accepted, attempted
