"""Truncation adaptation: measuring the effective column count and
growing or shrinking the state to match it.

All randomness here draws from a dedicated stream so that toggling
adaptation never perturbs the main sweep sequence.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import block_diag, cholesky, solve_triangular

from ..priors import build_phi
from ..stationary import PACParams, a_to_p, p_to_a, pac_to_var
from .modelspec import FactorModelSpec, ModelData, SamplerConfig
from .state import ChainState


def effective_k(lam: np.ndarray, sigma2: np.ndarray, criterion: str,
                epsilon: float = 1e-4, trace_target: float = 0.999) -> int:
    """Number of columns doing real work under the chosen criterion.

    ``epsilon`` counts columns whose largest absolute loading clears a
    threshold.  ``proportion`` ranks columns by squared norm and returns
    the smallest count whose retained shared variation, plus the
    idiosyncratic floor, reaches the target share of the total.
    """
    lam = np.asarray(lam, dtype=float)
    if criterion == "epsilon":
        if lam.shape[1] == 0:
            return 0
        return int(np.sum(np.abs(lam).max(axis=0) >= epsilon))
    norms = np.sum(lam ** 2, axis=0)
    noise = float(np.sum(sigma2))
    total = float(norms.sum()) + noise
    if noise / total >= trace_target - 1e-12:
        return 0
    ranked = np.sort(norms)[::-1]
    ratios = (noise + np.cumsum(ranked)) / total
    return int(np.argmax(ratios >= trace_target - 1e-12) + 1)


def adaptation_probability(config: SamplerConfig, iteration: int) -> float:
    return float(np.exp(config.adapt_alpha0
                        + config.adapt_alpha1 * iteration))


def _keep_indices(state: ChainState, config: SamplerConfig,
                  kstar: int) -> np.ndarray:
    if config.criterion == "epsilon":
        mask = np.abs(state.lam).max(axis=0) >= config.epsilon
        keep = np.flatnonzero(mask)
    else:
        norms = np.sum(state.lam ** 2, axis=0)
        keep = np.sort(np.argsort(-norms, kind="stable")[:kstar])
    if keep.size == 0:
        # never drop to an empty state; retain the strongest column
        keep = np.array([int(np.argmax(np.abs(state.lam).max(axis=0)))])
    return keep


def _shrink(state: ChainState, keep: np.ndarray) -> None:
    state.lam = state.lam[:, keep]
    state.eta = state.eta[:, keep]
    state.rho = state.rho[keep]
    if state.a_mats is not None:
        new = []
        for a in state.a_mats:
            p_full = a_to_p(a)
            new.append(p_to_a(p_full[np.ix_(keep, keep)]))
        state.a_mats = new


def _grow(state: ChainState, data: ModelData, spec: FactorModelSpec,
          rng) -> None:
    from .ffbs import simulate_var_path

    p, n = spec.p, data.n
    state.rho = np.append(state.rho, rng.gamma(spec.mgp_a2, 1.0))
    psi_new = 1.0 / np.prod(state.rho)
    z = rng.standard_normal(p)
    if spec.prior == "matrix-t":
        f = cholesky(state.s_mat, lower=True)
        col = solve_triangular(f.T, z, lower=False)
    else:
        phi = build_phi(spec.phi.with_theta(state.theta))
        col = cholesky(phi, lower=True) @ z
    state.lam = np.column_stack([state.lam, np.sqrt(psi_new) * col])

    if state.a_mats is None:
        state.eta = np.column_stack([state.eta, rng.standard_normal(n)])
        return

    new_pacs = []
    new_a = []
    for a in state.a_mats:
        p_full = a_to_p(a)
        smin = np.linalg.svd(p_full, compute_uv=False)[-1]
        c = rng.uniform(0.0, smin)
        new_pacs.append(np.array([[c]]))
        new_a.append(p_to_a(block_diag(p_full, c)))
    state.a_mats = new_a
    var1 = pac_to_var(PACParams(new_pacs))
    path = simulate_var_path(var1, n, rng)
    state.eta = np.column_stack([state.eta, path[:, 0]])


def adapt_truncation(state: ChainState, data: ModelData,
                     spec: FactorModelSpec, config: SamplerConfig,
                     iteration: int, rng):
    """Maybe resize the truncation level at this iteration.

    Fires with a probability that decays over the run.  When the
    effective count sits below the current level, surplus columns are
    deleted; when every column is active and headroom remains, one
    fresh column is appended from the prior.  Returns (old, new) when a
    change happened, else None.
    """
    if not config.adapt_enabled or iteration < config.adapt_start:
        return None
    if rng.random() >= adaptation_probability(config, iteration):
        return None
    kstar = effective_k(state.lam, state.sigma2, config.criterion,
                        config.epsilon, config.trace_target)
    old = state.h
    if kstar < old:
        keep = _keep_indices(state, config, kstar)
        if keep.size == old:
            return None
        _shrink(state, keep)
        return old, state.h
    if old < spec.h_max:
        _grow(state, data, spec, rng)
        return old, state.h
    return None
