"""Synthetic dataset generation for experiments and end-to-end checks.

Parameters either come from the model prior or are pinned explicitly;
either way the returned ground-truth state makes recovery experiments
self-contained.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .sampler.ffbs import simulate_var_path
from .sampler.modelspec import FactorModelSpec, ModelData
from .sampler.state import ChainState, init_state_from_prior, simulate_data
from .stationary import PACParams, pac_to_var
from .util import as_generator


def build_true_state(spec: FactorModelSpec, n: int, rng, lam,
                     sigma2=None, mu=None, b=None, kmat=None,
                     a_mats=None) -> ChainState:
    """Assemble a ground-truth state around pinned parameters.

    Factor paths are drawn here (a stationary autoregressive path for
    dynamic models, independent rows otherwise), so the caller only
    fixes the quantities an experiment wants to recover.
    """
    rng = as_generator(rng)
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    p, h = lam.shape
    if p != spec.p:
        raise ValidationError(f"loadings have {p} rows but spec has p={spec.p}")
    if not 1 <= h <= spec.h_max:
        raise ValidationError(f"loadings have {h} columns, cap is {spec.h_max}")
    if spec.kind == "probit":
        sigma2 = np.ones(p)
    elif sigma2 is None:
        sigma2 = np.ones(p)
    else:
        sigma2 = np.asarray(sigma2, dtype=float)
        if sigma2.shape != (p,) or np.any(sigma2 <= 0):
            raise ValidationError("sigma2 must be p positive values")
    if spec.mean.kind == "constant":
        mu = np.zeros(p) if mu is None else np.asarray(mu, dtype=float)
        b = None
    else:
        if b is None:
            raise ValidationError("regression means need coefficients b")
        b = np.asarray(b, dtype=float)
        if b.shape != (spec.n_covariates, p):
            raise ValidationError(
                f"b must be ({spec.n_covariates}, {p}), got {b.shape}")
        mu = None
    if spec.kind == "dynamic":
        if a_mats is None:
            raise ValidationError("dynamic models need coefficient matrices")
        a_mats = [np.atleast_2d(np.asarray(a, dtype=float)) for a in a_mats]
        if len(a_mats) != spec.order or any(a.shape != (h, h) for a in a_mats):
            raise ValidationError(
                f"need {spec.order} unconstrained matrices shaped ({h}, {h})")
        var = pac_to_var(PACParams(a_mats))
        eta = simulate_var_path(var, n, rng)
    else:
        a_mats = None
        eta = rng.standard_normal((n, h))
    return ChainState(lam=lam, eta=eta, sigma2=sigma2, rho=np.ones(h),
                      mu=mu, b=b, kmat=kmat, a_mats=a_mats)


def simulate_dataset(spec: FactorModelSpec, n: int, rng, state=None,
                     w=None, x=None):
    """Draw one synthetic dataset; returns (data, ground-truth state).

    Without ``state`` all parameters come from the prior.  Covariate
    and metadata arrays are generated as standard normal when the mean
    model needs them and none are supplied.
    """
    rng = as_generator(rng)
    if n < 1:
        raise ValidationError("need at least one observation")
    if spec.mean.kind in ("regression", "hierarchical") and w is None:
        w = rng.standard_normal((n, spec.n_covariates))
    if spec.mean.kind == "hierarchical" and x is None:
        x = rng.standard_normal((spec.p, spec.n_meta))
    holder = ModelData(y=np.zeros((n, spec.p)), w=w, x=x)
    if state is None:
        state = init_state_from_prior(spec, holder, rng)
    y = simulate_data(spec, state, holder, rng)
    return ModelData(y=y, w=w, x=x), state
