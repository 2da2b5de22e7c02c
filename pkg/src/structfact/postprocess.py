"""Rotation of posterior draws to an identified parameterization.

The sampler explores loadings only up to right-multiplication by an
orthogonal matrix.  For diagnostics and reporting, each draw is rotated
so the loadings become lower-trapezoidal with a positive leading
diagonal, which pins the gauge; factors and dynamics matrices are
carried along by the same rotation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr

from .errors import ValidationError
from .sampler.adapt import effective_k
from .sampler.store import DrawStore
from .stationary import PACParams, pac_to_var, rotate_expansion

RANK_TOL = 1e-12


@dataclass
class IdentifiedDraw:
    """One posterior draw after gauge fixing.

    ``lam`` is lower-trapezoidal in its first k rows with positive
    diagonal; ``q`` is the orthogonal matrix with ``lam @ q`` equal to
    the input.  ``rank_deficient`` marks draws whose trapezoidal
    diagonal fell below tolerance, where the sign convention (and hence
    the rotation) is not well defined.
    """

    lam: np.ndarray
    q: np.ndarray
    eta: np.ndarray | None = None
    gammas: list | None = None
    pi: np.ndarray | None = None
    rank_deficient: bool = False


def identify_draw(lam: np.ndarray, eta=None, gammas=None,
                  pi=None) -> IdentifiedDraw:
    """Rotate one draw into the positive-diagonal trapezoidal gauge.

    Any of the optional pieces (factor rows, autoregressive coefficient
    matrices, innovation variance) are transported by the same
    orthogonal matrix, so every returned quantity is invariant to the
    gauge the sampler happened to visit.
    """
    lam = np.asarray(lam, dtype=float)
    p, k = lam.shape
    if p < k:
        raise ValidationError(
            f"found {k} columns for {p} variables; identification needs "
            "at least as many variables as factors")
    qf, r = qr(lam.T, mode="economic")
    ell = r.T
    rot = qf.T
    flip = np.sign(np.diag(ell)[:k])
    flip[flip == 0.0] = 1.0
    ell = ell * flip[None, :]
    rot = rot * flip[:, None]
    deficient = bool(np.any(np.abs(np.diag(ell)[:k])
                            <= RANK_TOL * max(np.linalg.norm(lam), 1e-300)))
    moved = rotate_expansion(rot.T, eta=eta, gammas=gammas, pi=pi)
    return IdentifiedDraw(lam=ell, q=rot, eta=moved.get("eta"),
                          gammas=moved.get("gammas"), pi=moved.get("pi"),
                          rank_deficient=deficient)


def identify_store(store: DrawStore) -> dict:
    """Gauge-fix every stored draw.

    Returns padded arrays mirroring the store layout (``lam``, and for
    dynamic runs ``gamma``/``pi`` derived from the stored dynamics)
    plus the list of rank-deficient draw indices, which are written out
    zeroed and excluded from any downstream diagnostics.
    """
    n, p, hm = store.n_draws, store.manifest["p"], store.h_max
    order = store.manifest["order"]
    has_eta = "eta" in store.arrays
    rows_eta = store.manifest["n"] + order if has_eta else 0
    out = {
        "lam": np.zeros((n, p * hm)),
        "eta": np.zeros((n, rows_eta * hm)) if has_eta else None,
        "gamma": np.zeros((n, order * hm * hm)) if order else None,
        "pi": np.zeros((n, hm * hm)) if order else None,
    }
    flagged = []
    for i in range(n):
        h = store.h_at(i)
        kwargs = {}
        if has_eta:
            kwargs["eta"] = store.eta_draw(i)
        if order:
            var = pac_to_var(PACParams(store.a_draws(i)))
            kwargs["gammas"] = var.gammas
            kwargs["pi"] = var.pi
        ident = identify_draw(store.loadings(i), **kwargs)
        if ident.rank_deficient:
            flagged.append(i)
            continue
        out["lam"][i].reshape(p, hm)[:, :h] = ident.lam
        if has_eta:
            out["eta"][i].reshape(rows_eta, hm)[:, :h] = ident.eta
        if order:
            g = out["gamma"][i].reshape(order, hm, hm)
            for j, mat in enumerate(ident.gammas):
                g[j, :h, :h] = mat
            out["pi"][i].reshape(hm, hm)[:h, :h] = ident.pi
    arrays = {name: arr for name, arr in out.items() if arr is not None}
    return {"arrays": arrays, "rank_deficient": flagged}


def k_posterior_summary(store: DrawStore, criterion: str = "proportion",
                        epsilon: float = 1e-4,
                        trace_target: float = 0.999) -> dict:
    """Posterior of the effective factor count over stored draws.

    The per-draw count applies the same activity criterion the
    truncation adaptation uses, so the summary reads as the posterior
    of the number of columns doing real work.  Interval endpoints are
    order statistics of the empirical distribution.
    """
    if store.n_draws == 0:
        raise ValidationError("cannot summarize an empty draw store")
    ks = np.array([
        effective_k(store.loadings(i), store.array("sigma2")[i], criterion,
                    epsilon, trace_target)
        for i in range(store.n_draws)
    ])
    values, counts = np.unique(ks, return_counts=True)
    lo, hi = np.quantile(ks, [0.025, 0.975], method="inverted_cdf")
    return {
        "mode": int(values[np.argmax(counts)]),
        "median": float(np.median(ks)),
        "interval": (int(lo), int(hi)),
        "counts": {int(v): int(c) for v, c in zip(values, counts)},
        "draws": ks,
    }
