"""Model and sampler configuration containers.

A ``FactorModelSpec`` pins down everything about the generative model:
observation kind, loading prior, row-covariance family, shrinkage
weights, mean structure, and the truncation budget.  ``SamplerConfig``
holds run-length, adaptation, and proposal-tuning switches.  Both are
plain dataclasses so they can be serialized to JSON for the run
manifest.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from ..matrixvariate import max_truncation
from ..priors import PhiModel

KINDS = ("static", "dynamic", "probit")
PRIORS = ("matrix-normal", "matrix-t")
MEAN_KINDS = ("constant", "regression", "hierarchical")


@dataclass
class MeanModel:
    """Mean structure for the observation equation.

    ``constant`` gives every variable its own intercept, ``regression``
    regresses on per-observation covariates, and ``hierarchical`` adds a
    second stage that shrinks regression coefficients toward a linear
    function of per-variable metadata.
    """

    kind: str = "constant"
    s_mu2: float = 10.0
    s_beta2: float = 1.0
    s_kappa2: float = 1.0

    def __post_init__(self):
        if self.kind not in MEAN_KINDS:
            raise ValidationError(f"unknown mean kind {self.kind!r}")
        for name in ("s_mu2", "s_beta2", "s_kappa2"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")


@dataclass
class ModelData:
    """Observed arrays handed to the sampler.

    ``y`` is n-by-p (binary for probit models).  ``w`` holds
    per-observation covariates for regression means, ``x`` per-variable
    metadata for the hierarchical stage.
    """

    y: np.ndarray
    w: np.ndarray | None = None
    x: np.ndarray | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        if self.y.ndim != 2:
            raise ValidationError("y must be a 2-d array")
        if self.w is not None:
            self.w = np.asarray(self.w, dtype=float)
            if self.w.shape[0] != self.y.shape[0]:
                raise ValidationError(
                    f"w has {self.w.shape[0]} rows but y has {self.y.shape[0]}"
                )
        if self.x is not None:
            self.x = np.asarray(self.x, dtype=float)
            if self.x.shape[0] != self.y.shape[1]:
                raise ValidationError(
                    f"x has {self.x.shape[0]} rows but y has {self.y.shape[1]} columns"
                )

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.y.shape[1]


@dataclass
class FactorModelSpec:
    """Complete model description.

    ``kind`` selects the observation model: ``static`` for exchangeable
    rows, ``dynamic`` for factors following a stationary VAR of order
    ``order``, ``probit`` for binary data through a latent Gaussian
    threshold (static factors, unit idiosyncratic variances).

    ``h_init`` is the starting number of factor columns; the sampler may
    move it anywhere in [1, h_max] where h_max defaults to the largest
    truncation consistent with the variable count.
    """

    p: int
    kind: str = "static"
    order: int = 0
    prior: str = "matrix-normal"
    phi: PhiModel | None = None
    mgp_a1: float = 2.0
    mgp_a2: float = 6.0
    sigma_shape: float = 3.1
    sigma_rate: float = 2.1
    mean: MeanModel = field(default_factory=MeanModel)
    n_covariates: int = 0
    n_meta: int = 0
    varsigma_rate: float = 1.0
    h_init: int = 0
    h_max: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown model kind {self.kind!r}")
        if self.prior not in PRIORS:
            raise ValidationError(f"unknown loading prior {self.prior!r}")
        if self.p < 1:
            raise ValidationError("p must be positive")
        if self.kind == "dynamic":
            if self.order < 1:
                raise ValidationError("dynamic models need order >= 1")
        elif self.order != 0:
            raise ValidationError(f"{self.kind} models must have order 0")
        if self.phi is None:
            self.phi = PhiModel("identity", self.p)
        if self.phi.p != self.p:
            raise ValidationError(
                f"phi model is for p={self.phi.p} but spec has p={self.p}"
            )
        cap = max(1, max_truncation(self.p))
        if self.h_max == 0:
            self.h_max = cap
        elif not 1 <= self.h_max <= cap:
            raise ValidationError(
                f"h_max={self.h_max} outside [1, {cap}] for p={self.p}"
            )
        if self.h_init == 0:
            self.h_init = self.h_max
        if not 1 <= self.h_init <= self.h_max:
            raise ValidationError(
                f"h_init={self.h_init} outside [1, {self.h_max}]"
            )
        if self.mgp_a1 <= 0 or self.mgp_a2 <= 0:
            raise ValidationError("shrinkage shape parameters must be positive")
        if self.sigma_shape <= 0 or self.sigma_rate <= 0:
            raise ValidationError("idiosyncratic variance prior must be positive")
        if self.varsigma_rate <= 0:
            raise ValidationError("varsigma_rate must be positive")
        if self.mean.kind in ("regression", "hierarchical") and self.n_covariates < 1:
            raise ValidationError("regression mean needs n_covariates >= 1")
        if self.mean.kind == "hierarchical" and self.n_meta < 1:
            raise ValidationError("hierarchical mean needs n_meta >= 1")
        if self.kind == "probit" and self.mean.kind == "constant":
            # a free intercept per variable is redundant with the latent scale;
            # probit runs use regression means (possibly a single constant column)
            raise ValidationError("probit models need a regression mean")

    def check_data(self, data: ModelData):
        if data.p != self.p:
            raise ValidationError(f"data has p={data.p} but spec has p={self.p}")
        if self.mean.kind in ("regression", "hierarchical"):
            if data.w is None:
                raise ValidationError("regression mean needs covariates w")
            if data.w.shape[1] != self.n_covariates:
                raise ValidationError(
                    f"w has {data.w.shape[1]} columns, expected {self.n_covariates}"
                )
        if self.mean.kind == "hierarchical":
            if data.x is None:
                raise ValidationError("hierarchical mean needs metadata x")
            if data.x.shape[1] != self.n_meta:
                raise ValidationError(
                    f"x has {data.x.shape[1]} columns, expected {self.n_meta}"
                )
        if self.kind == "probit":
            vals = np.unique(data.y[np.isfinite(data.y)])
            if not np.all(np.isin(vals, (0.0, 1.0))):
                raise ValidationError("probit data must be 0/1")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        phi = out["phi"]
        if phi is not None and phi.get("distance") is not None:
            dist = phi["distance"]
            dist["coords"] = np.asarray(dist["coords"]).tolist()
            dist["metric"] = np.asarray(dist["metric"]).tolist()
        if phi is not None:
            theta = phi.get("theta")
            if theta is not None:
                phi["theta"] = np.asarray(theta, dtype=float).tolist()
        return out


@dataclass
class SamplerConfig:
    """Run-length and proposal controls for one chain.

    ``iterations`` counts post-burn-in sweeps; every ``thin``-th one is
    stored.  Truncation adaptation triggers at sweep i with probability
    exp(adapt_alpha0 + adapt_alpha1 * i) once i >= adapt_start.
    Proposal scales are tuned by Robbins-Monro during the first
    ``tune_frac`` of burn-in and frozen afterwards.
    """

    iterations: int = 1000
    burn_in: int = 500
    thin: int = 1
    seed: int = 0
    chain_id: int = 0
    adapt_enabled: bool = True
    adapt_alpha0: float = -1.0
    adapt_alpha1: float = -5e-4
    adapt_start: int = 100
    criterion: str = "proportion"
    epsilon: float = 1e-4
    trace_target: float = 0.999
    theta_step: float = 0.3
    varsigma_step: float = 0.5
    mala_step: float = 0.05
    mala_block: int = 4
    tune: bool = True
    tune_frac: float = 0.3
    store_eta: bool = True
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.iterations < 0 or self.burn_in < 0:
            raise ValidationError("iteration counts cannot be negative")
        if self.thin < 1:
            raise ValidationError("thin must be >= 1")
        if self.criterion not in ("epsilon", "proportion"):
            raise ValidationError(f"unknown truncation criterion {self.criterion!r}")
        if not 0 < self.epsilon:
            raise ValidationError("epsilon must be positive")
        if not 0 < self.trace_target <= 1:
            raise ValidationError("trace_target must lie in (0, 1]")
        if self.mala_block < 1:
            raise ValidationError("mala_block must be >= 1")
        for name in ("theta_step", "varsigma_step", "mala_step"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def run_digest(spec: FactorModelSpec, config: SamplerConfig) -> str:
    """Hex digest of the canonical JSON form of (spec, config).

    Stored in the draw-store manifest so downstream tools can refuse to
    mix draws produced under different configurations.  The chain id is
    excluded: chains of one run share a digest.
    """
    cfg = config.to_dict()
    cfg.pop("chain_id")
    payload = {"spec": spec.to_dict(), "config": cfg}
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
