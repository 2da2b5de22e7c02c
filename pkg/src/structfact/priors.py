"""Parametric families for the among-row scale matrix, generalized
distances, and the multiplicative-gamma increasing shrinkage prior on
the column scales.

A family either parameterizes the scale matrix ``phi`` directly or its
inverse ``xi``; correlation-form families keep a unit diagonal so that
``trace(phi) = p`` fixes the overall scale.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import SpdError, ValidationError
from .util import as_generator, spd_inv, validate_spd

__all__ = [
    "DistanceSpec",
    "PhiModel",
    "MgpState",
    "build_phi",
    "build_xi",
    "projection_distance",
    "combined_distance",
    "distance_matrix",
    "mgp_psi",
    "mgp_sample_prior",
]

FAMILIES = (
    "identity",
    "exchangeable",
    "block_exchangeable",
    "ar_precision",
    "circular_ar_precision",
    "distance_exponential",
)

# Families whose natural parameterization is the inverse scale.
INVERSE_SIDE = ("ar_precision", "circular_ar_precision")

CIRCULAR_THETA_MAX = 1.0 - 1e-6


@dataclass
class DistanceSpec:
    """Inputs for the distance-based correlation family.

    ``coords`` holds one row of feature coordinates per variable; the
    projection distance uses one positive length-scale per feature.  An
    optional precomputed metric matrix (already validated) enters the
    combined distance divided by its own length-scale.
    """

    coords: Optional[np.ndarray] = None
    metric: Optional[np.ndarray] = None
    labels: Optional[list] = None
    # Scale factors applied at ingestion, recorded for the run manifest.
    applied_scales: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.coords is None and self.metric is None:
            raise ValidationError(
                "distance family needs coordinates, a metric matrix, or both")
        if self.coords is not None:
            self.coords = np.atleast_2d(np.asarray(self.coords, dtype=float))
        if self.metric is not None:
            self.metric = np.asarray(self.metric, dtype=float)
            validate_metric(self.metric, labels=self.labels)
        if (self.coords is not None and self.metric is not None
                and self.coords.shape[0] != self.metric.shape[0]):
            raise ValidationError(
                f"coordinate rows ({self.coords.shape[0]}) and metric size "
                f"({self.metric.shape[0]}) disagree")

    @property
    def p(self) -> int:
        return (self.coords.shape[0] if self.coords is not None
                else self.metric.shape[0])

    @property
    def n_feature_scales(self) -> int:
        return 0 if self.coords is None else self.coords.shape[1]

    @property
    def n_scales(self) -> int:
        return self.n_feature_scales + (0 if self.metric is None else 1)


def validate_metric(d: np.ndarray, labels=None, rng=None, triples=200):
    """Check that ``d`` is a plausible metric matrix.

    Symmetry, zero diagonal, non-negativity everywhere, and the triangle
    inequality on a sample of index triples.  Errors cite row/column
    labels when provided.
    """
    d = np.asarray(d, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValidationError(f"distance matrix must be square, got {d.shape}")
    p = d.shape[0]

    def _lab(i):
        return labels[i] if labels is not None else str(i)

    bad = np.argwhere(np.abs(d - d.T) > 1e-9 * max(1.0, np.abs(d).max()))
    if bad.size:
        i, j = bad[0]
        raise ValidationError(
            f"distance matrix not symmetric at rows/columns "
            f"({_lab(i)}, {_lab(j)}): {d[i, j]!r} vs {d[j, i]!r}")
    nz = np.argwhere(np.abs(np.diag(d)) > 1e-12)
    if nz.size:
        i = int(nz[0][0])
        raise ValidationError(
            f"distance matrix has non-zero diagonal at {_lab(i)}: {d[i, i]!r}")
    neg = np.argwhere(d < 0)
    if neg.size:
        i, j = neg[0]
        raise ValidationError(
            f"negative distance at ({_lab(i)}, {_lab(j)}): {d[i, j]!r}")
    if p >= 3:
        rng = as_generator(0 if rng is None else rng)
        idx = rng.integers(0, p, size=(triples, 3))
        for i, j, k in idx:
            if d[i, k] > d[i, j] + d[j, k] + 1e-9 * max(1.0, d.max()):
                raise ValidationError(
                    f"triangle inequality fails for rows "
                    f"({_lab(i)}, {_lab(j)}, {_lab(k)})")
    return d


def projection_distance(xi, xj, theta_mat) -> float:
    """sqrt((xi - xj)' Theta (xi - xj)) for diagonal or full SPD Theta."""
    xi = np.asarray(xi, dtype=float).ravel()
    xj = np.asarray(xj, dtype=float).ravel()
    if xi.shape != xj.shape:
        raise ValidationError(
            f"coordinate vectors differ in length: {xi.shape} vs {xj.shape}")
    diff = xi - xj
    theta_mat = np.asarray(theta_mat, dtype=float)
    if theta_mat.ndim == 1:
        if np.any(theta_mat <= 0):
            raise ValidationError("projection weights must be positive")
        quad = np.sum(diff * diff * theta_mat)
    else:
        validate_spd(theta_mat, "projection weight matrix")
        quad = diff @ theta_mat @ diff
    return float(np.sqrt(quad))


def _split_scales(spec: DistanceSpec, scales):
    scales = np.asarray(scales, dtype=float).ravel()
    if scales.size != spec.n_scales:
        raise ValidationError(
            f"expected {spec.n_scales} length-scales, got {scales.size}")
    if np.any(scales <= 0):
        raise ValidationError("length-scales must be positive")
    c = spec.n_feature_scales
    return scales[:c], (scales[c] if spec.metric is not None else None)


def combined_distance(spec: DistanceSpec, scales, i: int, j: int) -> float:
    """Covariate projection distance plus length-scaled precomputed metric."""
    feat, metric_scale = _split_scales(spec, scales)
    p = spec.p
    if not (0 <= i < p and 0 <= j < p):
        raise ValidationError(f"indices ({i}, {j}) out of range for p={p}")
    total = 0.0
    if spec.coords is not None:
        total += projection_distance(spec.coords[i], spec.coords[j],
                                     1.0 / feat ** 2)
    if spec.metric is not None:
        total += spec.metric[i, j] / metric_scale
    return total


def distance_matrix(spec: DistanceSpec, scales) -> np.ndarray:
    """Full combined-distance matrix (vectorized form of combined_distance)."""
    feat, metric_scale = _split_scales(spec, scales)
    p = spec.p
    d = np.zeros((p, p))
    if spec.coords is not None:
        scaled = spec.coords / feat
        sq = np.sum(scaled ** 2, axis=1)
        g = sq[:, None] + sq[None, :] - 2.0 * scaled @ scaled.T
        np.fill_diagonal(g, 0.0)
        d += np.sqrt(np.maximum(g, 0.0))
    if spec.metric is not None:
        d = d + spec.metric / metric_scale
    return d


@dataclass
class PhiModel:
    """A parametric among-row scale family with hyperparameters ``theta``."""

    family: str
    p: int
    theta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    blocks: Optional[list] = None
    distance: Optional[DistanceSpec] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(
                f"unknown scale family {self.family!r}; choose from {FAMILIES}")
        if self.p < 1:
            raise ValidationError(f"dimension must be >= 1, got {self.p}")
        self.theta = np.asarray(self.theta, dtype=float).ravel()
        if self.family == "block_exchangeable":
            if not self.blocks:
                raise ValidationError("block family needs block sizes")
            self.blocks = [int(b) for b in self.blocks]
            if any(b < 2 for b in self.blocks):
                raise ValidationError("block sizes must be >= 2")
            if sum(self.blocks) != self.p:
                raise ValidationError(
                    f"block sizes sum to {sum(self.blocks)}, expected {self.p}")
        if self.family == "distance_exponential":
            if self.distance is None:
                raise ValidationError("distance family needs a DistanceSpec")
            if self.distance.p != self.p:
                raise ValidationError(
                    f"distance inputs are for {self.distance.p} variables, "
                    f"model has {self.p}")
        if self.family == "circular_ar_precision" and self.p < 3:
            raise ValidationError("circular family needs p >= 3")
        if self.family == "ar_precision" and self.p < 2:
            raise ValidationError("AR precision family needs p >= 2")
        bounds = self.theta_bounds()
        if len(self.theta) != len(bounds):
            raise ValidationError(
                f"family {self.family!r} at p={self.p} expects "
                f"{len(bounds)} hyperparameters, got {len(self.theta)}")
        self._check_bounds(bounds)

    def _check_bounds(self, bounds):
        for t, b in zip(self.theta, bounds):
            if b[0] == "log":
                if not t > 0:
                    raise ValidationError(
                        f"hyperparameter {t!r} must be positive")
            else:
                _, lo, hi = b
                if not (lo < t <= hi if self.family == "circular_ar_precision"
                        else lo < t < hi):
                    raise ValidationError(
                        f"hyperparameter {t!r} outside ({lo}, {hi})")

    def theta_bounds(self):
        """Per-component transform descriptors: ("log",) for positive
        parameters, ("interval", lo, hi) for bounded ones."""
        fam = self.family
        if fam == "identity":
            return []
        if fam == "exchangeable":
            return [("interval", -1.0 / (self.p - 1), 1.0)]
        if fam == "block_exchangeable":
            return [("interval", -1.0 / (b - 1), 1.0) for b in self.blocks]
        if fam == "ar_precision":
            return [("interval", -1.0, 1.0)]
        if fam == "circular_ar_precision":
            # Lower edge open on the unconstrained scale; upper capped to
            # keep the smallest circulant eigenvalue away from zero.
            return [("interval", 0.0, CIRCULAR_THETA_MAX)]
        return [("log",)] * self.distance.n_scales

    @property
    def side(self) -> str:
        return "inverse" if self.family in INVERSE_SIDE else "phi"

    @property
    def n_params(self) -> int:
        return len(self.theta_bounds())

    def with_theta(self, theta) -> "PhiModel":
        return replace(self, theta=np.asarray(theta, dtype=float).ravel())

    def log_prior(self, theta=None, log_scale_sd2: float = 10.0) -> float:
        """Default hyperparameter log prior (up to a constant).

        Positive length-scales get log theta ~ N(0, log_scale_sd2);
        interval-bounded parameters get a flat prior on their interval.
        """
        theta = self.theta if theta is None else np.asarray(theta, float)
        val = 0.0
        for t, b in zip(theta, self.theta_bounds()):
            if b[0] == "log":
                val += -0.5 * np.log(t) ** 2 / log_scale_sd2
        return float(val)


def _exchangeable(p: int, theta: float) -> np.ndarray:
    return (1.0 - theta) * np.eye(p) + theta * np.ones((p, p))


def build_xi(model: PhiModel) -> np.ndarray:
    """Inverse scale matrix for inverse-side families."""
    if model.side != "inverse":
        raise ValidationError(
            f"family {model.family!r} parameterizes the scale directly; "
            "invert build_phi output instead")
    p = model.p
    if model.family == "ar_precision":
        th = float(model.theta[0])
        xi = np.eye(p) * (1.0 + th * th)
        xi[0, 0] = xi[p - 1, p - 1] = 1.0
        off = np.arange(p - 1)
        xi[off, off + 1] = -th
        xi[off + 1, off] = -th
    else:  # circular_ar_precision
        th = float(model.theta[0])
        xi = np.eye(p)
        off = np.arange(p - 1)
        xi[off, off + 1] = -th / 2.0
        xi[off + 1, off] = -th / 2.0
        xi[0, p - 1] = xi[p - 1, 0] = -th / 2.0
    return validate_spd(xi, f"{model.family} inverse scale")


def build_phi(model: PhiModel) -> np.ndarray:
    """Scale matrix for the family at its current hyperparameters."""
    p = model.p
    fam = model.family
    if fam == "identity":
        return np.eye(p)
    if fam == "exchangeable":
        phi = _exchangeable(p, float(model.theta[0]))
    elif fam == "block_exchangeable":
        phi = np.zeros((p, p))
        at = 0
        for b, th in zip(model.blocks, model.theta):
            phi[at:at + b, at:at + b] = _exchangeable(b, float(th))
            at += b
    elif fam in INVERSE_SIDE:
        phi = spd_inv(build_xi(model))
    else:  # distance_exponential
        d = distance_matrix(model.distance, model.theta)
        phi = np.exp(-d)
    return validate_spd(phi, f"{fam} scale matrix")


@dataclass
class MgpState:
    """Multiplicative-gamma shrinkage state over the column scales.

    ``rho`` holds the H positive multipliers; the h-th column scale is
    the reciprocal of the product of the first h of them, so columns are
    increasingly shrunk a priori when a2 > 1.
    """

    a1: float
    a2: float
    rho: np.ndarray

    def __post_init__(self):
        if not (self.a1 > 0 and self.a2 > 0):
            raise ValidationError("gamma shape hyperparameters must be > 0")
        self.rho = np.asarray(self.rho, dtype=float).ravel()
        if self.rho.size < 1:
            raise ValidationError("need at least one shrinkage multiplier")
        if np.any(self.rho <= 0):
            raise ValidationError(
                f"non-positive shrinkage multiplier in {self.rho!r}")

    @property
    def h(self) -> int:
        return self.rho.size


def mgp_psi(state: MgpState) -> np.ndarray:
    """Column scales psi_h = 1 / prod_{l <= h} rho_l."""
    if np.any(state.rho <= 0):
        raise ValidationError("corrupt shrinkage state: rho must be positive")
    return 1.0 / np.cumprod(state.rho)


def mgp_sample_prior(a1: float, a2: float, h: int, rng) -> MgpState:
    """Independent gamma draws: first multiplier Gam(a1, 1), rest Gam(a2, 1)."""
    if h < 1:
        raise ValidationError(f"truncation level must be >= 1, got {h}")
    rng = as_generator(rng)
    shapes = np.full(h, float(a2))
    shapes[0] = float(a1)
    return MgpState(a1=a1, a2=a2, rho=rng.gamma(shapes, 1.0))
