"""Hour-resolution filtering and forecasting for daily-state models.

The dynamic model carries one latent state per day while observations
arrive component by component within the day.  The filter therefore
runs the autoregressive transition once per day, when the first
component arrives, and folds in later components through scalar
observation updates on the shared state.  Forecasts push one predictive
path per stored posterior draw through that filter-implied law.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError
from .sampler.ffbs import _chol_draw
from .sampler.store import DrawStore
from .stationary import (
    PACParams,
    VARParams,
    companion_initial_cov,
    companion_matrix,
    pac_to_var,
)


@dataclass
class HourlyFilter:
    """Filtered state moments after every observed hour.

    ``means[t][j]`` / ``covs[t][j]`` condition on all days before t and
    components 1..j+1 of day t.  ``pred_mean`` / ``pred_cov`` hold the
    state law before each day's first update (the stationary law on day
    one).
    """

    means: list
    covs: list
    pred_mean: np.ndarray
    pred_cov: np.ndarray

    @property
    def last_mean(self) -> np.ndarray:
        return self.means[-1][-1]

    @property
    def last_cov(self) -> np.ndarray:
        return self.covs[-1][-1]


@dataclass
class ForecastResult:
    """Predictive draws for the next ``horizon`` hours.

    One path per posterior draw; ``day`` counts boundary crossings
    since the last observed day (0 means the origin day itself, for
    mid-day origins) and ``hour`` gives the 1-based within-day
    component index.  Intervals are equal-tailed at 95%.
    """

    horizon: int
    draws: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    day: np.ndarray
    hour: np.ndarray


def forward_filter_substep(var: VARParams, lam: np.ndarray,
                           sigma2: np.ndarray, mean: np.ndarray,
                           y: np.ndarray,
                           final_hours: int | None = None) -> HourlyFilter:
    """Filter daily states against hour-by-hour observations.

    ``mean`` and ``y`` are day-by-component arrays; ``final_hours``
    limits how many components of the last day have been seen, so a
    forecast can start mid-day.  Scalar updates use the Joseph form and
    re-symmetrize, and a non-positive innovation variance raises rather
    than silently continuing.
    """
    lam = np.asarray(lam, dtype=float)
    y = np.asarray(y, dtype=float)
    mean = np.asarray(mean, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    n, p = y.shape
    if lam.shape[0] != p or lam.shape[1] != var.k:
        raise ValidationError(
            f"loadings shaped {lam.shape} do not match p={p}, k={var.k}")
    if mean.shape != y.shape:
        raise ValidationError("mean sequence must match the data shape")
    if np.any(sigma2 <= 0):
        raise ValidationError("idiosyncratic variances must be positive")
    if n < 1:
        raise ValidationError("need at least one day to filter")
    final_hours = p if final_hours is None else int(final_hours)
    if not 1 <= final_hours <= p:
        raise ValidationError(f"final_hours={final_hours} outside [1, {p}]")

    k, m = var.k, var.m
    d = k * m
    f_mat = companion_matrix(var.gammas)
    q_mat = np.zeros((d, d))
    q_mat[:k, :k] = var.pi
    eye = np.eye(d)

    x = np.zeros(d)
    cov = companion_initial_cov(var)
    means, covs = [], []
    pred_mean = np.zeros((n, d))
    pred_cov = np.zeros((n, d, d))
    for t in range(n):
        if t > 0:
            x = f_mat @ x
            cov = f_mat @ cov @ f_mat.T + q_mat
            cov = 0.5 * (cov + cov.T)
        pred_mean[t] = x
        pred_cov[t] = cov
        hours = final_hours if t == n - 1 else p
        day_means = np.zeros((hours, d))
        day_covs = np.zeros((hours, d, d))
        for j in range(hours):
            c = np.zeros(d)
            c[:k] = lam[j]
            s = float(c @ cov @ c) + sigma2[j]
            if not s > 0:
                raise NumericalError(
                    f"innovation variance {s} at day {t}, hour {j + 1} "
                    "is not positive")
            gain = cov @ c / s
            x = x + gain * (y[t, j] - mean[t, j] - c @ x)
            shrink = eye - np.outer(gain, c)
            cov = shrink @ cov @ shrink.T + sigma2[j] * np.outer(gain, gain)
            cov = 0.5 * (cov + cov.T)
            day_means[j] = x
            day_covs[j] = cov
        means.append(day_means)
        covs.append(day_covs)
    return HourlyFilter(means=means, covs=covs, pred_mean=pred_mean,
                        pred_cov=pred_cov)


def simulate_forward(var: VARParams, lam: np.ndarray, sigma2: np.ndarray,
                     mean_future: np.ndarray, x0: np.ndarray,
                     start_hour: int, h: int, rng) -> np.ndarray:
    """One sampled observation path for the next ``h`` hours.

    ``x0`` is a realized companion-state value at the forecast origin
    and ``start_hour`` the number of components of the current day
    already consumed; the state steps only when a path crosses into a
    new day.
    """
    p, k = lam.shape
    f_mat = companion_matrix(var.gammas)
    out = np.empty(h)
    x = np.asarray(x0, dtype=float).copy()
    hour = int(start_hour)
    for s in range(h):
        if hour % p == 0:
            x = f_mat @ x
            x[:k] += _chol_draw(np.zeros(k), var.pi, rng)
            hour = 0
        out[s] = mean_future[s] + lam[hour] @ x[:k] \
            + np.sqrt(sigma2[hour]) * rng.standard_normal()
        hour += 1
    return out


def _future_positions(p: int, start_hour: int, h: int):
    """Boundary-crossing counts (0 = the origin day) and 1-based hour
    indices for the next h hours."""
    days = np.empty(h, dtype=int)
    hours = np.empty(h, dtype=int)
    day, hour = 0, int(start_hour)
    for s in range(h):
        if hour % p == 0:
            day += 1
            hour = 0
        days[s] = day
        hours[s] = hour + 1
        hour += 1
    return days, hours


def _future_mean(store: DrawStore, i: int, days: np.ndarray,
                 hours: np.ndarray, data, w_future) -> np.ndarray:
    kind = store.manifest["mean_kind"]
    if kind == "constant":
        mu = store.array("mu")[i]
        return mu[hours - 1]
    # row 0 serves leftover hours of the origin day; row c the day
    # reached after c boundary crossings
    w_all = data.w[-1:]
    if w_future is not None:
        w_future = np.atleast_2d(np.asarray(w_future, dtype=float))
        w_all = np.vstack([w_all, w_future])
    if days.max() >= w_all.shape[0]:
        raise ValidationError(
            f"horizon enters {days.max()} future days but only "
            f"{w_all.shape[0] - 1} covariate rows were given")
    b = store.b_draw(i)
    fitted = w_all @ b
    return fitted[days, hours - 1]


def _observed_mean(store: DrawStore, i: int, data, n: int) -> np.ndarray:
    kind = store.manifest["mean_kind"]
    if kind == "constant":
        return np.tile(store.array("mu")[i], (n, 1))
    return data.w @ store.b_draw(i)


def forecast_h(store: DrawStore, data, h: int, rng,
               final_hours: int | None = None,
               w_future=None) -> ForecastResult:
    """Sample one h-hour-ahead path per stored posterior draw.

    Each draw's parameters drive the hourly filter over the observed
    data, a state value is drawn from the filtered law at the origin,
    and the path is simulated forward hour by hour.
    """
    if store.manifest["kind"] != "dynamic":
        raise ValidationError("hourly forecasting needs a dynamic model fit")
    if h < 1:
        raise ValidationError("forecast horizon must be at least one hour")
    if store.n_draws == 0:
        raise ValidationError("cannot forecast from an empty draw store")
    n, p = store.manifest["n"], store.manifest["p"]
    if data.y.shape != (n, p):
        raise ValidationError(
            f"data shaped {data.y.shape} does not match the fitted run "
            f"({n}, {p})")
    start = p if final_hours is None else int(final_hours)
    days, hours = _future_positions(p, start, h)
    draws = np.empty((store.n_draws, h))
    for i in range(store.n_draws):
        lam = store.loadings(i)
        sigma2 = store.array("sigma2")[i]
        var = pac_to_var(PACParams(store.a_draws(i)))
        mean_obs = _observed_mean(store, i, data, n)
        filt = forward_filter_substep(var, lam, sigma2, mean_obs, data.y,
                                      final_hours=final_hours)
        x0 = _chol_draw(filt.last_mean, filt.last_cov, rng)
        mean_future = _future_mean(store, i, days, hours, data, w_future)
        draws[i] = simulate_forward(var, lam, sigma2, mean_future, x0,
                                    start, h, rng)
    lower, upper = np.quantile(draws, [0.025, 0.975], axis=0)
    return ForecastResult(horizon=h, draws=draws, mean=draws.mean(axis=0),
                          lower=lower, upper=upper, day=days, hour=hours)
