"""Report figures written next to the delimited outputs.

Rendering is forced onto the Agg backend and PNG metadata is pinned so
the same inputs always produce the same bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": "structfact"}
_DPI = 120


def _save(fig, path):
    fig.savefig(path, metadata=_META, dpi=_DPI)
    plt.close(fig)


def save_k_histogram(counts: dict, path) -> None:
    """Bar chart of the posterior over the effective factor count."""
    ks = sorted(counts)
    total = sum(counts.values())
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(ks, [counts[k] / total for k in ks], color="#34668c", width=0.8)
    ax.set_xlabel("effective factor count")
    ax.set_ylabel("posterior share")
    ax.set_xticks(ks)
    fig.tight_layout()
    _save(fig, path)


def save_loading_heatmap(lam_mean: np.ndarray, path) -> None:
    fig, ax = plt.subplots(figsize=(4.2, 4.8))
    scale = np.abs(lam_mean).max() or 1.0
    im = ax.imshow(lam_mean, cmap="RdBu_r", vmin=-scale, vmax=scale,
                   aspect="auto")
    ax.set_xlabel("factor")
    ax.set_ylabel("variable")
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    _save(fig, path)


def save_forecast_fan(result, path) -> None:
    """Predictive mean with the 95% band over the forecast horizon."""
    steps = np.arange(1, result.horizon + 1)
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.fill_between(steps, result.lower, result.upper, color="#b8cbe0",
                    label="95% interval")
    ax.plot(steps, result.mean, color="#20415e", label="mean")
    for s, hour in zip(steps, result.hour):
        if hour == 1:
            ax.axvline(s - 0.5, color="#999999", lw=0.6, ls=":")
    ax.set_xlabel("hours ahead")
    ax.set_ylabel("predicted value")
    ax.legend(loc="upper right", frameon=False)
    fig.tight_layout()
    _save(fig, path)


def save_score_bars(scores: dict, path) -> None:
    """Horizontal bars for the finite scalar scores in a report."""
    items = [(k, v) for k, v in scores.items()
             if isinstance(v, float) and np.isfinite(v)]
    fig, ax = plt.subplots(figsize=(5, 0.8 + 0.5 * max(len(items), 1)))
    if items:
        names, vals = zip(*items)
        ax.barh(names, vals, color="#34668c")
    ax.axvline(0.0, color="#333333", lw=0.8)
    ax.set_xlabel("score (0 is perfect)")
    fig.tight_layout()
    _save(fig, path)
