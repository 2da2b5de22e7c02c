"""On-disk and in-memory container for posterior draws.

Each parameter series is a two-dimensional float64 array with one row
per stored draw, padded on the right to the maximum truncation level so
the files are rectangular; the per-draw column count travels in the
``h`` series.  Files are raw little-endian float64 next to a JSON
manifest, so a round trip is byte-stable.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ValidationError

MANIFEST_NAME = "manifest.json"
FORMAT_TAG = "structfact-draws-1"


def param_widths(p: int, n_rows_eta: int, order: int, h_max: int,
                 n_theta: int, mean_kind: str, n_covariates: int,
                 n_meta: int, prior: str, store_eta: bool) -> dict:
    widths = {"h": 1, "lam": p * h_max, "sigma2": p, "rho": h_max}
    if n_theta:
        widths["theta"] = n_theta
    if mean_kind == "constant":
        widths["mu"] = p
    else:
        widths["b"] = n_covariates * p
        if mean_kind == "hierarchical":
            widths["kmat"] = n_meta * n_covariates
    if prior == "matrix-t":
        widths["varsigma_check"] = 1
    if order:
        widths["a"] = order * h_max * h_max
    if store_eta:
        widths["eta"] = n_rows_eta * h_max
    return widths


class DrawStore:
    """Posterior draws plus the manifest describing how they were made."""

    def __init__(self, manifest: dict, arrays: dict):
        self.manifest = manifest
        self.arrays = arrays
        widths = manifest["params"]
        for name, arr in arrays.items():
            if name not in widths:
                raise ValidationError(f"array {name!r} missing from manifest")
            if arr.ndim != 2 or arr.shape[1] != widths[name]:
                raise ValidationError(
                    f"array {name!r} has shape {arr.shape}, manifest says "
                    f"width {widths[name]}")

    @property
    def n_draws(self) -> int:
        return self.manifest["n_draws"]

    @property
    def h_max(self) -> int:
        return self.manifest["h_max"]

    def names(self):
        return sorted(self.arrays)

    def array(self, name: str) -> np.ndarray:
        if name not in self.arrays:
            raise ValidationError(
                f"no stored series {name!r}; have {self.names()}")
        return self.arrays[name]

    def h_at(self, i: int) -> int:
        return int(self.arrays["h"][i, 0])

    def loadings(self, i: int) -> np.ndarray:
        p = self.manifest["p"]
        full = self.arrays["lam"][i].reshape(p, self.h_max)
        return full[:, :self.h_at(i)]

    def eta_draw(self, i: int) -> np.ndarray:
        rows = self.manifest["n"] + self.manifest["order"]
        full = self.array("eta")[i].reshape(rows, self.h_max)
        return full[:, :self.h_at(i)]

    def rho_draw(self, i: int) -> np.ndarray:
        return self.arrays["rho"][i, :self.h_at(i)]

    def a_draws(self, i: int):
        order = self.manifest["order"]
        h = self.h_at(i)
        full = self.array("a")[i].reshape(order, self.h_max, self.h_max)
        return [full[j, :h, :h] for j in range(order)]

    def b_draw(self, i: int) -> np.ndarray:
        c = self.manifest["n_covariates"]
        return self.array("b")[i].reshape(c, self.manifest["p"])

    def save(self, path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        for name, arr in self.arrays.items():
            with open(path / f"{name}.f64", "wb") as fh:
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        with open(path / MANIFEST_NAME, "w", encoding="utf-8") as fh:
            json.dump(self.manifest, fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "DrawStore":
        path = Path(path)
        mpath = path / MANIFEST_NAME
        if not mpath.exists():
            raise ValidationError(f"no draw-store manifest at {mpath}")
        with open(mpath, encoding="utf-8") as fh:
            manifest = json.load(fh)
        if manifest.get("format") != FORMAT_TAG:
            raise ValidationError(
                f"unrecognized draw-store format {manifest.get('format')!r}")
        arrays = {}
        for name, width in manifest["params"].items():
            raw = np.fromfile(path / f"{name}.f64", dtype="<f8")
            if width and raw.size % width:
                raise ValidationError(
                    f"file {name}.f64 has {raw.size} values, not a multiple "
                    f"of width {width}")
            rows = raw.size // width if width else 0
            arrays[name] = raw.reshape(rows, width)
        n_draws = manifest["n_draws"]
        for name, arr in arrays.items():
            if arr.shape[0] != n_draws:
                raise ValidationError(
                    f"series {name!r} holds {arr.shape[0]} draws, manifest "
                    f"says {n_draws}")
        return cls(manifest, arrays)

    @classmethod
    def assemble(cls, manifest: dict, rows: list) -> "DrawStore":
        widths = manifest["params"]
        arrays = {
            name: (np.stack([r[name] for r in rows])
                   if rows else np.zeros((0, width)))
            for name, width in widths.items()
        }
        manifest = dict(manifest, n_draws=len(rows))
        return cls(manifest, arrays)

    @classmethod
    def concat(cls, stores: list) -> "DrawStore":
        """Stack several chains' draws into one store.

        All inputs must come from the same model and run configuration
        (equal digests); the merged manifest lists the source chain ids
        and drops per-chain adaptation history.
        """
        if not stores:
            raise ValidationError("no stores to combine")
        digests = {s.manifest.get("digest") for s in stores}
        if len(digests) > 1:
            raise ValidationError(
                "refusing to combine stores with different run digests: "
                + ", ".join(sorted(str(d) for d in digests)))
        names = stores[0].names()
        for s in stores[1:]:
            if s.names() != names:
                raise ValidationError(
                    "stores hold different parameter series")
        arrays = {name: np.concatenate([s.arrays[name] for s in stores])
                  for name in names}
        manifest = dict(stores[0].manifest)
        manifest["n_draws"] = int(sum(s.n_draws for s in stores))
        manifest["combined_from"] = [s.manifest.get("chain_id")
                                     for s in stores]
        manifest["truncation_events"] = []
        return cls(manifest, arrays)
