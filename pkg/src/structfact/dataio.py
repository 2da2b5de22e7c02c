"""File ingestion and configuration plumbing for the batch commands.

All tabular files are headered CSV parsed at full double precision.
Errors name the offending file (and, for dimension clashes, both
files), because batch runs surface nothing else to debug from.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .priors import DistanceSpec, PhiModel
from .sampler.modelspec import (
    FactorModelSpec,
    MeanModel,
    ModelData,
    SamplerConfig,
)


def read_matrix_csv(path) -> tuple[list, np.ndarray]:
    """Read a headered numeric CSV into (column labels, float array)."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"input file {path} does not exist")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            labels = next(reader)
        except StopIteration:
            raise ValidationError(f"{path} is empty") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(labels):
                raise ValidationError(
                    f"{path}:{lineno} has {len(row)} fields, header has "
                    f"{len(labels)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ValidationError(
                    f"{path}:{lineno} contains a non-numeric field") from None
    if not rows:
        raise ValidationError(f"{path} has a header but no data rows")
    arr = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(
            f"{path} contains non-finite values; missing data is not "
            "supported")
    return labels, arr


def write_matrix_csv(path, arr: np.ndarray, labels=None) -> None:
    """Write a float matrix as headered CSV with round-trippable reprs."""
    arr = np.atleast_2d(np.asarray(arr, dtype=float))
    if labels is None:
        labels = [f"v{j + 1}" for j in range(arr.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(labels)
        for row in arr:
            writer.writerow([repr(float(v)) for v in row])


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file {path} does not exist")
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file {path} is not valid JSON: "
                              f"{exc}") from None
    if not isinstance(cfg, dict):
        raise ValidationError(f"config file {path} must hold an object")
    return cfg


def canonical_text(obj) -> str:
    """Canonical JSON form used for digests and manifest embedding."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass
class DatasetBundle:
    """Parsed input tables plus the file each came from, for error
    messages."""

    y: np.ndarray
    w: np.ndarray | None
    x: np.ndarray | None
    labels: list
    y_path: str

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.y.shape[1]

    def model_data(self) -> ModelData:
        return ModelData(y=self.y, w=self.w, x=self.x)


def load_bundle(cfg: dict, base: Path, kind: str) -> DatasetBundle:
    """Load the observation file and any side tables named in the
    config, checking that their shapes agree with one another."""
    data_cfg = cfg.get("data")
    if not isinstance(data_cfg, dict) or "y" not in data_cfg:
        raise ValidationError("config needs a data section naming the "
                              "observation file y")
    y_path = base / data_cfg["y"]
    labels, y = read_matrix_csv(y_path)
    w = x = None
    if "w" in data_cfg:
        w_path = base / data_cfg["w"]
        _, w = read_matrix_csv(w_path)
        if w.shape[0] != y.shape[0]:
            raise ValidationError(
                f"{w_path} has {w.shape[0]} rows but {y_path} has "
                f"{y.shape[0]}")
    if "x" in data_cfg:
        x_path = base / data_cfg["x"]
        _, x = read_matrix_csv(x_path)
        if x.shape[0] != y.shape[1]:
            raise ValidationError(
                f"{x_path} has {x.shape[0]} rows but {y_path} has "
                f"{y.shape[1]} columns")
    if kind == "probit" and not np.all(np.isin(y, (0.0, 1.0))):
        raise ValidationError(f"{y_path} must be strictly 0/1 for a probit "
                              "model")
    return DatasetBundle(y=y, w=w, x=x, labels=labels, y_path=str(y_path))


def _build_phi(phi_cfg: dict | None, p: int, base: Path) -> PhiModel | None:
    if phi_cfg is None:
        return None
    family = phi_cfg.get("family", "identity")
    theta = phi_cfg.get("theta")
    blocks = phi_cfg.get("blocks")
    distance = None
    if "distance" in phi_cfg:
        d_cfg = phi_cfg["distance"]
        coords = metric = None
        labels = None
        if "coords" in d_cfg:
            labels, coords = read_matrix_csv(base / d_cfg["coords"])
        if "metric" in d_cfg:
            _, metric = read_matrix_csv(base / d_cfg["metric"])
        distance = DistanceSpec(coords=coords, metric=metric, labels=labels)
    return PhiModel(family, p, theta, blocks=blocks, distance=distance)


def build_spec(cfg: dict, p: int, base: Path,
               fixed_h: int | None = None) -> FactorModelSpec:
    """Build the model settings object from the config's model section.

    ``p`` comes from the observation file; a conflicting value in the
    config is an error rather than silently preferring either.
    ``fixed_h`` pins the truncation level (the caller also disables
    adaptation)."""
    model = cfg.get("model", {})
    if "p" in model and int(model["p"]) != p:
        raise ValidationError(
            f"config says p={model['p']} but the observation file has "
            f"{p} columns")
    mean_cfg = model.get("mean", {})
    mean = MeanModel(
        kind=mean_cfg.get("kind", "constant"),
        s_mu2=mean_cfg.get("s_mu2", 10.0),
        s_beta2=mean_cfg.get("s_beta2", 1.0),
        s_kappa2=mean_cfg.get("s_kappa2", 1.0),
    )
    kwargs = {}
    for name in ("mgp_a1", "mgp_a2", "sigma_shape", "sigma_rate",
                 "varsigma_rate", "h_init", "h_max", "order",
                 "n_covariates", "n_meta"):
        if name in model:
            kwargs[name] = model[name]
    if fixed_h is not None:
        kwargs["h_init"] = kwargs["h_max"] = int(fixed_h)
    return FactorModelSpec(
        p=p,
        kind=model.get("kind", "static"),
        prior=model.get("prior", "matrix-normal"),
        phi=_build_phi(model.get("phi"), p, base),
        mean=mean,
        **kwargs,
    )


def build_sampler_config(cfg: dict, seed=None, fixed_h=None, criterion=None,
                         epsilon=None, trace_target=None) -> SamplerConfig:
    """Sampler settings from the config, with command-line overrides."""
    sampler = dict(cfg.get("sampler", {}))
    if seed is not None:
        sampler["seed"] = int(seed)
    if criterion is not None:
        sampler["criterion"] = criterion
    if epsilon is not None:
        sampler["epsilon"] = float(epsilon)
    if trace_target is not None:
        sampler["trace_target"] = float(trace_target)
    if fixed_h is not None:
        sampler["adapt_enabled"] = False
    known = {f.name for f in dataclasses.fields(SamplerConfig)}
    unknown = set(sampler) - known
    if unknown:
        raise ValidationError(
            f"unknown sampler settings: {sorted(unknown)}")
    return SamplerConfig(**sampler)
