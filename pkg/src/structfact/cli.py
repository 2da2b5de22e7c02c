"""Batch command-line interface.

Subcommands cover the whole workflow: simulate writes synthetic
datasets, fit runs chains into a run directory, and postprocess,
forecast, and score read that directory back to produce reports with
figures next to the delimited output.  Every command is deterministic
given its input files, config, and seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, figures
from .dataio import (
    build_sampler_config,
    build_spec,
    canonical_text,
    load_bundle,
    load_config,
    read_matrix_csv,
    write_matrix_csv,
)
from .errors import NumericalError, PartialChainError, ValidationError
from .forecasting import forecast_h
from .postprocess import identify_store, k_posterior_summary
from .sampler import DrawStore, run_many_chains
from .scoring import (
    brier_score,
    cpo_pml,
    gaussian_row_loglik,
    log_score,
    probit_row_loglik,
    probit_success_prob,
)
from .simulate import build_true_state, simulate_dataset

RUN_MANIFEST = "run.json"
REPORT_DIR = "report"

# Stream labels keeping command-level generators disjoint from the
# per-chain streams, which use small chain ids in the second slot.
_SIM_STREAM = 2 ** 33
_FORECAST_STREAM = 2 ** 33 + 1


def _seed_from(args, cfg) -> int:
    if args.seed is not None:
        return int(args.seed)
    return int(cfg.get("seed", 0))


def _as_vector(value, p: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(p, float(arr))
    if arr.shape != (p,):
        raise ValidationError(f"{name} must be a scalar or length-{p} list")
    return arr


def _true_state(spec, sim_cfg: dict, n: int, rng):
    true_cfg = sim_cfg["true"]
    k = int(true_cfg.get("k", 1))
    lam = float(true_cfg.get("loading_scale", 1.0)) \
        * rng.standard_normal((spec.p, k))
    kwargs = {}
    if spec.kind != "probit":
        kwargs["sigma2"] = _as_vector(true_cfg.get("sigma2", 1.0), spec.p,
                                      "sigma2")
    if spec.mean.kind == "constant":
        kwargs["mu"] = _as_vector(true_cfg.get("mu", 0.0), spec.p, "mu")
    else:
        kwargs["b"] = float(true_cfg.get("b_scale", 1.0)) \
            * rng.standard_normal((spec.n_covariates, spec.p))
    if spec.kind == "dynamic":
        scale = float(true_cfg.get("ar_scale", 0.4))
        kwargs["a_mats"] = [scale * rng.standard_normal((k, k))
                            for _ in range(spec.order)]
    return build_true_state(spec, n, rng, lam, **kwargs)


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    base = Path(args.config).parent
    sim_cfg = cfg.get("simulate")
    if not isinstance(sim_cfg, dict) or "n" not in sim_cfg:
        raise ValidationError(
            "config needs a simulate section with the sample size n")
    n = int(sim_cfg["n"])
    model = cfg.get("model", {})
    if "p" not in model:
        raise ValidationError("simulation needs model.p in the config")
    spec = build_spec(cfg, int(model["p"]), base)
    seed = _seed_from(args, cfg)
    rng = np.random.default_rng(np.random.SeedSequence([seed, _SIM_STREAM]))
    state = _true_state(spec, sim_cfg, n, rng) if "true" in sim_cfg else None
    data, state = simulate_dataset(spec, n, rng, state=state)

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    data_cfg = cfg.get("data", {})
    write_matrix_csv(out / data_cfg.get("y", "y.csv"), data.y)
    if data.w is not None:
        write_matrix_csv(out / data_cfg.get("w", "w.csv"), data.w)
    if data.x is not None:
        write_matrix_csv(out / data_cfg.get("x", "x.csv"), data.x)
    truth = {
        "seed": seed,
        "canonical_config": canonical_text(cfg),
        "true": {
            "lam": state.lam.tolist(),
            "sigma2": state.sigma2.tolist(),
        },
    }
    if state.mu is not None:
        truth["true"]["mu"] = state.mu.tolist()
    if state.b is not None:
        truth["true"]["b"] = state.b.tolist()
    if state.a_mats is not None:
        truth["true"]["a_mats"] = [a.tolist() for a in state.a_mats]
    with open(out / "truth.json", "w", encoding="utf-8") as fh:
        json.dump(truth, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return 0


def _cmd_fit(args) -> int:
    cfg = load_config(args.config)
    base = Path(args.config).parent
    kind = cfg.get("model", {}).get("kind", "static")
    bundle = load_bundle(cfg, base, kind)
    spec = build_spec(cfg, bundle.p, base, fixed_h=args.fixed_h)
    sampler = build_sampler_config(cfg, seed=args.seed,
                                   fixed_h=args.fixed_h,
                                   criterion=args.criterion,
                                   epsilon=args.epsilon,
                                   trace_target=args.t)
    chains = int(args.chains if args.chains is not None
                 else cfg.get("chains", 2))
    if chains < 1:
        raise ValidationError("need at least one chain")
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    results = run_many_chains(spec, bundle.model_data(), sampler,
                              chains=chains, out_dir=out,
                              processes=int(args.threads))
    digest = results[0].manifest["digest"]
    run = {
        "version": __version__,
        "digest": digest,
        "seed": sampler.seed,
        "chains": chains,
        "chain_dirs": [f"chain{cid:02d}" for cid in sorted(results)],
        "canonical_config": canonical_text(cfg),
    }
    with open(out / RUN_MANIFEST, "w", encoding="utf-8") as fh:
        json.dump(run, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return 0


def _load_run(out: Path):
    run_path = out / RUN_MANIFEST
    if not run_path.exists():
        raise ValidationError(
            f"no fit manifest at {run_path}; run the fit command first")
    with open(run_path, encoding="utf-8") as fh:
        run = json.load(fh)
    stores = [DrawStore.load(out / d) for d in run["chain_dirs"]]
    digests = sorted({s.manifest["digest"] for s in stores}
                     | {run["digest"]})
    if len(digests) > 1:
        raise ValidationError(
            "run manifest and chain stores disagree on the configuration "
            "digest: " + ", ".join(digests))
    return run, stores


def _report_dir(out: Path) -> Path:
    report = out / REPORT_DIR
    report.mkdir(parents=True, exist_ok=True)
    return report


def _cmd_postprocess(args) -> int:
    out = Path(args.output)
    _, stores = _load_run(out)
    combined = DrawStore.concat(stores)
    crit_cfg = combined.manifest["criterion"]
    criterion = args.criterion or crit_cfg["kind"]
    epsilon = args.epsilon if args.epsilon is not None else crit_cfg["epsilon"]
    target = args.t if args.t is not None else crit_cfg["trace_target"]

    report = _report_dir(out)
    ident = identify_store(combined)
    for name, arr in ident["arrays"].items():
        with open(report / f"identified_{name}.f64", "wb") as fh:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    meta = {
        "n_draws": combined.n_draws,
        "widths": {name: arr.shape[1]
                   for name, arr in ident["arrays"].items()},
        "rank_deficient": ident["rank_deficient"],
        "digest": combined.manifest["digest"],
    }
    with open(report / "identified.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")

    ksum = k_posterior_summary(combined, criterion, epsilon, target)
    detail = (f"epsilon={epsilon}" if criterion == "epsilon"
              else f"T={target}")
    lines = [
        f"draws: {combined.n_draws}",
        f"criterion: {criterion} ({detail})",
        f"mode: {ksum['mode']}",
        f"median: {ksum['median']}",
        f"interval95: [{ksum['interval'][0]}, {ksum['interval'][1]}]",
        "counts:",
    ]
    lines += [f"  {k}: {c}" for k, c in sorted(ksum["counts"].items())]
    (report / "k_summary.txt").write_text("\n".join(lines) + "\n",
                                          encoding="utf-8")
    figures.save_k_histogram(ksum["counts"], report / "k_posterior.png")
    p, hm = combined.manifest["p"], combined.h_max
    keep = [i for i in range(combined.n_draws)
            if i not in set(ident["rank_deficient"])]
    lam_mean = ident["arrays"]["lam"][keep].mean(axis=0).reshape(p, hm)
    figures.save_loading_heatmap(lam_mean, report / "loadings_mean.png")
    return 0


def _cmd_forecast(args) -> int:
    cfg = load_config(args.config)
    base = Path(args.config).parent
    out = Path(args.output)
    _, stores = _load_run(out)
    combined = DrawStore.concat(stores)
    kind = cfg.get("model", {}).get("kind", "static")
    bundle = load_bundle(cfg, base, kind)
    fc_cfg = cfg.get("forecast", {})
    horizon = int(args.horizon if args.horizon is not None
                  else fc_cfg.get("horizon", bundle.p))
    w_future = None
    if "w_future" in fc_cfg:
        _, w_future = read_matrix_csv(base / fc_cfg["w_future"])
    seed = _seed_from(args, cfg)
    rng = np.random.default_rng(
        np.random.SeedSequence([seed, _FORECAST_STREAM]))
    res = forecast_h(combined, bundle.model_data(), horizon, rng,
                     w_future=w_future)

    report = _report_dir(out)
    table = np.column_stack([res.day, res.hour, res.mean, res.lower,
                             res.upper])
    write_matrix_csv(report / "forecast.csv", table,
                     labels=["day", "hour", "mean", "lower", "upper"])
    figures.save_forecast_fan(res, report / "forecast.png")
    return 0


def _score_from_store(combined, cfg, base, y_hold, hold_cfg):
    kind = combined.manifest["kind"]
    if kind == "probit":
        if "w" not in hold_cfg:
            raise ValidationError(
                "probit scoring needs held-out covariates w in the "
                "holdout section")
        _, w_hold = read_matrix_csv(base / hold_cfg["w"])
        if w_hold.shape[0] != y_hold.shape[0]:
            raise ValidationError(
                f"holdout files disagree: {hold_cfg['w']} has "
                f"{w_hold.shape[0]} rows, {hold_cfg['y']} has "
                f"{y_hold.shape[0]}")
        if not np.all(np.isin(y_hold, (0.0, 1.0))):
            raise ValidationError("held-out outcomes must be 0/1")
        probs = np.zeros_like(y_hold)
        loglik = np.zeros((combined.n_draws, y_hold.shape[0]))
        for i in range(combined.n_draws):
            lam = combined.loadings(i)
            mean = w_hold @ combined.b_draw(i)
            probs += probit_success_prob(mean, lam)
            loglik[i] = probit_row_loglik(y_hold, mean, lam)
        probs /= combined.n_draws
        ordinates = cpo_pml(loglik)
        return {
            "brier": brier_score(probs, y_hold),
            "log_score": log_score(probs, y_hold),
            "log_pml": ordinates["log_pml"],
        }, ordinates
    if kind == "static":
        mean_kind = combined.manifest["mean_kind"]
        w_hold = None
        if mean_kind != "constant":
            if "w" not in hold_cfg:
                raise ValidationError(
                    "regression-mean scoring needs held-out covariates w")
            _, w_hold = read_matrix_csv(base / hold_cfg["w"])
        loglik = np.zeros((combined.n_draws, y_hold.shape[0]))
        for i in range(combined.n_draws):
            if mean_kind == "constant":
                mean = combined.array("mu")[i][None, :]
            else:
                mean = w_hold @ combined.b_draw(i)
            loglik[i] = gaussian_row_loglik(y_hold - mean,
                                            combined.loadings(i),
                                            combined.array("sigma2")[i])
        ordinates = cpo_pml(loglik)
        return {"log_pml": ordinates["log_pml"]}, ordinates
    raise ValidationError(
        "scoring held-out rows assumes exchangeable observations; use the "
        "forecast command for dynamic fits")


def _cmd_score(args) -> int:
    cfg = load_config(args.config)
    base = Path(args.config).parent
    out = Path(args.output)
    hold_cfg = cfg.get("holdout")
    if not isinstance(hold_cfg, dict) or "y" not in hold_cfg:
        raise ValidationError(
            "config needs a holdout section naming the held-out file y")
    _, y_hold = read_matrix_csv(base / hold_cfg["y"])

    ordinates = None
    if "predictions" in hold_cfg:
        _, preds = read_matrix_csv(base / hold_cfg["predictions"])
        if preds.shape != y_hold.shape:
            raise ValidationError(
                f"predictions {hold_cfg['predictions']} shaped "
                f"{preds.shape} but outcomes are {y_hold.shape}")
        scores = {"brier": brier_score(preds, y_hold),
                  "log_score": log_score(preds, y_hold)}
    else:
        _, stores = _load_run(out)
        combined = DrawStore.concat(stores)
        scores, ordinates = _score_from_store(combined, cfg, base, y_hold,
                                              hold_cfg)

    report = _report_dir(out)
    lines = [f"observations: {y_hold.shape[0]}",
             f"cells: {y_hold.size}"]
    for name in ("brier", "log_score", "log_pml"):
        if name in scores:
            lines.append(f"{name}: {scores[name]!r}")
    (report / "score.txt").write_text("\n".join(lines) + "\n",
                                      encoding="utf-8")
    if ordinates is not None:
        table = np.column_stack([np.arange(1, len(ordinates["cpo"]) + 1),
                                 ordinates["cpo"], ordinates["log_cpo"]])
        write_matrix_csv(report / "cpo.csv", table,
                         labels=["row", "cpo", "log_cpo"])
    figures.save_score_bars(scores, report / "score.png")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="structfact",
        description="Structured Bayesian factor models: simulate, fit, "
                    "and report from the command line.")
    parser.add_argument("--version", action="version",
                        version=f"structfact {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, **flags):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=flags.get("config", True),
                         help="path to the JSON run configuration")
        cmd.add_argument("--output", required=True,
                         help="run directory for artifacts")
        cmd.add_argument("--seed", type=int, default=None,
                         help="override the config seed")
        if flags.get("fit"):
            cmd.add_argument("--chains", type=int, default=None)
            cmd.add_argument("--threads", type=int, default=1)
            cmd.add_argument("--fixed-h", dest="fixed_h", type=int,
                             default=None,
                             help="pin the truncation level and disable "
                                  "adaptation")
        if flags.get("criterion"):
            cmd.add_argument("--criterion",
                             choices=("epsilon", "proportion"), default=None)
            cmd.add_argument("--epsilon", type=float, default=None)
            cmd.add_argument("--t", type=float, default=None,
                             help="retained-variation target for the "
                                  "proportion criterion")
        if flags.get("horizon"):
            cmd.add_argument("--horizon", type=int, default=None)
        cmd.set_defaults(func=func)
        return cmd

    add("simulate", _cmd_simulate, "write a synthetic dataset and its truth")
    add("fit", _cmd_fit, "run MCMC chains into a run directory",
        fit=True, criterion=True)
    add("postprocess", _cmd_postprocess,
        "identify draws and summarize the factor count",
        config=False, criterion=True)
    add("forecast", _cmd_forecast, "hourly forecasts from a dynamic fit",
        horizon=True)
    add("score", _cmd_score, "predictive scores on held-out data")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except PartialChainError as exc:
        print(f"partial failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
