"""Sweep composition and the chain driver.

A sweep scans every block conditional once.  The driver wires together
three independent random streams (initialization, sweeps, truncation
adaptation), optional proposal-scale tuning over the early burn-in,
checkpointing, and draw collection into a DrawStore.
"""

from __future__ import annotations

import pickle
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import __version__
from ..errors import PartialChainError
from .adapt import adapt_truncation
from .conditionals import (
    row_scale_precision,
    update_factors_static,
    update_idiosyncratic_variances,
    update_loadings,
    update_mean,
    update_probit_latents,
    update_shrinkage,
    update_tail_weight,
    update_theta_mh,
)
from .ffbs import ffbs_factors
from .mala import update_dynamics_mala
from .modelspec import FactorModelSpec, ModelData, SamplerConfig, run_digest
from .state import ChainState, init_state_from_prior
from .store import DrawStore, FORMAT_TAG, param_widths

CHECKPOINT_NAME = "checkpoint.pkl"

# Robbins-Monro acceptance targets: scalar-ish random walks vs the
# gradient-guided blocks.
_ACC_TARGETS = {"theta": 0.44, "varsigma": 0.44, "mala": 0.55}


def gibbs_sweep(state: ChainState, data: ModelData, spec: FactorModelSpec,
                config: SamplerConfig, rng, steps: dict) -> dict:
    """One systematic scan over all conditionals.  Returns per-move
    (accepted, attempted) counts for the Metropolis components."""
    counts = {}
    if spec.kind == "probit" and data.n:
        update_probit_latents(state, data, spec, rng)
    if spec.kind == "dynamic":
        ffbs_factors(state, data, spec, rng)
    else:
        update_factors_static(state, data, spec, rng)
    update_mean(state, data, spec, rng)
    row_prec = row_scale_precision(state, spec)
    update_loadings(state, data, spec, rng, row_prec)
    if spec.kind != "probit":
        update_idiosyncratic_variances(state, data, spec, rng)
    update_shrinkage(state, spec, rng, row_prec)
    if spec.prior == "matrix-t":
        from .conditionals import refresh_mixing_matrix

        refresh_mixing_matrix(state, spec, rng)
        acc = update_tail_weight(state, spec, rng, steps["varsigma"])
        counts["varsigma"] = (int(acc), 1)
    if spec.phi.n_params:
        acc = update_theta_mh(state, spec, rng, steps["theta"])
        counts["theta"] = (int(acc), 1)
    if spec.kind == "dynamic":
        counts["mala"] = update_dynamics_mala(state, rng, steps["mala"],
                                              config.mala_block)
    return counts


def snapshot(state: ChainState, spec: FactorModelSpec,
             n_rows_eta: int, store_eta: bool) -> dict:
    """Flatten the state into fixed-width padded rows for storage."""
    p, hm, h = spec.p, spec.h_max, state.h
    out = {"h": np.array([float(h)]), "sigma2": state.sigma2.copy()}
    lam = np.zeros((p, hm))
    lam[:, :h] = state.lam
    out["lam"] = lam.ravel()
    rho = np.zeros(hm)
    rho[:h] = state.rho
    out["rho"] = rho
    if state.theta.size:
        out["theta"] = state.theta.copy()
    if state.mu is not None:
        out["mu"] = state.mu.copy()
    if state.b is not None:
        out["b"] = state.b.ravel().copy()
    if state.kmat is not None:
        out["kmat"] = state.kmat.ravel().copy()
    if state.varsigma_check is not None:
        out["varsigma_check"] = np.array([state.varsigma_check])
    if state.a_mats is not None:
        a = np.zeros((spec.order, hm, hm))
        for i, mat in enumerate(state.a_mats):
            a[i, :h, :h] = mat
        out["a"] = a.ravel()
    if store_eta:
        eta = np.zeros((n_rows_eta, hm))
        eta[:, :h] = state.eta
        out["eta"] = eta.ravel()
    return out


def build_manifest(spec: FactorModelSpec, config: SamplerConfig,
                   data: ModelData, events: list) -> dict:
    n_rows_eta = data.n + spec.order
    widths = param_widths(spec.p, n_rows_eta, spec.order, spec.h_max,
                          spec.phi.n_params, spec.mean.kind,
                          spec.n_covariates, spec.n_meta, spec.prior,
                          config.store_eta)
    return {
        "format": FORMAT_TAG,
        "version": __version__,
        "digest": run_digest(spec, config),
        "seed": config.seed,
        "chain_id": config.chain_id,
        "kind": spec.kind,
        "prior": spec.prior,
        "p": spec.p,
        "n": data.n,
        "order": spec.order,
        "n_covariates": spec.n_covariates,
        "n_meta": spec.n_meta,
        "mean_kind": spec.mean.kind,
        "h_max": spec.h_max,
        "burn_in": config.burn_in,
        "iterations": config.iterations,
        "thin": config.thin,
        "n_draws": 0,
        "store_eta": config.store_eta,
        "scale_convention": "trace(phi)=p",
        "criterion": {"kind": config.criterion, "epsilon": config.epsilon,
                      "trace_target": config.trace_target},
        "truncation_events": [list(e) for e in events],
        "params": widths,
    }


class _Tuner:
    """Stochastic-approximation scale tuner, active early in burn-in."""

    def __init__(self, step: float, target: float):
        self.log_step = float(np.log(step))
        self.target = target
        self.t = 0

    def update(self, accepted: int, attempted: int) -> float:
        self.t += 1
        if attempted:
            rate = accepted / attempted
            self.log_step += (rate - self.target) / self.t ** 0.6
        return float(np.exp(self.log_step))


def _chain_streams(config: SamplerConfig):
    root = np.random.SeedSequence([config.seed, config.chain_id])
    init_ss, sweep_ss, adapt_ss = root.spawn(3)
    return (np.random.default_rng(init_ss), np.random.default_rng(sweep_ss),
            np.random.default_rng(adapt_ss))


def run_chain(spec: FactorModelSpec, data: ModelData, config: SamplerConfig,
              out_dir=None, init_state: ChainState | None = None,
              resume: bool = False, stop_after: int | None = None):
    """Run one chain and return its DrawStore.

    With ``out_dir`` the store (and any checkpoints) land there.  A run
    interrupted after ``stop_after`` sweeps returns None; calling again
    with ``resume=True`` picks up from the checkpoint and produces the
    same draws as an uninterrupted run, byte for byte.
    """
    spec.check_data(data)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    n_rows_eta = data.n + spec.order
    total = config.burn_in + config.iterations
    tune_end = int(config.tune_frac * config.burn_in)

    ckpt_path = out_dir / CHECKPOINT_NAME if out_dir is not None else None
    if resume:
        if ckpt_path is None or not ckpt_path.exists():
            raise ValueError("resume requested but no checkpoint found")
        with open(ckpt_path, "rb") as fh:
            saved = pickle.load(fh)
        if saved["digest"] != run_digest(spec, config):
            raise ValueError(
                "checkpoint was produced under a different configuration")
        state = saved["state"]
        rows = saved["rows"]
        events = saved["events"]
        steps = saved["steps"]
        start_it = saved["iteration"]
        _, sweep_rng, adapt_rng = _chain_streams(config)
        sweep_rng.bit_generator.state = saved["sweep_rng"]
        adapt_rng.bit_generator.state = saved["adapt_rng"]
        tuners = saved["tuners"]
    else:
        init_rng, sweep_rng, adapt_rng = _chain_streams(config)
        state = init_state.copy() if init_state is not None \
            else init_state_from_prior(spec, data, init_rng)
        rows = []
        events = []
        steps = {"theta": config.theta_step, "varsigma": config.varsigma_step,
                 "mala": config.mala_step}
        tuners = {name: _Tuner(steps[name], _ACC_TARGETS[name])
                  for name in steps}
        start_it = 0

    for it in range(start_it + 1, total + 1):
        counts = gibbs_sweep(state, data, spec, config, sweep_rng, steps)
        if config.tune and it <= tune_end:
            for name, (acc, att) in counts.items():
                steps[name] = tuners[name].update(acc, att)
        ev = adapt_truncation(state, data, spec, config, it, adapt_rng)
        if ev is not None:
            events.append((it, ev[0], ev[1]))
        if it > config.burn_in and (it - config.burn_in) % config.thin == 0:
            rows.append(snapshot(state, spec, n_rows_eta, config.store_eta))
        at_stop = stop_after is not None and it >= stop_after
        if ckpt_path is not None and config.checkpoint_every and \
                (it % config.checkpoint_every == 0 or at_stop):
            payload = {
                "digest": run_digest(spec, config),
                "iteration": it,
                "state": state,
                "rows": rows,
                "events": events,
                "steps": steps,
                "tuners": tuners,
                "sweep_rng": sweep_rng.bit_generator.state,
                "adapt_rng": adapt_rng.bit_generator.state,
            }
            tmp = ckpt_path.with_suffix(".tmp")
            with open(tmp, "wb") as fh:
                pickle.dump(payload, fh)
            tmp.replace(ckpt_path)
        if at_stop and it < total:
            return None

    manifest = build_manifest(spec, config, data, events)
    store = DrawStore.assemble(manifest, rows)
    if out_dir is not None:
        store.save(out_dir)
    return store


def _run_one(args):
    spec, data, config, out_dir = args
    return config.chain_id, run_chain(spec, data, config, out_dir=out_dir)


def run_many_chains(spec: FactorModelSpec, data: ModelData,
                    config: SamplerConfig, chains: int, out_dir=None,
                    processes: int = 1) -> dict:
    """Run several chains that differ only in chain id.

    Returns {chain_id: DrawStore}.  If some chains fail and others
    succeed, the successes are kept (and saved) and a PartialChainError
    carrying the per-chain failures is raised.
    """
    jobs = []
    for cid in range(chains):
        sub = None if out_dir is None else Path(out_dir) / f"chain{cid:02d}"
        jobs.append((spec, data, replace(config, chain_id=cid), sub))
    results: dict = {}
    failures: dict = {}
    if processes > 1:
        with ProcessPoolExecutor(max_workers=processes) as pool:
            futures = {pool.submit(_run_one, job): job[2].chain_id
                       for job in jobs}
            for fut, cid in futures.items():
                try:
                    results[fut.result()[0]] = fut.result()[1]
                except Exception as exc:  # noqa: BLE001 - reported per chain
                    failures[cid] = repr(exc)
    else:
        for job in jobs:
            cid = job[2].chain_id
            try:
                results[cid] = _run_one(job)[1]
            except Exception as exc:  # noqa: BLE001 - reported per chain
                failures[cid] = repr(exc)
    if failures:
        err = PartialChainError(
            f"{len(failures)} of {chains} chains failed: {failures}",
            failures=failures)
        err.completed = results
        raise err
    return results
