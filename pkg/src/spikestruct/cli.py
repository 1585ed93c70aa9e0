"""Command-line orchestration of the experiments.

Subcommands mirror the report paths: replica-curve, tap-run, oamp-check,
surrogate-compare, spectrum-ingest. Every run writes CSV/JSON plus a PNG
figure next to the delimited output, stamped with the manifest hash so
reruns with identical config and seeds are byte-identical in the CSV body.

Exit codes: 0 success, 2 configuration/validation error, 3 numerical failure.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from . import figures
from .config import ConfigError, ExperimentConfig, config_echo, parse_config
from .ensemble import (
    EnsembleError,
    ingest_empirical_spectrum,
    load_eigenvalues_csv,
    make_observation,
    matrix_function_apply,
)
from .outputs import manifest_hash, write_csv, write_json, write_manifest
from .priors import Prior, PriorError, build_prior, load_atoms_csv
from .replica import (
    ReplicaError,
    gaussian_surrogate_snr,
    phase_curve,
    solve_both_inits,
)
from .spectra import (
    RTransformRangeError,
    SpectraError,
    build_builtin,
    effective_coupling,
    export_density_csv,
    potential_derivative_from_density,
    pushforward_law,
    standardize,
    transform_potential,
)
from .state_evolution import StateEvolutionError, replica_equivalence_check
from .tap import TapConfig, TapError, informative_init, pca_init, pca_overlap_theory, run_tap

NUMERICAL_ERRORS = (SpectraError, ReplicaError, StateEvolutionError, EnsembleError,
                    PriorError, TapError, RTransformRangeError, np.linalg.LinAlgError)

OFF_BASIN_TOL = 0.15


def _load_spectrum(path) -> np.ndarray:
    try:
        return load_eigenvalues_csv(path)
    except (OSError, EnsembleError) as err:
        raise ConfigError(f"spectrum file {path}: {err}") from err


def _noise_spec(cfg: ExperimentConfig) -> dict:
    if cfg.spectrum_file:
        values = _load_spectrum(cfg.spectrum_file)
        return {"empirical_values": values.tolist(), "outliers": cfg.outliers}
    return {"kind": cfg.noise, "params": dict(cfg.noise_params)}


def build_noise_model(spec: dict):
    """(standardized density, matching potential) from a plain noise spec."""
    if "empirical_values" in spec:
        _, rho = ingest_empirical_spectrum(np.asarray(spec["empirical_values"]),
                                           spec.get("outliers", 0))
        rho_std = standardize(rho)
        return rho_std, potential_derivative_from_density(rho_std)
    rho, pot = build_builtin(spec["kind"], spec.get("params") or {})
    if abs(rho.mean) <= 1e-9 and abs(rho.variance - 1.0) <= 1e-8:
        return rho, pot
    rho_std = standardize(rho)
    return rho_std, transform_potential(pot, rho_std)


def build_prior_model(cfg: ExperimentConfig) -> Prior:
    if cfg.prior_atoms_file:
        return load_atoms_csv(cfg.prior_atoms_file)
    return build_prior(cfg.prior, cfg.prior_params)


def _prior_spec(cfg: ExperimentConfig) -> dict:
    if cfg.prior_atoms_file:
        return {"atoms_file": cfg.prior_atoms_file}
    return {"kind": cfg.prior, "params": dict(cfg.prior_params)}


def _prior_from_spec(spec: dict) -> Prior:
    if "atoms_file" in spec:
        return load_atoms_csv(spec["atoms_file"])
    return build_prior(spec["kind"], spec.get("params") or {})


def run_single_tap_trial(payload: dict) -> dict:
    """One seeded TAP trial; importable so process pools can run it."""
    rho, pot = build_noise_model(payload["noise"])
    prior = _prior_from_spec(payload["prior"])
    lam = payload["lam"]
    coupling = effective_coupling(rho, pot, lam)
    law = pushforward_law(rho, coupling)
    obs = make_observation(prior, rho, lam, payload["n"], payload["seed"], keep_noise=False)
    jy = matrix_function_apply(obs.y, coupling.j)
    tap_cfg = TapConfig(tau=payload["tau"], max_iter=payload["max_iter"], tol=payload["tol"],
                        onsager_mode=payload["onsager"], init_mode=payload["init"],
                        informative_corr=payload["informative_corr"],
                        clamp_policy=payload["clamp"])
    if tap_cfg.init_mode == "informative":
        m0 = informative_init(obs.x_star, tap_cfg.informative_corr, seed=payload["seed"])
    else:
        m0 = pca_init(obs.y, seed=payload["seed"]).vector
    run = run_tap(jy, prior, law, m0, tap_cfg,
                  replica_gamma=payload.get("replica_gamma"),
                  x_star=obs.x_star, record_mse=payload.get("record_mse", False))
    q_final = float(run.q_tilde_history[-1]) if run.q_tilde_history.size else float("nan")
    return {
        "seed": payload["seed"], "lambda": lam, "iterations": run.iterations,
        "converged": run.converged, "diverged": run.diverged,
        "mse_spike": run.mse_spike, "mse_vector": run.mse_vector,
        "overlap": run.overlap, "clamp_warnings": run.clamp_warnings,
        "q_final": q_final,
        "q_history": run.q_tilde_history.tolist() if payload.get("dump_trajectories") else None,
        "gamma_history": run.gamma_history.tolist() if payload.get("dump_trajectories") else None,
        "mse_history": run.mse_history.tolist() if payload.get("record_mse") else None,
    }


def _fan_out(payloads: list[dict], workers: int) -> list[dict]:
    if workers <= 1 or len(payloads) <= 1:
        results = [run_single_tap_trial(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_single_tap_trial, payloads))
    return sorted(results, key=lambda r: (r["lambda"], r["seed"]))


def _resolve_workers(cfg: ExperimentConfig, override: int | None) -> int:
    if override is not None:
        return max(1, override)
    if cfg.workers > 0:
        return cfg.workers
    return max(1, os.cpu_count() or 1)


@dataclass
class AggregateResult:
    """Per-lambda trial statistics over the non-diverged runs."""

    lam: float
    trials: int
    included: int
    excluded: int
    off_basin: int
    mse_spike_mean: float
    mse_spike_std: str        # repr of the std, or "n/a" below 2 included trials
    mse_vector_mean: float
    mse_vector_std: str
    replica_mmse: float
    pca_theory: float

    def __post_init__(self):
        if self.included + self.excluded != self.trials:
            raise ValueError("included + excluded must equal the trial count")

    def row(self) -> list:
        return [self.lam, self.included, self.excluded, self.off_basin,
                self.mse_spike_mean, self.mse_spike_std,
                self.mse_vector_mean, self.mse_vector_std,
                self.replica_mmse, self.pca_theory]


def _aggregate(lam: float, trials: list[dict], replica_m: float,
               pca_theory: float) -> AggregateResult:
    included = [t for t in trials if not t["diverged"]]
    excluded = len(trials) - len(included)
    off_basin = sum(1 for t in included
                    if not math.isnan(replica_m) and abs(t["q_final"] - replica_m) > OFF_BASIN_TOL)
    def stat(key):
        vals = [t[key] for t in included]
        if not vals:
            return float("nan"), "n/a"
        mean = float(np.mean(vals))
        std = repr(float(np.std(vals, ddof=1))) if len(vals) >= 2 else "n/a"
        return mean, std
    ms, ms_std = stat("mse_spike")
    mv, mv_std = stat("mse_vector")
    return AggregateResult(
        lam=lam, trials=len(trials), included=len(included), excluded=excluded,
        off_basin=off_basin, mse_spike_mean=ms, mse_spike_std=ms_std,
        mse_vector_mean=mv, mse_vector_std=mv_std,
        replica_mmse=1.0 - replica_m**2 if not math.isnan(replica_m) else float("nan"),
        pca_theory=pca_theory,
    )


def _load_cfg(config_path, seed_override) -> ExperimentConfig:
    cfg = parse_config(config_path) if config_path else ExperimentConfig()
    if seed_override is not None:
        cfg.seed = seed_override
    cfg.validate()
    return cfg


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run_command(fn):
    try:
        fn()
    except (ConfigError, click.ClickException) as err:
        click.echo(f"validation error: {err}", err=True)
        raise SystemExit(2)
    except NUMERICAL_ERRORS as err:
        click.echo(f"numerical failure: {err}", err=True)
        raise SystemExit(3)
    raise SystemExit(0)


common_options = [
    click.option("--config", "config_path", type=click.Path(), default=None,
                 help="key = value config file"),
    click.option("--out", "out_path", type=click.Path(), default="out",
                 help="output directory"),
    click.option("--workers", type=int, default=None, help="trial fan-out width"),
    click.option("--seed", type=int, default=None, help="base seed override"),
    click.option("--no-figures", is_flag=True, default=False, help="skip PNG rendering"),
]


def _with_common(fn):
    for opt in reversed(common_options):
        fn = opt(fn)
    return fn


@click.group()
def main():
    """Bayes-optimal limits and TAP iterations for structured spiked models."""


@main.command("replica-curve")
@_with_common
def cmd_replica_curve(config_path, out_path, workers, seed, no_figures):
    def body():
        t0 = time.time()
        cfg = _load_cfg(config_path, seed)
        out = _out_dir(out_path)
        rho, pot = build_noise_model(_noise_spec(cfg))
        prior = build_prior_model(cfg)
        curve = phase_curve(rho, pot, prior, cfg.lambda_grid,
                            damping=cfg.replica_damping, tol=cfg.replica_tol,
                            clamp_policy=cfg.clamp, q_constant=cfg.q_constant)
        echo = config_echo(cfg)
        digest = manifest_hash(echo)
        curve.write_csv(out / "phase_curve.csv", header_lines=[f"# manifest={digest}"])
        pca = np.array([pca_overlap_theory(rho, l) if l > 0 else 0.0 for l in curve.lambdas])
        write_csv(out / "pca_theory.csv", ["lambda", "pca_overlap_sq"],
                  list(zip(curve.lambdas, pca)), digest)
        if not no_figures:
            figures.plot_phase_curve(curve, 1.0 - pca**2, out / "phase_curve.png",
                                     f"{cfg.noise} noise, {cfg.prior} prior", digest=digest)
        write_manifest(out, echo, time.time() - t0)
        click.echo(f"wrote {out / 'phase_curve.csv'}")
    _run_command(body)


@main.command("tap-run")
@_with_common
def cmd_tap_run(config_path, out_path, workers, seed, no_figures):
    def body():
        t0 = time.time()
        cfg = _load_cfg(config_path, seed)
        out = _out_dir(out_path)
        nworkers = _resolve_workers(cfg, workers)
        rho, pot = build_noise_model(_noise_spec(cfg))
        prior = build_prior_model(cfg)
        noise_spec = _noise_spec(cfg)
        prior_spec = _prior_spec(cfg)
        echo = config_echo(cfg)
        digest = manifest_hash(echo)
        trial_rows, agg_rows = [], []
        interrupted = False
        try:
            for lam in cfg.lambda_grid:
                replica_m, replica_mhat, pca = 0.0, 0.0, 0.0
                if lam > 0:
                    sp = solve_both_inits(rho, pot, prior, lam, damping=cfg.replica_damping,
                                          tol=cfg.replica_tol, clamp_policy=cfg.clamp,
                                          q_constant=cfg.q_constant)
                    replica_m, replica_mhat = sp.m_star, sp.mhat_star
                    pca = pca_overlap_theory(rho, lam)
                payloads = [{
                    "noise": noise_spec, "prior": prior_spec, "lam": lam, "n": cfg.n,
                    "seed": cfg.seed + i, "tau": cfg.tau, "max_iter": cfg.max_iter,
                    "tol": cfg.tol, "onsager": cfg.onsager, "init": cfg.init,
                    "informative_corr": cfg.informative_corr, "clamp": cfg.clamp,
                    "replica_gamma": replica_mhat if cfg.onsager == "fixed_from_replica" else None,
                    "dump_trajectories": cfg.dump_trajectories,
                } for i in range(cfg.trials)]
                results = _fan_out(payloads, nworkers)
                for r in results:
                    trial_rows.append([r["seed"], r["lambda"], r["iterations"],
                                       r["converged"], r["mse_spike"], r["mse_vector"],
                                       r["overlap"], r["clamp_warnings"]])
                    if cfg.dump_trajectories and r["q_history"] is not None:
                        write_csv(out / f"trajectory_seed{r['seed']}_lambda{r['lambda']:g}.csv",
                                  ["t", "q_tilde", "gamma"],
                                  [[t, qv, gv] for t, (qv, gv) in
                                   enumerate(zip(r["q_history"], r["gamma_history"]))],
                                  digest)
                agg = _aggregate(lam, results, replica_m, pca)
                agg_rows.append(agg.row())
                click.echo(f"lambda={lam:g}: included={agg.included} excluded={agg.excluded} "
                           f"mse_spike={agg.mse_spike_mean:.5f} replica={agg.replica_mmse:.5f}")
        except KeyboardInterrupt:
            interrupted = True
            click.echo("interrupted; flushing partial results", err=True)
        write_csv(out / "trials.csv",
                  ["seed", "lambda", "iterations", "converged", "mse_spike",
                   "mse_vector", "overlap", "clamp_warnings"], trial_rows, digest)
        write_csv(out / "aggregate.csv",
                  ["lambda", "included", "excluded", "off_basin",
                   "mse_spike_mean", "mse_spike_std", "mse_vector_mean", "mse_vector_std",
                   "replica_mmse", "pca_theory"], agg_rows, digest)
        if interrupted:
            write_manifest(out, echo, time.time() - t0, extra={"interrupted": True})
            raise SystemExit(130)
        if not no_figures:
            lam_col = [row[0] for row in agg_rows]
            means = [row[4] for row in agg_rows]
            stds = [0.0 if row[5] == "n/a" else float(row[5]) for row in agg_rows]
            figures.plot_tap_aggregate(lam_col, means, stds,
                                       [row[8] for row in agg_rows],
                                       np.asarray([row[9] for row in agg_rows]),
                                       out / "tap_run.png",
                                       f"TAP vs replica: {cfg.noise}/{cfg.prior}, N={cfg.n}",
                                       digest=digest)
        write_manifest(out, echo, time.time() - t0,
                       extra={"total_excluded": int(sum(row[2] for row in agg_rows))})
        click.echo(f"wrote {out / 'trials.csv'} and {out / 'aggregate.csv'}")
    _run_command(body)


@main.command("oamp-check")
@_with_common
def cmd_oamp_check(config_path, out_path, workers, seed, no_figures):
    def body():
        t0 = time.time()
        cfg = _load_cfg(config_path, seed)
        out = _out_dir(out_path)
        rho, pot = build_noise_model(_noise_spec(cfg))
        prior = build_prior_model(cfg)
        records = []
        for lam in cfg.lambda_grid:
            if lam == 0:
                records.append({"lambda": 0.0, "theta": 0.0, "omega": 0.0,
                                "m_se": 0.0, "mhat_se": 0.0, "m_replica": 0.0,
                                "mhat_replica": 0.0, "gap_m": 0.0, "gap_mhat": 0.0,
                                "sup_gap_phi": 0.0, "se_converged": True,
                                "replica_converged": True, "degenerate": prior.is_gaussian,
                                "basin_match": True})
                continue
            rec = replica_equivalence_check(rho, pot, prior, lam)
            records.append(rec)
            click.echo(f"lambda={lam:g}: gap_m={rec['gap_m']:.2e} gap_mhat={rec['gap_mhat']:.2e} "
                       f"sup|1-phi-J|={rec['sup_gap_phi']:.2e}"
                       + (" [degenerate prior]" if rec["degenerate"] else ""))
        echo = config_echo(cfg)
        digest = manifest_hash(echo)
        write_json(out / "equivalence.json", records, digest)
        if not no_figures:
            nonzero = [r for r in records if r["lambda"] > 0]
            if nonzero:
                figures.plot_equivalence_report(nonzero, out / "equivalence.png",
                                                f"fixed-point equivalence: {cfg.noise}/{cfg.prior}",
                                                digest=digest)
        write_manifest(out, echo, time.time() - t0)
        click.echo(f"wrote {out / 'equivalence.json'}")
    _run_command(body)


@main.command("surrogate-compare")
@_with_common
def cmd_surrogate_compare(config_path, out_path, workers, seed, no_figures):
    def body():
        t0 = time.time()
        cfg = _load_cfg(config_path, seed)
        out = _out_dir(out_path)
        nworkers = _resolve_workers(cfg, workers)
        lam = cfg.lam
        rho, pot = build_noise_model(_noise_spec(cfg))
        prior = build_prior_model(cfg)
        sp = solve_both_inits(rho, pot, prior, lam, damping=cfg.replica_damping,
                              tol=cfg.replica_tol, clamp_policy=cfg.clamp,
                              q_constant=cfg.q_constant)
        law = pushforward_law(rho, effective_coupling(rho, pot, lam))
        # sub-threshold solutions have no informative surrogate: both arms are pure noise
        lam_surrogate = (gaussian_surrogate_snr(law, sp.m_star)
                         if sp.m_star > 1e-9 else 0.0)
        click.echo(f"replica m*={sp.m_star:.6f}; surrogate SNR={lam_surrogate:.6f}")
        noise_spec = _noise_spec(cfg)
        prior_spec = _prior_spec(cfg)

        def payloads_for(spec, snr, gamma):
            return [{
                "noise": spec, "prior": prior_spec, "lam": snr, "n": cfg.n,
                "seed": cfg.seed + i, "tau": cfg.tau, "max_iter": cfg.max_iter,
                "tol": cfg.tol, "onsager": cfg.onsager, "init": cfg.init,
                "informative_corr": cfg.informative_corr, "clamp": cfg.clamp,
                "replica_gamma": gamma if cfg.onsager == "fixed_from_replica" else None,
                "record_mse": True,
            } for i in range(cfg.trials)]

        gamma_structured = sp.mhat_star
        gamma_surrogate = lam_surrogate**2 * sp.m_star
        res_s = _fan_out(payloads_for(noise_spec, lam, gamma_structured), nworkers)
        res_g = _fan_out(payloads_for({"kind": "semicircle", "params": {}},
                                      lam_surrogate, gamma_surrogate), nworkers)

        def mean_trajectory(results):
            hists = [r["mse_history"] for r in results if r["mse_history"]]
            if not hists:
                return np.empty(0)
            length = max(len(h) for h in hists)
            padded = np.array([h + [h[-1]] * (length - len(h)) for h in hists])
            return padded.mean(axis=0)

        traj_s, traj_g = mean_trajectory(res_s), mean_trajectory(res_g)
        length = max(traj_s.size, traj_g.size)
        def pad(tr):
            return np.concatenate([tr, np.full(length - tr.size, tr[-1] if tr.size else np.nan)])
        traj_s, traj_g = pad(traj_s), pad(traj_g)
        echo = config_echo(cfg)
        digest = manifest_hash(echo)
        write_csv(out / "surrogate_trajectories.csv",
                  ["t", "mse_structured_mean", "mse_surrogate_mean"],
                  [[t, traj_s[t], traj_g[t]] for t in range(length)], digest)
        finals = [[r["seed"], r["mse_spike"], g["mse_spike"]] for r, g in zip(res_s, res_g)]
        write_csv(out / "surrogate_finals.csv",
                  ["seed", "mse_structured", "mse_surrogate"], finals, digest)
        replica_mmse = 1.0 - sp.m_star**2
        if not no_figures:
            figures.plot_surrogate_trajectories(traj_s, traj_g, replica_mmse,
                                                out / "surrogate_compare.png",
                                                f"{cfg.noise} vs gaussian surrogate, "
                                                f"lambda={lam:g}", digest=digest)
        write_manifest(out, echo, time.time() - t0,
                       extra={"surrogate_snr": lam_surrogate, "replica_mmse": replica_mmse,
                              "final_gap": abs(float(traj_s[-1]) - float(traj_g[-1]))})
        click.echo(f"final mean MSE: structured={traj_s[-1]:.5f} surrogate={traj_g[-1]:.5f} "
                   f"replica={replica_mmse:.5f}")
    _run_command(body)


@main.command("spectrum-ingest")
@click.argument("spectrum_path", type=click.Path(exists=False))
@click.option("--outliers", type=int, default=None, help="largest-|.| eigenvalues to drop")
@_with_common
def cmd_spectrum_ingest(spectrum_path, outliers, config_path, out_path, workers, seed, no_figures):
    def body():
        t0 = time.time()
        cfg = _load_cfg(config_path, seed)
        out = _out_dir(out_path)
        n_out = cfg.outliers if outliers is None else outliers
        values = _load_spectrum(spectrum_path)
        record, rho_raw = ingest_empirical_spectrum(values, n_out)
        rho = standardize(rho_raw)
        pot = potential_derivative_from_density(rho)
        prior = build_prior_model(cfg)
        echo = config_echo(cfg)
        echo["spectrum_file"] = str(spectrum_path)
        echo["outliers"] = n_out
        digest = manifest_hash(echo)
        write_csv(out / "standardized_spectrum.csv", ["eigenvalue"],
                  [[v] for v in record.eigenvalues], digest)
        export_density_csv(rho, out / "smoothed_density.csv")
        grid = rho.nodes[::4]
        dv_table = np.column_stack([grid, np.asarray(pot.dv(grid), dtype=float)])
        write_csv(out / "potential_derivative.csv", ["x", "dv"],
                  dv_table.tolist(), digest)
        coupling = effective_coupling(rho, pot, cfg.lam)
        j_table = np.column_stack([grid, np.asarray(coupling.j(grid), dtype=float)])
        write_csv(out / "coupling.csv", ["x", "j"], j_table.tolist(), digest)
        curve = phase_curve(rho, pot, prior, cfg.lambda_grid,
                            damping=cfg.replica_damping, tol=cfg.replica_tol,
                            clamp_policy=cfg.clamp, q_constant=cfg.q_constant)
        curve.write_csv(out / "phase_curve.csv", header_lines=[f"# manifest={digest}"])
        # universality is conjectural for real spectra: report, do not assert
        report = replica_equivalence_check(rho, pot, prior, cfg.lam) if cfg.lam > 0 else {}
        write_json(out / "theory_report.json",
                   {"removed_outliers": record.removed_outliers,
                    "center_shift": record.shift, "scale": record.scale,
                    "equivalence_at_lambda": report}, digest)
        if not no_figures:
            figures.plot_ingested_spectrum(record, rho, dv_table, j_table,
                                           out / "spectrum_ingest.png",
                                           f"ingested spectrum ({record.eigenvalues.size} eigenvalues)",
                                           digest=digest)
        write_manifest(out, echo, time.time() - t0)
        click.echo(f"wrote {out / 'phase_curve.csv'} (+ spectrum tables)")
    _run_command(body)


if __name__ == "__main__":
    main()
