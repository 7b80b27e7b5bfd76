"""Batch front-end: experiment configs, pipelines, CSV/JSON/SVG artifacts.

Config files are flat ``section.key = value`` lines (diff-friendly; '#'
starts a comment). Subcommands: simulate, verify, average, action,
spectrum. Every run is fully determined by (config, seed): CSV bytes
are reproducible across repeats and thread counts, timestamps are
confined to the JSON meta block.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__, averaging, coords, models, noise, sde, verify
from .errors import ConfigError, NelsonLabError
from .plotting import emit_plot

TWO_PI = 2.0 * np.pi
SCHEMA = 1


# --------------------------------------------------------------------------
# config
# --------------------------------------------------------------------------

def parse_config_text(text):
    """Flat dotted-key config text -> dict of raw string values."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected key = value, got {raw!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def _get(cfg, key, cast, default=None, required=False):
    if key not in cfg or cfg[key] == "":
        if required:
            raise ConfigError(key, "missing required value")
        return default
    raw = cfg[key]
    try:
        if cast is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return cast(raw)
    except (TypeError, ValueError):
        raise ConfigError(key, f"cannot parse {raw!r} as {cast.__name__}") from None


class ExperimentConfig:
    """Validated experiment description (model, noise, run, estimators, output)."""

    MODELS = ("harmonic", "harmonic_colored", "perturbed", "general")

    def __init__(self, mapping):
        self.raw = dict(mapping)
        cfg = self.raw
        self.model = _get(cfg, "model", str, required=True)
        if self.model not in self.MODELS:
            raise ConfigError("model", f"must be one of {self.MODELS}")
        self.m = _get(cfg, "params.m", float, 1.0)
        self.omega = _get(cfg, "params.omega", float, 1.0)
        hbar = _get(cfg, "params.hbar", float)
        eps = _get(cfg, "params.eps", float)
        nelson = _get(cfg, "params.nelson_scaling", bool, False)
        if nelson == (eps is not None):
            raise ConfigError("params.eps",
                              "set exactly one of (params.hbar with "
                              "params.nelson_scaling) or an explicit params.eps")
        self.hbar = hbar
        self.eps = eps
        self.nelson_scaling = nelson
        self.eta = _get(cfg, "params.eta", float, 0.0)
        self.potential = _get(cfg, "params.potential", str,
                              "quartic" if self.model in ("perturbed", "general") else "harmonic")
        self.e0 = _get(cfg, "params.e0", float, 0.5)

        self.noise_kind = _get(cfg, "noise.kind", str, "powerlaw")
        self.noise_level = cfg.get("noise.level", "auto")
        self.noise_cutoff = _get(cfg, "noise.cutoff", float, 10.0 * self.omega)
        self.noise_resolution = _get(cfg, "noise.resolution", float, self.omega / 100.0)
        self.noise_table = _get(cfg, "noise.table", str)

        self.dt = _get(cfg, "run.dt", float, TWO_PI / self.omega / 1000.0)
        self.steps = _get(cfg, "run.steps", int, 2000)
        self.n_traj = _get(cfg, "run.n_traj", int, 1000)
        self.seed = _get(cfg, "run.seed", int, 2024)
        self.stride = _get(cfg, "run.stride", int, 1)
        self.horizon_c = _get(cfg, "run.horizon_c", float, 1.0)

        self.est_delta_steps = _get(cfg, "estimators.delta_steps", int, 10)
        self.est_bins = _get(cfg, "estimators.bins", int, 20)
        self.est_min_count = _get(cfg, "estimators.min_count", int, 200)
        self.est_fidelity = _get(cfg, "estimators.averaging_fidelity", bool,
                                 self.model == "harmonic")

        self.out_dir = _get(cfg, "output.dir", str, "out")
        self.formats = tuple(f.strip() for f in
                             cfg.get("output.formats", "csv,json").split(",") if f.strip())
        for f in self.formats:
            if f not in ("csv", "json", "svg"):
                raise ConfigError("output.formats", f"unknown format {f!r}")

        if self.dt <= 0 or self.steps < 1 or self.n_traj < 1:
            raise ConfigError("run", "dt, steps and n_traj must be positive")
        if self.e0 <= 0:
            raise ConfigError("params.e0", "initial energy must be above the well bottom")
        if self.est_fidelity and self.model == "harmonic":
            horizon = self.horizon_c / self.params().eps
            if horizon > self.dt * self.steps * 50:
                raise ConfigError("run.steps",
                                  "averaging-fidelity check requested but the run "
                                  f"cannot reach the horizon {horizon:.3g}")

    def params(self):
        return models.OscillatorParams(m=self.m, omega=self.omega, hbar=self.hbar,
                                       eps=self.eps, nelson_scaling=self.nelson_scaling)

    def hbar_eff(self):
        """hbar implied by the noise scale (m eps^2 / 2)."""
        p = self.params()
        return 0.5 * p.m * p.eps**2

    def potential_spec(self):
        name = self.potential
        if name in ("harmonic",):
            return models.harmonic_potential(self.m, self.omega)
        if name in ("quartic", "pendulum"):
            return models.catalog_potential(name)
        if name.endswith(".csv"):
            tab = np.loadtxt(name, delimiter=",", ndmin=2)
            return models.tabulated_potential(tab[:, 0], tab[:, 1], name=os.path.basename(name))
        raise ConfigError("params.potential", f"unknown potential {name!r}")

    def spectrum(self):
        if self.noise_kind == "tabulated":
            if not self.noise_table:
                raise ConfigError("noise.table", "tabulated spectrum needs a CSV table")
            tab = np.loadtxt(self.noise_table, delimiter=",", ndmin=2)
            return noise.NoiseSpectrum(kind="tabulated", cutoff=self.noise_cutoff,
                                       resolution=self.noise_resolution,
                                       table=(tab[:, 0], tab[:, 1]))
        if self.noise_kind == "powerlaw":
            if self.noise_level == "auto":
                level = 4.0 * np.pi * self.hbar_eff() / self.m
            else:
                level = _get(self.raw, "noise.level", float, required=True)
            return noise.NoiseSpectrum(kind="powerlaw", level=level,
                                       cutoff=self.noise_cutoff,
                                       resolution=self.noise_resolution)
        raise ConfigError("noise.kind", f"unsupported kind {self.noise_kind!r}")


def load_config(path, overrides=()):
    with open(path) as fh:
        mapping = parse_config_text(fh.read())
    for item in overrides:
        if "=" not in item:
            raise ConfigError("--set", f"expected KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        mapping[key.strip()] = val.strip()
    return ExperimentConfig(mapping)


# --------------------------------------------------------------------------
# artifact helpers
# --------------------------------------------------------------------------

def _write_table(path, columns, rows):
    header = ",".join(columns)
    arr = np.asarray(rows, dtype=float)
    np.savetxt(path, arr.reshape(-1, len(columns)), fmt="%.17g",
               delimiter=",", header=header, comments="")


def _estimate_table(path, est, target_fn):
    centers = est.centers
    target = np.where(np.isfinite(centers), target_fn(np.nan_to_num(centers)), np.nan)
    ok = _passes(est, target)
    rows = np.column_stack([centers, est.counts, est.mean, est.stderr, target,
                            ok.astype(float)])
    _write_table(path, ["bin_center", "count", "estimate", "stderr", "target", "pass"],
                 rows)
    return ok


def _passes(est, target, rel=0.10, nsigma=3.0):
    """Per-bin pass flag: within rel of the target or nsigma stderr of it."""
    with np.errstate(invalid="ignore"):
        err = np.abs(est.mean - target)
        tol = np.maximum(rel * np.abs(target), nsigma * est.stderr)
        return np.where(np.isfinite(err), err <= tol, False)


def _summarize(est, target_fn, rel=0.10, density_fraction=0.8):
    mask = est.central(density_fraction)
    target = target_fn(np.nan_to_num(est.centers))
    ok = _passes(est, target, rel=rel)
    return bool(np.all(ok[mask])) if mask.any() else False


def _emit(out_dir, name, est, target_fn, formats, summary, key, rel=0.10):
    path = os.path.join(out_dir, f"{name}.csv")
    _estimate_table(path, est, target_fn)
    if "svg" in formats:
        emit_plot(path, os.path.join(out_dir, f"{name}.svg"), title=name)
    summary[key] = {"pass": _summarize(est, target_fn, rel=rel), "table": f"{name}.csv"}


# --------------------------------------------------------------------------
# model assembly
# --------------------------------------------------------------------------

def build_system(cfg: ExperimentConfig):
    """(system, initial sampler, oscillator params, total potential)."""
    p = cfg.params()
    if cfg.model == "harmonic":
        system = models.harmonic_forced_system(p)
        pot_total = models.harmonic_potential(p.m, p.omega)
        sampler = models.shell_phase_sampler(p, cfg.e0)
    elif cfg.model == "harmonic_colored":
        system = models.harmonic_colored_system(p, cfg.spectrum())
        pot_total = models.harmonic_potential(p.m, p.omega)
        sampler = models.shell_phase_sampler(p, cfg.e0)
    elif cfg.model == "perturbed":
        pert = cfg.potential_spec()
        pert = models.PotentialSpec(U=pert.U, dU=pert.dU, domain=pert.domain,
                                    eta=cfg.eta, name=pert.name, coeffs=pert.coeffs)
        system = models.perturbed_oscillator_system(p, pert)
        pot_total = models.total_potential(p, pert)
        chart = coords.build_chart(pot_total, p.m, cfg.e0)
        sampler = coords.uniform_orbit_sampler(chart)
    else:
        pot_total = cfg.potential_spec()
        chart = coords.build_chart(pot_total, cfg.m, cfg.e0)
        coeffs = averaging.compute_averaged_coefficients(chart)
        eps7 = averaging.nelson_noise_choice(coeffs, cfg.hbar_eff(), cfg.m)
        system = models.general_potential_system(cfg.m, pot_total, eps7)
        sampler = coords.uniform_orbit_sampler(chart, momentum=True)
    return system, sampler, p, pot_total


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_simulate(cfg, out_dir, threads):
    system, sampler, p, _pot = build_system(cfg)
    method = "exact" if cfg.model == "harmonic" else "em"
    ens = sde.run_ensemble(system, sampler, cfg.n_traj, cfg.dt, cfg.steps,
                           master_seed=cfg.seed, stride=cfg.stride,
                           threads=threads, method=method)
    ens.save(out_dir)
    return {"ensembles": {"main": {"n_traj": cfg.n_traj, "steps": cfg.steps,
                                   "method": method}}}


def cmd_verify(cfg, out_dir, threads):
    system, sampler, p, pot_total = build_system(cfg)
    formats = cfg.formats
    summary = {}
    mass = p.m
    period = TWO_PI / p.omega
    delta = cfg.est_delta_steps * cfg.dt
    bins, min_count = cfg.est_bins, cfg.est_min_count
    accel_target = lambda x: -pot_total.dU(x) / mass
    method = "exact" if cfg.model == "harmonic" else "em"

    # mean acceleration + drift symmetry on a short stationary window
    steps_est = 3 * cfg.est_delta_steps
    ens = sde.run_ensemble(system, sampler, cfg.n_traj, cfg.dt, steps_est,
                           master_seed=cfg.seed, threads=threads, method=method)
    t_mid = 2 * cfg.est_delta_steps * cfg.dt
    acc = verify.mean_acceleration(ens, t_mid, delta, bins=bins, min_count=min_count)
    _emit(out_dir, "mean_acceleration", acc, accel_target, formats, summary,
          "newton_nelson")
    fwd = verify.forward_drift(ens, 0, t_mid, delta, bins=bins, min_count=min_count)
    bwd = verify.backward_drift(ens, 0, t_mid, delta, bins=bins, min_count=min_count)
    dsym = np.abs(fwd.mean - bwd.mean) <= 3.0 * np.hypot(fwd.stderr, bwd.stderr)
    mask = fwd.central()
    summary["drift_time_symmetry"] = {"pass": bool(np.all(dsym[mask]))}
    _estimate_table(os.path.join(out_dir, "forward_drift.csv"), fwd,
                    lambda x: np.interp(x, bwd.centers[np.isfinite(bwd.centers)],
                                        bwd.mean[np.isfinite(bwd.centers)]))

    # reconstructed position process: first-postulate diffusion and drift
    dt_rec = period / 10_000.0
    rec = averaging.reconstructed_x_system(p, cfg.e0, pot=pot_total)
    rec_samp = averaging.shell_branch_sampler(p, cfg.e0, pot=pot_total)
    ens_rec = sde.run_ensemble(rec, rec_samp, cfg.n_traj, dt_rec, 40,
                               master_seed=cfg.seed + 1, threads=threads)
    target_d = p.eps**2 / 2.0
    diff = verify.diffusion_coefficient(ens_rec, 0, 20 * dt_rec, dt_rec,
                                        bins=bins, min_count=min_count)
    _emit(out_dir, "position_diffusion", diff, lambda x: np.full_like(x, target_d),
          formats, summary, "first_postulate_diffusion", rel=0.05)
    plus = ens_rec.component("branch")[:, ens_rec.frame_index(20 * dt_rec)] > 0
    drift_p = verify.forward_drift(ens_rec, 0, 20 * dt_rec, dt_rec, bins=bins,
                                   min_count=min_count // 2, select=plus)
    vt = lambda x: models.classical_velocity(x, cfg.e0, mass, pot_total, branch=1)
    _emit(out_dir, "position_drift", drift_p, vt, formats, summary,
          "first_postulate_drift")

    # energy drift window
    if cfg.model in ("harmonic", "harmonic_colored"):
        stride = max(1, cfg.steps // 200)
        while cfg.steps % stride:
            stride -= 1
        ens_e = sde.run_ensemble(system, sampler, cfg.n_traj, cfg.dt, cfg.steps,
                                 master_seed=cfg.seed + 2, stride=stride,
                                 threads=threads, method=method)
        win = verify.energy_window(ens_e, p)
        ok_slope = abs(win["slope_measured"] / win["slope_predicted"] - 1.0) <= 0.05 \
            if win["slope_predicted"] else True
        ok_std = abs(win["std_coeff_measured"] / win["std_coeff_predicted"] - 1.0) <= 0.10 \
            if win["std_coeff_predicted"] else True
        summary["energy_drift"] = {"pass": bool(ok_slope and ok_std), **win}

        # osmotic cancellation at t = 5 T
        steps_osm = int(round(5 * period / cfg.dt))
        ens_o = sde.run_ensemble(system, sampler, cfg.n_traj, cfg.dt, steps_osm,
                                 master_seed=cfg.seed + 3, stride=steps_osm,
                                 threads=threads, method=method)
        osm = verify.osmotic_term_check(ens_o, ens_o.times[-1], bins=bins,
                                        min_count=min_count)
        _emit(out_dir, "osmotic_term", osm, lambda x: np.zeros_like(x), formats,
              summary, "osmotic_cancellation")

    # averaging fidelity at the horizon (harmonic only)
    if cfg.model == "harmonic" and cfg.est_fidelity:
        from scipy.stats import ks_2samp

        horizon = cfg.horizon_c / p.eps
        dt_full = period / 100.0
        steps_full = int(np.ceil(horizon / dt_full))
        r0 = np.sqrt(2.0 * cfg.e0 / (mass * p.omega**2))
        full = sde.run_ensemble(system, sampler, cfg.n_traj, dt_full, steps_full,
                                master_seed=cfg.seed + 4, stride=steps_full,
                                threads=threads, method="exact")
        avg_sys = averaging.averaged_harmonic_system(p.eps, r0=r0)
        avg = sde.run_ensemble(avg_sys, models.rphi_sampler(r0), cfg.n_traj,
                               dt_full, steps_full, master_seed=cfg.seed + 5,
                               stride=steps_full, threads=threads)
        r_full = np.hypot(full.paths[:, -1, 0], full.paths[:, -1, 1] / p.omega)
        r_avg = avg.paths[:, -1, 0]
        ks = float(ks_2samp(r_full, r_avg).statistic)
        summary["averaging_fidelity"] = {"pass": bool(ks < 0.02), "ks": ks,
                                         "horizon": horizon}
    return summary


def cmd_average(cfg, out_dir, threads):
    pot = cfg.potential_spec()
    try:
        energies = [float(v) for v in
                    cfg.raw.get("average.energies", str(cfg.e0)).split(",")]
    except ValueError:
        raise ConfigError("average.energies", "expected a comma list of floats") from None
    rows = []
    hbar = cfg.hbar_eff()
    for e in energies:
        chart = coords.build_chart(pot, cfg.m, e)
        co = averaging.compute_averaged_coefficients(chart)
        eps7 = averaging.nelson_noise_choice(co, hbar, cfg.m)
        rows.append([e, chart.T, chart.omega, co.F, co.D[0, 0], co.D[0, 1],
                     co.D[1, 1], co.G, eps7])
    _write_table(os.path.join(out_dir, "averaged_coefficients.csv"),
                 ["E", "T", "omega", "F", "D11", "D12", "D22", "G", "eps7_choice"],
                 rows)
    return {"averaged": {"energies": energies, "potential": pot.name,
                         "h_frac": 1e-3, "quadrature_nodes": 96}}


def cmd_action(cfg, out_dir, threads):
    pot = cfg.potential_spec()
    e_min = _get(cfg.raw, "action.e_min", float, cfg.e0 / 4.0)
    e_max = _get(cfg.raw, "action.e_max", float, cfg.e0 * 4.0)
    n = _get(cfg.raw, "action.n", int, 9)
    rows = []
    for e in np.linspace(e_min, e_max, n):
        chart = coords.build_chart(pot, cfg.m, e)
        rows.append([e, chart.T, chart.I, chart.omega])
    _write_table(os.path.join(out_dir, "action_sweep.csv"),
                 ["E", "T", "I", "omega"], rows)
    return {"action": {"e_min": e_min, "e_max": e_max, "n": n, "potential": pot.name}}


def cmd_spectrum(cfg, out_dir, threads):
    spec = cfg.spectrum()
    n_real = _get(cfg.raw, "spectrum.realizations", int, 400)
    n_samp = _get(cfg.raw, "spectrum.samples", int, 4096)
    dt = _get(cfg.raw, "spectrum.dt", float, 0.5 * np.pi / spec.cutoff)
    from .rng import trajectory_stream
    streams = [trajectory_stream(cfg.seed, i) for i in range(n_real)]
    paths = noise.synthesize_colored_batch(spec, dt, n_samp, streams)
    omegas, shat = noise.mean_periodogram(paths, dt)
    band = (omegas >= spec.resolution) & (omegas <= spec.cutoff)
    target = spec.density(omegas)
    rows = np.column_stack([omegas[band], target[band], shat[band]])
    _write_table(os.path.join(out_dir, "spectrum.csv"),
                 ["omega", "S_target", "S_estimate"], rows)
    strong = band & (target > 0.05 * target.max())
    rel = np.abs(shat[strong] / target[strong] - 1.0)
    var_target = noise.lag0_covariance(spec)
    var_meas = float(paths.var())
    return {"spectrum": {"max_rel_dev_on_band": float(rel.max()),
                         "pass": bool(rel.max() < 0.25),
                         "variance_measured": var_meas,
                         "variance_target": var_target,
                         "realizations": n_real}}


COMMANDS = {
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "average": cmd_average,
    "action": cmd_action,
    "spectrum": cmd_spectrum,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="nelsonlab",
        description="Randomly forced oscillators: simulate, average, verify.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None)
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--format", dest="formats", default=None,
                        help="comma list of csv,json,svg")
        sp.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE")
    args = parser.parse_args(argv)

    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.out is not None:
        overrides.append(f"output.dir={args.out}")
    if args.formats is not None:
        overrides.append(f"output.formats={args.formats}")
    try:
        cfg = load_config(args.config, overrides)
        out_dir = cfg.out_dir
        os.makedirs(out_dir, exist_ok=True)
        result = COMMANDS[args.command](cfg, out_dir, args.threads)
    except NelsonLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    summary = {
        "schema": SCHEMA,
        "command": args.command,
        "results": result,
        "provenance": {
            "seed": cfg.seed,
            "dt": cfg.dt,
            "steps": cfg.steps,
            "n_traj": cfg.n_traj,
            "model": cfg.model,
            "version": __version__,
            "backend": sde.active_backend(),
        },
        "meta": {"timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())},
    }
    if "json" in cfg.formats:
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
    failures = [k for k, v in result.items()
                if isinstance(v, dict) and v.get("pass") is False]
    for key, val in sorted(result.items()):
        if isinstance(val, dict) and "pass" in val:
            print(f"{key}: {'PASS' if val['pass'] else 'FAIL'}")
    print(f"artifacts written to {out_dir}")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
