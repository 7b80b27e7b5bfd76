"""Ensemble estimators for the diffusion postulates.

Everything here is a read-only pass over a TrajectoryEnsemble:
conditional forward/backward drifts, the time-symmetric second
difference (mean acceleration), conditional quadratic variation
(diffusion coefficient), the conditional velocity-score average
(osmotic cancellation), energy-drift fits and two-sample distribution
distances. Estimates are binned on the conditioning variable with
equal-count bins; bins below ``min_count`` are flagged and excluded
from pass/fail use.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import ks_2samp

from .errors import GridError, ParameterError
from .models import OscillatorParams, energy

DEFAULT_BINS = 20
MIN_COUNT = 200


@dataclass
class ConditionalEstimate:
    """Binned conditional statistics of one observable.

    mean is the per-bin estimate, variance the spread of the per-sample
    values entering it, stderr = sqrt(variance / count). valid flags
    bins meeting the minimum-count requirement.
    """

    bin_edges: np.ndarray
    centers: np.ndarray
    counts: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    stderr: np.ndarray
    delta: float
    valid: np.ndarray

    def central(self, density_fraction=0.8):
        """valid-bin mask restricted to the central density quantiles,
        turning-point / edge bins excluded."""
        total = self.counts.sum()
        cum = np.cumsum(self.counts)
        lo_cut = (1.0 - density_fraction) / 2.0 * total
        hi_cut = (1.0 + density_fraction) / 2.0 * total
        inner = (cum - self.counts / 2.0 > lo_cut) & (cum - self.counts / 2.0 < hi_cut)
        inner[0] = inner[-1] = False
        return inner & self.valid


def _quantile_edges(sample, bins):
    edges = np.quantile(sample, np.linspace(0.0, 1.0, bins + 1))
    edges[0] -= 1e-12 * max(1.0, abs(edges[0]))
    edges[-1] += 1e-12 * max(1.0, abs(edges[-1]))
    if np.any(np.diff(edges) <= 0):
        edges = np.linspace(sample.min(), sample.max() + 1e-12, bins + 1)
    return edges


def _binned_mean(cond, values, bins, min_count, delta):
    cond = np.asarray(cond, dtype=float)
    values = np.asarray(values, dtype=float)
    edges = _quantile_edges(cond, bins) if np.isscalar(bins) else np.asarray(bins)
    nb = len(edges) - 1
    idx = np.clip(np.digitize(cond, edges) - 1, 0, nb - 1)
    counts = np.bincount(idx, minlength=nb).astype(float)
    sums = np.bincount(idx, weights=values, minlength=nb)
    csum = np.bincount(idx, weights=cond, minlength=nb)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = sums / counts
        centers = csum / counts
        sq = np.bincount(idx, weights=(values - mean[idx]) ** 2, minlength=nb)
        variance = sq / np.maximum(counts - 1.0, 1.0)
        stderr = np.sqrt(variance / np.maximum(counts, 1.0))
    valid = counts >= min_count
    return ConditionalEstimate(bin_edges=edges, centers=centers, counts=counts,
                               mean=mean, variance=variance, stderr=stderr,
                               delta=delta, valid=valid), idx


def _lag_frames(ens, t, delta):
    it = ens.frame_index(t)
    k = int(round(delta / ens.frame_dt))
    if k < 1 or abs(k * ens.frame_dt - delta) > 1e-9 * max(delta, 1.0):
        raise GridError(f"lag {delta} is not a positive multiple of the frame "
                        f"spacing {ens.frame_dt}")
    return it, k


def _component_paths(ens, component):
    return ens.component(component)


def forward_drift(ens, component, t, delta, bins=DEFAULT_BINS,
                  min_count=MIN_COUNT, select=None):
    """Per-bin mean of (x(t+delta) - x(t)) / delta conditioned on x(t)."""
    x = _component_paths(ens, component)
    it, k = _lag_frames(ens, t, delta)
    if it + k >= ens.frames:
        raise GridError("t + delta beyond the stored horizon")
    if select is not None:
        x = x[select]
    vals = (x[:, it + k] - x[:, it]) / delta
    est, _ = _binned_mean(x[:, it], vals, bins, min_count, delta)
    return est


def backward_drift(ens, component, t, delta, bins=DEFAULT_BINS,
                   min_count=MIN_COUNT, select=None):
    """Per-bin mean of (x(t) - x(t-delta)) / delta conditioned on x(t).

    The first delta of the ensemble cannot be used (t - delta >= t0).
    """
    x = _component_paths(ens, component)
    it, k = _lag_frames(ens, t, delta)
    if it - k < 0:
        raise GridError("t - delta before the stored origin")
    if select is not None:
        x = x[select]
    vals = (x[:, it] - x[:, it - k]) / delta
    est, _ = _binned_mean(x[:, it], vals, bins, min_count, delta)
    return est


def mean_acceleration(ens, t, delta, bins=DEFAULT_BINS, min_count=MIN_COUNT,
                      component=0, select=None):
    """Time-symmetric second difference conditioned on the position:
    per-bin mean of (x(t+d) - 2 x(t) + x(t-d)) / d^2.

    For a phase-space process started on an energy shell with uniform
    phase this estimates the time-symmetric mean acceleration, whose
    target is the classical force per unit mass.
    """
    x = _component_paths(ens, component)
    it, k = _lag_frames(ens, t, delta)
    if it - k < 0 or it + k >= ens.frames:
        raise GridError("t +- delta beyond the stored range")
    if select is not None:
        x = x[select]
    vals = (x[:, it + k] - 2.0 * x[:, it] + x[:, it - k]) / delta**2
    est, _ = _binned_mean(x[:, it], vals, bins, min_count, delta)
    return est


def diffusion_coefficient(ens, component, t, delta, bins=DEFAULT_BINS,
                          min_count=MIN_COUNT, select=None):
    """Per-bin conditional variance of the forward increment over delta.

    For a diffusion with state-independent noise amplitude s this
    estimates s^2; for smooth (finite-variation) paths it vanishes
    linearly in delta.
    """
    x = _component_paths(ens, component)
    it, k = _lag_frames(ens, t, delta)
    if it + k >= ens.frames:
        raise GridError("t + delta beyond the stored horizon")
    if select is not None:
        x = x[select]
    inc = x[:, it + k] - x[:, it]
    cond = x[:, it]
    est, idx = _binned_mean(cond, inc, bins, min_count, delta)
    nb = est.counts.size
    vals = (inc - est.mean[idx]) ** 2 / delta
    with np.errstate(invalid="ignore", divide="ignore"):
        vmean = np.bincount(idx, weights=vals, minlength=nb) / np.maximum(est.counts, 1.0)
        vsq = np.bincount(idx, weights=(vals - vmean[idx]) ** 2, minlength=nb)
        vvar = vsq / np.maximum(est.counts - 1.0, 1.0)
    est.mean = vmean * est.counts / np.maximum(est.counts - 1.0, 1.0)
    est.variance = vvar
    est.stderr = np.sqrt(vvar / np.maximum(est.counts, 1.0))
    return est


def _kde_score_mean(v, bandwidth=None):
    """Mean over samples of d/dv log rho_hat(v) for a Gaussian KDE."""
    v = np.asarray(v, dtype=float)
    n = v.size
    if bandwidth is None:
        bandwidth = 1.06 * np.std(v) * n ** (-0.2)
    z = (v[:, None] - v[None, :]) / bandwidth
    kern = np.exp(-0.5 * z * z)
    dens = kern.sum(axis=1)
    slope = -(z * kern).sum(axis=1) / bandwidth
    return float(np.mean(slope / dens)), bandwidth


def osmotic_term_check(ens, t, bins=DEFAULT_BINS, min_count=MIN_COUNT,
                       n_splits=8, bandwidth=None, x_component=0, v_component=1,
                       select=None):
    """Per-position-bin estimate of E[ d/dv log rho(v | x) ].

    The conditional score integrates to zero for any density with full
    support, which is the cancellation that turns the phase-space mean
    acceleration into the classical force after v-marginalization; a
    truncated v-support produces a boundary term and a nonzero value.

    The standard error comes from n_splits disjoint sub-ensembles
    (kernel-density scores of samples sharing one KDE are correlated,
    so a per-sample stderr would be too small).
    """
    states = ens.states_at(t)
    if select is not None:
        states = states[select]
    x = states[:, x_component]
    v = states[:, v_component]
    edges = _quantile_edges(x, bins) if np.isscalar(bins) else np.asarray(bins)
    nb = len(edges) - 1
    idx = np.clip(np.digitize(x, edges) - 1, 0, nb - 1)
    counts = np.bincount(idx, minlength=nb).astype(float)
    mean = np.full(nb, np.nan)
    variance = np.full(nb, np.nan)
    stderr = np.full(nb, np.nan)
    centers = np.full(nb, np.nan)
    bws = np.full(nb, np.nan)
    for b in range(nb):
        sel = np.flatnonzero(idx == b)
        if sel.size < max(min_count, 2 * n_splits):
            continue
        centers[b] = x[sel].mean()
        parts = np.array_split(sel, n_splits)
        vals = []
        for part in parts:
            sc, bw = _kde_score_mean(v[part], bandwidth)
            vals.append(sc)
            bws[b] = bw
        vals = np.asarray(vals)
        mean[b] = vals.mean()
        variance[b] = vals.var(ddof=1)
        stderr[b] = np.sqrt(variance[b] / n_splits)
    est = ConditionalEstimate(bin_edges=edges, centers=centers, counts=counts,
                              mean=mean, variance=variance, stderr=stderr,
                              delta=0.0, valid=counts >= min_count)
    est.bandwidth = bws
    return est


def energy_window(ens, params: OscillatorParams, fit_frac=0.2, horizon=None):
    """Energy drift and spread of a forced-oscillator ensemble.

    Fits the ensemble-mean energy slope (target (eps w)^2 m / 2) and the
    early-window sqrt-t growth coefficient of the energy spread (target
    eps w sqrt(m E0)), and reports the relative energy dispersal at the
    averaging horizon t = 1/eps.
    """
    x = ens.component(0)
    v = ens.component(1)
    e_paths = energy(x, v, params.m, params)
    times = ens.times - ens.t0
    e_mean = e_paths.mean(axis=0)
    e_var = e_paths.var(axis=0, ddof=1)
    e0 = e_mean[0]

    slope = np.polyfit(times, e_mean, 1)[0] if times[-1] > 0 else 0.0
    t_fit = fit_frac * times[-1]
    sel = (times > 0) & (times <= max(t_fit, times[min(2, len(times) - 1)]))
    if sel.any():
        coeff_sq = float(np.sum(e_var[sel] * times[sel]) / np.sum(times[sel] ** 2))
        std_coeff = np.sqrt(max(coeff_sq, 0.0))
    else:
        std_coeff = 0.0

    eps_omega = params.eps * params.omega
    pred_slope = 0.5 * params.m * eps_omega**2
    pred_std_coeff = eps_omega * np.sqrt(params.m * e0)

    if horizon is None:
        horizon = 1.0 / params.eps if params.eps > 0 else times[-1]
    ih = int(np.clip(np.searchsorted(times, horizon), 0, len(times) - 1))
    delta_e = abs(e_mean[ih] - e0) + np.sqrt(e_var[ih])

    return {
        "e0": float(e0),
        "slope_measured": float(slope),
        "slope_predicted": float(pred_slope),
        "std_coeff_measured": float(std_coeff),
        "std_coeff_predicted": float(pred_std_coeff),
        "horizon": float(times[ih] + ens.t0),
        "delta_e_fraction_at_horizon": float(delta_e / e0) if e0 else float("nan"),
    }


def distribution_distance(ens_a, ens_b, observable, t):
    """Two-sample Kolmogorov-Smirnov statistic of an observable at time t.

    `observable` is a component name/index or a callable mapping the
    (n, d) state block to one value per trajectory.
    """
    def extract(ens):
        states = ens.states_at(t)
        if callable(observable):
            return np.asarray(observable(states), dtype=float)
        if isinstance(observable, str):
            return states[:, list(ens.labels).index(observable)]
        return states[:, observable]

    a, b = extract(ens_a), extract(ens_b)
    if a.size < 2 or b.size < 2:
        raise ParameterError("need at least two samples per ensemble")
    return float(ks_2samp(a, b).statistic)
