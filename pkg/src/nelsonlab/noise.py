"""Gaussian forcing processes: white increments and colored synthesis.

Spectral convention
-------------------
Spectra are stored and reported in resonance-normalized units: a
stationary forcing with spectrum ``S`` pumps a unit-mass oscillator of
frequency ``w`` at the mean energy rate ``S(w)/(4 pi)``, matching the
averaged amplitude equations used in :mod:`nelsonlab.averaging`
(``dr = S(w)/(8 pi w^2 r) dt + sqrt(S(w)/(4 pi))/w dW``). In these
units white force noise of amplitude ``a`` (i.e. ``a dW``) has the flat
spectrum ``S = 2 pi a^2``, and the plain Fourier transform of the
autocovariance equals ``S/(2 pi)``. ``estimate_spectrum`` reports in
the same units, so synthesis and estimation round-trip.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import AliasingError, ParameterError, UnsupportedSpectrumError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class NoiseSpectrum:
    """Declarative description of a stationary Gaussian forcing.

    kind
        "white": constant spectral density `level` (use Wiener
        increments directly, not harmonic synthesis).
        "powerlaw": S(w) = level * w^2 up to `cutoff`.
        "tabulated": linear interpolation of `table`, zero outside.
    level
        Spectral density scale; for the quantum-calibrated power law
        this is 4*pi*hbar/m.
    cutoff
        Largest angular frequency retained in synthesis.
    resolution
        Largest admissible spectral grid spacing for synthesis.
    """

    kind: str
    level: float = 0.0
    cutoff: float = 10.0
    resolution: float = 0.01
    table: Optional[tuple] = field(default=None)

    def __post_init__(self):
        if self.kind not in ("white", "powerlaw", "tabulated"):
            raise ParameterError(f"unknown spectrum kind {self.kind!r}")
        if self.level < 0:
            raise ParameterError("spectral level must be non-negative")
        if not (self.cutoff > self.resolution > 0):
            raise ParameterError("need cutoff > resolution > 0")
        if self.kind == "tabulated":
            if self.table is None:
                raise ParameterError("tabulated spectrum needs a table")
            om, sv = self.table
            om = np.asarray(om, dtype=float)
            sv = np.asarray(sv, dtype=float)
            if om.ndim != 1 or om.shape != sv.shape or om.size < 2:
                raise ParameterError("table must be two equal 1-d columns")
            if np.any(np.diff(om) <= 0):
                raise ParameterError("table frequencies must be increasing")
            if np.any(sv < 0):
                raise ParameterError("spectrum values must be non-negative")
            object.__setattr__(self, "table", (om, sv))

    def density(self, omega):
        """S(|omega|), vectorized."""
        om = np.abs(np.asarray(omega, dtype=float))
        if self.kind == "white":
            return np.full_like(om, self.level)
        if self.kind == "powerlaw":
            return np.where(om <= self.cutoff, self.level * om * om, 0.0)
        tom, tsv = self.table
        return np.interp(om, tom, tsv, left=0.0, right=0.0)


def nelson_spectrum(hbar, m, omega=1.0, cutoff_factor=10.0, resolution=None):
    """Power-law spectrum S(w) = (4 pi hbar / m) w^2 with default cutoff 10 w.

    The cutoff only needs to cover the resonant frequency comfortably;
    the quadratic law is not normalizable without one.
    """
    if resolution is None:
        resolution = omega / 100.0
    return NoiseSpectrum(kind="powerlaw", level=4.0 * np.pi * hbar / m,
                         cutoff=cutoff_factor * omega, resolution=resolution)


def notch_spectrum(base: NoiseSpectrum, lo, hi, n_grid=4096):
    """Tabulated copy of `base` with S = 0 on the band [lo, hi]."""
    if not (0 < lo < hi):
        raise ParameterError("need 0 < lo < hi for the notch band")
    grid = np.linspace(0.0, base.cutoff, n_grid)
    grid = np.sort(np.concatenate([grid, [lo * (1 - 1e-9), lo, hi, hi * (1 + 1e-9)]]))
    vals = base.density(grid)
    vals[(grid >= lo) & (grid <= hi)] = 0.0
    return NoiseSpectrum(kind="tabulated", cutoff=base.cutoff,
                         resolution=base.resolution, table=(grid, vals))


def sample_wiener_increments(dt, n, stream):
    """n i.i.d. Gaussian increments of variance dt."""
    if dt <= 0:
        raise ParameterError("dt must be positive")
    if n < 1:
        raise ParameterError("need at least one increment")
    return stream.standard_normal(int(n)) * np.sqrt(dt)


def lag0_covariance(spectrum: NoiseSpectrum, n_grid=20001):
    """Variance of the synthesized forcing: (1/2 pi^2) * int_0^cutoff S dW."""
    om = np.linspace(0.0, spectrum.cutoff, n_grid)
    return np.trapz(spectrum.density(om), om) / (2.0 * np.pi**2)


def _synthesis_grid(spectrum: NoiseSpectrum, dt, n):
    """FFT-aligned harmonic-superposition grid.

    Frequencies sit at multiples of d = 2 pi / (M dt) with d at most
    `resolution`, so the superposition can be evaluated exactly with one
    inverse real FFT. Component amplitude a_k = sqrt(S(w_k) d) / pi puts
    the synthesized process on the package spectral convention.
    """
    if spectrum.kind == "white":
        raise UnsupportedSpectrumError(
            "white noise is driven by Wiener increments, not synthesis")
    if dt <= 0:
        raise ParameterError("dt must be positive")
    if dt >= np.pi / spectrum.cutoff:
        raise AliasingError(
            f"dt={dt} cannot resolve cutoff {spectrum.cutoff}; need dt < pi/cutoff")
    m_min = max(int(n), int(np.ceil(TWO_PI / (spectrum.resolution * dt))))
    M = 1 << int(np.ceil(np.log2(m_min)))
    domega = TWO_PI / (M * dt)
    k_hi = int(np.floor(spectrum.cutoff / domega))
    k_hi = min(k_hi, M // 2)
    ks = np.arange(1, k_hi + 1)
    omegas = ks * domega
    amps = np.sqrt(spectrum.density(omegas) * domega) / np.pi
    return M, ks, omegas, amps


def synthesize_colored_batch(spectrum, dt, n, streams):
    """Zero-mean stationary Gaussian paths, one per stream.

    Harmonic superposition sum_k a_k cos(w_k t + psi_k) with i.i.d.
    uniform phases psi_k drawn from each stream, evaluated via irfft.
    """
    M, ks, _omegas, amps = _synthesis_grid(spectrum, dt, n)
    n = int(n)
    out = np.empty((len(streams), n))
    coeff = np.zeros(M // 2 + 1, dtype=complex)
    for row, stream in enumerate(streams):
        phases = stream.uniform(0.0, TWO_PI, size=ks.size)
        coeff[:] = 0.0
        coeff[ks] = (0.5 * M) * amps * np.exp(1j * phases)
        out[row] = np.fft.irfft(coeff, n=M)[:n]
    return out


def synthesize_colored_noise(spectrum, dt, n, stream):
    """Single synthesized forcing path sampled at t = 0, dt, ..., (n-1) dt."""
    return synthesize_colored_batch(spectrum, dt, n, [stream])[0]


def estimate_spectrum(path, dt):
    """Periodogram of a sampled path in package spectral units.

    Returns (omega_k, S_hat) with the normalization whose ensemble mean
    reproduces the spectrum used for synthesis; white increments
    rescaled by 1/dt give a flat plateau at 2 pi.
    """
    path = np.asarray(path, dtype=float)
    if path.ndim != 1 or path.size < 2:
        raise ParameterError("need a 1-d path of length >= 2")
    n = path.size
    spec = np.fft.rfft(path)
    shat = TWO_PI * dt * np.abs(spec) ** 2 / n
    omegas = TWO_PI * np.arange(shat.size) / (n * dt)
    return omegas, shat


def mean_periodogram(paths, dt):
    """Ensemble-averaged periodogram over rows of `paths`."""
    paths = np.asarray(paths, dtype=float)
    n = paths.shape[1]
    spec = np.fft.rfft(paths, axis=1)
    shat = TWO_PI * dt * np.mean(np.abs(spec) ** 2, axis=0) / n
    omegas = TWO_PI * np.arange(shat.size) / (n * dt)
    return omegas, shat
