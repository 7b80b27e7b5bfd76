"""Physical systems as SDE builders: forced oscillators and general wells."""

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ForbiddenRegionError, ParameterError
from .noise import NoiseSpectrum, synthesize_colored_batch
from .sde import SdeSystem


@dataclass(frozen=True)
class OscillatorParams:
    """Mass, frequency and noise scale of the randomly forced oscillator.

    With ``nelson_scaling`` the velocity-noise scale is pinned to
    eps = sqrt(2 hbar / m), the unique choice under which the averaged
    position process carries diffusion coefficient hbar/m. Without the
    flag an explicit eps must be supplied so experiments can sweep it.
    """

    m: float
    omega: float
    hbar: Optional[float] = None
    eps: Optional[float] = None
    nelson_scaling: bool = False

    def __post_init__(self):
        if self.m <= 0 or self.omega <= 0:
            raise ParameterError("mass and frequency must be positive")
        if self.nelson_scaling:
            if self.hbar is None or self.hbar < 0:
                raise ParameterError("nelson_scaling needs a non-negative hbar")
            eps = float(np.sqrt(2.0 * self.hbar / self.m))
            if self.eps is not None and not np.isclose(self.eps, eps, rtol=1e-12):
                raise ParameterError("explicit eps contradicts nelson_scaling")
            object.__setattr__(self, "eps", eps)
        elif self.eps is None:
            raise ParameterError("give eps explicitly or set nelson_scaling")
        elif self.eps < 0:
            raise ParameterError("eps must be non-negative")


@dataclass(frozen=True)
class PotentialSpec:
    """One-dimensional single-well potential with derivative and domain.

    ``coeffs = (u1, u3, us)`` marks potentials of the form
    U = u1 x^2/2 + u3 x^4/4 + us (1 - cos x), which the compiled
    stepping kernels can evaluate; custom callables run on the generic
    engine. ``eta`` scales the potential when used as a perturbation.
    """

    U: Callable
    dU: Callable
    domain: tuple = (-1e4, 1e4)
    eta: float = 0.0
    base_omega: Optional[float] = None
    name: str = "custom"
    coeffs: Optional[tuple] = None

    def __post_init__(self):
        if self.eta < 0:
            raise ParameterError("eta must be non-negative")
        lo, hi = self.domain
        if not lo < hi:
            raise ParameterError("empty potential domain")


def harmonic_potential(m, omega, halfwidth=1e4):
    return PotentialSpec(
        U=lambda x: 0.5 * m * omega**2 * np.square(x),
        dU=lambda x: m * omega**2 * np.asarray(x, dtype=float),
        domain=(-halfwidth, halfwidth),
        name="harmonic",
        coeffs=(m * omega**2, 0.0, 0.0),
    )


def quartic_potential(halfwidth=1e2):
    # U = x^4 / 4
    return PotentialSpec(
        U=lambda x: 0.25 * np.square(np.square(x)),
        dU=lambda x: np.power(x, 3),
        domain=(-halfwidth, halfwidth),
        name="quartic",
        coeffs=(0.0, 1.0, 0.0),
    )


def pendulum_potential():
    # U = 1 - cos x, librating orbits only
    return PotentialSpec(
        U=lambda x: 1.0 - np.cos(x),
        dU=np.sin,
        domain=(-np.pi + 1e-9, np.pi - 1e-9),
        name="pendulum",
        coeffs=(0.0, 0.0, 1.0),
    )


_CATALOG = {
    "harmonic": harmonic_potential,
    "quartic": quartic_potential,
    "pendulum": pendulum_potential,
}


def catalog_potential(name, **kwargs):
    try:
        builder = _CATALOG[name]
    except KeyError:
        raise ParameterError(f"unknown catalog potential {name!r}") from None
    return builder(**kwargs)


def tabulated_potential(xs, us, name="tabulated"):
    """Cubic-spline potential from sampled (x, U) pairs; derivative from the spline."""
    from scipy.interpolate import CubicSpline

    xs = np.asarray(xs, dtype=float)
    us = np.asarray(us, dtype=float)
    if xs.ndim != 1 or xs.shape != us.shape or xs.size < 4:
        raise ParameterError("need at least 4 (x, U) samples")
    spline = CubicSpline(xs, us)
    dspline = spline.derivative()
    return PotentialSpec(U=spline, dU=dspline, domain=(xs[0], xs[-1]), name=name)


def validate_single_well(pot: PotentialSpec, n_probe=2001):
    """Check dU has exactly one sign change on the domain (single well)."""
    lo, hi = pot.domain
    if not np.isfinite(lo) or not np.isfinite(hi):
        raise ParameterError("potential domain must be finite")
    xs = np.linspace(lo, hi, n_probe)
    sgn = np.sign(pot.dU(xs))
    sgn = sgn[sgn != 0]
    changes = np.count_nonzero(np.diff(sgn) != 0)
    if changes != 1:
        raise ParameterError(
            f"potential {pot.name!r} is not a single well ({changes} slope sign changes)")


# --------------------------------------------------------------------------
# system builders
# --------------------------------------------------------------------------

def _kinetic_drift(inv_mass, accel):
    def drift(state, t):
        out = np.empty_like(state)
        out[..., 0] = state[..., 1] * inv_mass
        out[..., 1] = accel(state[..., 0])
        return out

    return drift


def harmonic_forced_system(p: OscillatorParams) -> SdeSystem:
    """dx = v dt, dv = -w^2 x dt + eps w dW; force noise only."""
    sig = p.eps * p.omega
    w2 = p.omega**2
    gmat = np.array([[0.0], [sig]])
    return SdeSystem(
        dimension=2,
        drift=_kinetic_drift(1.0, lambda x: -w2 * x),
        diffusion=lambda state, t: np.broadcast_to(gmat, state.shape[:-1] + (2, 1)),
        k=1,
        kernel=("kinetic", dict(inv_mass=1.0, b1=w2, b3=0.0, bs=0.0, sigma=sig)),
        labels=("x", "v"),
        name="harmonic",
        params=dict(m=p.m, omega=p.omega, eps=p.eps, hbar=p.hbar,
                    diffusion_matrix=gmat),
    )


def harmonic_colored_system(p: OscillatorParams, spectrum: NoiseSpectrum) -> SdeSystem:
    """dx = v dt, dv = (-w^2 x + xi(t)) dt with synthesized stationary forcing.

    The forcing path is held piecewise constant over each dt (left
    endpoint), consistent with Ito evaluation of the white-noise case.
    """
    if spectrum.kind == "white":
        raise ParameterError("use harmonic_forced_system for white forcing")
    w2 = p.omega**2
    gmat = np.zeros((2, 1))

    def forcing_builder(streams, dt, steps):
        return synthesize_colored_batch(spectrum, dt, steps, streams)

    return SdeSystem(
        dimension=2,
        drift=_kinetic_drift(1.0, lambda x: -w2 * x),
        diffusion=lambda state, t: np.broadcast_to(gmat, state.shape[:-1] + (2, 1)),
        k=1,
        driving="external",
        forcing_builder=forcing_builder,
        forcing_component=1,
        kernel=("kinetic", dict(inv_mass=1.0, b1=w2, b3=0.0, bs=0.0, sigma=0.0)),
        labels=("x", "v"),
        name="harmonic_colored",
        params=dict(m=p.m, omega=p.omega, spectrum_kind=spectrum.kind,
                    spectrum_level=spectrum.level, diffusion_matrix=gmat),
    )


def perturbed_oscillator_system(p: OscillatorParams, pert: PotentialSpec,
                                eta_warn=0.1) -> SdeSystem:
    """Oscillator with force -w^2 x - (eta/m) U'(x) and noise eps w dW."""
    eta = pert.eta
    if eta > eta_warn:
        warnings.warn(f"perturbation eta={eta} above the small-perturbation "
                      f"threshold {eta_warn}", stacklevel=2)
    sig = p.eps * p.omega
    w2 = p.omega**2
    scale = eta / p.m
    gmat = np.array([[0.0], [sig]])
    kernel = None
    if pert.coeffs is not None:
        u1, u3, us = pert.coeffs
        kernel = ("kinetic", dict(inv_mass=1.0, b1=w2 + scale * u1,
                                  b3=scale * u3, bs=scale * us, sigma=sig))
    return SdeSystem(
        dimension=2,
        drift=_kinetic_drift(1.0, lambda x: -w2 * x - scale * pert.dU(x)),
        diffusion=lambda state, t: np.broadcast_to(gmat, state.shape[:-1] + (2, 1)),
        k=1,
        kernel=kernel,
        labels=("x", "v"),
        name="perturbed",
        params=dict(m=p.m, omega=p.omega, eps=p.eps, eta=eta,
                    perturbation=pert.name, diffusion_matrix=gmat),
    )


def general_potential_system(m, pot: PotentialSpec, eps7) -> SdeSystem:
    """dx = p/m dt, dp = -U'(x) dt + eps dW in (x, p) coordinates."""
    if eps7 < 0:
        raise ParameterError("noise scale must be non-negative")
    gmat = np.array([[0.0], [eps7]])
    kernel = None
    if pot.coeffs is not None:
        u1, u3, us = pot.coeffs
        kernel = ("kinetic", dict(inv_mass=1.0 / m, b1=u1, b3=u3, bs=us,
                                  sigma=eps7))
    return SdeSystem(
        dimension=2,
        drift=_kinetic_drift(1.0 / m, lambda x: -pot.dU(x)),
        diffusion=lambda state, t: np.broadcast_to(gmat, state.shape[:-1] + (2, 1)),
        k=1,
        kernel=kernel,
        labels=("x", "p"),
        name=f"general_{pot.name}",
        params=dict(m=m, eps=eps7, potential=pot.name, diffusion_matrix=gmat),
    )


def total_potential(p: OscillatorParams, pert: PotentialSpec) -> PotentialSpec:
    """Harmonic well plus eta-scaled perturbation, as one PotentialSpec."""
    eta = pert.eta
    base = 0.5 * p.m * p.omega**2
    coeffs = None
    if pert.coeffs is not None:
        u1, u3, us = pert.coeffs
        coeffs = (p.m * p.omega**2 + eta * u1, eta * u3, eta * us)
    return PotentialSpec(
        U=lambda x: base * np.square(x) + eta * pert.U(x),
        dU=lambda x: 2.0 * base * np.asarray(x, dtype=float) + eta * pert.dU(x),
        domain=pert.domain,
        base_omega=p.omega,
        name=f"harmonic+{eta}*{pert.name}",
        coeffs=coeffs,
    )


# --------------------------------------------------------------------------
# observables and initial conditions
# --------------------------------------------------------------------------

def energy(x, p_or_v, m, pot_or_params):
    """Total mechanical energy at a phase-space point.

    For OscillatorParams the second argument is the velocity
    (E = m (v^2 + w^2 x^2) / 2); for a PotentialSpec it is the momentum
    (E = p^2/2m + U(x)).
    """
    x = np.asarray(x, dtype=float)
    pv = np.asarray(p_or_v, dtype=float)
    if isinstance(pot_or_params, OscillatorParams):
        w = pot_or_params.omega
        return 0.5 * pot_or_params.m * (pv**2 + w**2 * x**2)
    return pv**2 / (2.0 * m) + pot_or_params.U(x)


def classical_velocity(x, e0, m, pot: PotentialSpec, branch=1):
    """+-sqrt((2/m)(E0 - U(x))); raises in the classically forbidden region."""
    if branch not in (-1, 1):
        raise ParameterError("branch must be +1 or -1")
    x = np.asarray(x, dtype=float)
    vsq = (2.0 / m) * (e0 - pot.U(x))
    tol = 1e-12 * max(abs(e0), 1.0)
    if np.any(vsq < -tol * (2.0 / m)):
        raise ForbiddenRegionError(f"E0={e0} below the potential at some of x")
    return branch * np.sqrt(np.maximum(vsq, 0.0))


def shell_phase_sampler(p: OscillatorParams, e0):
    """Oscillator states on the energy shell E0 with uniform phase.

    x = r cos(phi), v = -w r sin(phi), phi ~ U(0, 2 pi); this makes the
    velocity genuinely random given the position, which the
    position-conditioned estimators require.
    """
    r0 = np.sqrt(2.0 * e0 / (p.m * p.omega**2))

    def sample(stream):
        phi = stream.uniform(0.0, 2.0 * np.pi)
        return np.array([r0 * np.cos(phi), -p.omega * r0 * np.sin(phi)])

    return sample


def rphi_sampler(r0, uniform_phase=True, phi0=0.0):
    """Amplitude-phase initial conditions for the averaged (r, phi) system."""

    def sample(stream):
        phi = stream.uniform(0.0, 2.0 * np.pi) if uniform_phase else phi0
        return np.array([r0, phi])

    return sample
