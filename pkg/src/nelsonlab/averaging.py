"""Averaged slow systems for the randomly forced oscillator and wells.

Closed-form amplitude-phase equations for the harmonic oscillator
(white and colored forcing), and the numeric pipeline for a general
single well: theta-drift F(E), energy-angle covariance D(E), a noise
factor sigma with sigma sigma^T = D, and the induced position-noise
amplitude G(E).

Branch bookkeeping: the angle integral f(x,E) and its E-derivatives
live on the positive-momentum branch; on the return branch the orbit
continuation is f -> 2 tau - f with tau the travel time from x0 to the
right turning point over m. Period averages evaluate both branches
together, which cancels the logarithmically divergent parts of the
f_E integrands pointwise and leaves absolutely convergent integrals.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .coords import ActionAngleChart, build_chart, turning_points, _leggauss
from .errors import DegenerateNoiseError, ParameterError, QuadratureError
from .models import OscillatorParams, PotentialSpec, harmonic_potential
from .noise import NoiseSpectrum
from .sde import SdeSystem

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class AveragedCoefficients:
    """Energy-dependent coefficients of the averaged (E, theta) diffusion.

    All entries are reported at unit noise scale: the averaged system is
    dE     = eps^2/(2m) dt          + eps (sigma dW)_1
    dtheta = eps^2 F(E)/2 dt        + eps (sigma dW)_2
    and the induced position equation carries noise amplitude eps*G.
    Kbar is the heuristic position-drift correction; its integrand is
    not absolutely integrable at the turning points, so it is reported
    from a trimmed average and excluded from any pass/fail use.
    """

    E: float
    F: float
    D: np.ndarray
    sigma: np.ndarray
    G: float
    Kbar: float
    eps7: float
    psd_repaired: bool
    trim: float


# --------------------------------------------------------------------------
# harmonic closed forms
# --------------------------------------------------------------------------

def _rphi_system(alpha, beta, gamma, rmin, name, params):
    def drift(state, t):
        out = np.zeros_like(state)
        out[..., 0] = alpha / state[..., 0]
        return out

    def diffusion(state, t):
        g = np.zeros(state.shape[:-1] + (2, 2))
        g[..., 0, 0] = beta
        g[..., 1, 1] = gamma / state[..., 0]
        return g

    def constrain(state):
        r = state[..., 0]
        low = r < rmin
        if low.any():
            state[..., 0] = np.where(low, np.maximum(2.0 * rmin - r, rmin), r)
        return state

    return SdeSystem(
        dimension=2, drift=drift, diffusion=diffusion, k=2,
        constrain=constrain,
        kernel=("rphi", dict(alpha=alpha, beta=beta, gamma=gamma, rmin=rmin)),
        labels=("r", "phi"), name=name, params=params,
    )


def averaged_harmonic_system(eps, r0=1.0, r_floor_frac=1e-6) -> SdeSystem:
    """Averaged amplitude-phase equations of the white-forced oscillator:
    dr = (eps^2/4) dt / r + (eps/sqrt 2) dW1, dphi = (eps/sqrt 2) dW2 / r.

    The radial equation can diffuse to r <= 0 where the model has no
    meaning; paths reflect at r_floor_frac * r0 (diagnostic floor).
    """
    if eps < 0:
        raise ParameterError("eps must be non-negative")
    rmin = r_floor_frac * r0
    return _rphi_system(alpha=eps**2 / 4.0, beta=eps / np.sqrt(2.0),
                        gamma=eps / np.sqrt(2.0), rmin=rmin,
                        name="averaged_harmonic", params=dict(eps=eps, rmin=rmin))


def averaged_colored_system(spectrum: NoiseSpectrum, omega, r0=1.0,
                            r_floor_frac=1e-6) -> SdeSystem:
    """Averaged amplitude-phase equations under stationary colored forcing.

    Only the spectral density at the resonant frequency enters:
    dr = S(w)/(8 pi w^2 r) dt + sqrt(S(w)/(4 pi)) dW1 / w.
    """
    s_res = float(spectrum.density(omega))
    if not np.isfinite(s_res):
        raise ParameterError("spectrum must be finite at the resonant frequency")
    rmin = r_floor_frac * r0
    return _rphi_system(alpha=s_res / (8.0 * np.pi * omega**2),
                        beta=np.sqrt(s_res / (4.0 * np.pi)) / omega,
                        gamma=np.sqrt(s_res / (4.0 * np.pi)) / omega,
                        rmin=rmin, name="averaged_colored",
                        params=dict(s_resonant=s_res, omega=omega, rmin=rmin))


def rphi_to_x(ens, omega):
    """Position paths x = r cos(w t + phi) reconstructed from an (r, phi) ensemble."""
    r = ens.component("r")
    phi = ens.component("phi")
    return r * np.cos(omega * ens.times[None, :] + phi)


def reconstructed_x_system(p: OscillatorParams, e0, pot: PotentialSpec = None) -> SdeSystem:
    """Frozen-energy Markov model of the position alone:
    dx = +-sqrt((2/m)(E0 - U(x))) dt + (eps/sqrt 2) dW, branch flipping
    at the turning points.

    Under nelson_scaling the noise amplitude is sqrt(hbar/m). The state
    carries (x, branch); paths crossing a turning point are reflected
    back inside and change branch. `pot` defaults to the harmonic well
    of `p`; pass a total potential for the perturbed variant.
    """
    if pot is None:
        pot = harmonic_potential(p.m, p.omega)
    xm, xp = turning_points(pot, p.m, e0)
    sigma_x = p.eps / np.sqrt(2.0)
    two_over_m = 2.0 / p.m
    if pot.coeffs is not None:
        u1, u3, us = pot.coeffs
    else:
        u1 = u3 = us = None

    def drift(state, t):
        out = np.zeros_like(state)
        x = state[..., 0]
        vsq = two_over_m * (e0 - pot.U(x))
        out[..., 0] = state[..., 1] * np.sqrt(np.maximum(vsq, 0.0))
        return out

    gmat = np.array([[sigma_x], [0.0]])

    def constrain(state):
        x = state[..., 0]
        s = state[..., 1]
        hi = x > xp
        lo = x < xm
        if hi.any() or lo.any():
            x = np.where(hi, 2.0 * xp - x, x)
            s = np.where(hi, -1.0, s)
            x = np.where(lo, 2.0 * xm - x, x)
            s = np.where(lo, 1.0, s)
            state[..., 0] = np.clip(x, xm, xp)
            state[..., 1] = s
        return state

    kernel = None
    if u1 is not None:
        kernel = ("branch", dict(two_over_m=two_over_m, e0=float(e0), u1=u1,
                                 u3=u3, us=us, xm=xm, xp=xp, sigma=sigma_x))
    return SdeSystem(
        dimension=2, drift=drift,
        diffusion=lambda state, t: np.broadcast_to(gmat, state.shape[:-1] + (2, 1)),
        k=1, constrain=constrain, kernel=kernel, labels=("x", "branch"),
        name="reconstructed_x",
        params=dict(m=p.m, e0=float(e0), sigma_x=sigma_x, potential=pot.name,
                    x_minus=xm, x_plus=xp, diffusion_matrix=gmat),
    )


def shell_branch_sampler(p: OscillatorParams, e0, pot: PotentialSpec = None):
    """(x, branch) initial conditions distributed as the deterministic
    occupation measure of the orbit (uniform phase)."""
    from .coords import build_chart, uniform_orbit_sampler

    if pot is None:
        pot = harmonic_potential(p.m, p.omega)
    chart = build_chart(pot, p.m, e0)
    base = uniform_orbit_sampler(chart)

    def sample(stream):
        xv = base(stream)
        return np.array([xv[0], 1.0 if xv[1] >= 0 else -1.0])

    return sample


# --------------------------------------------------------------------------
# period averages and the general pipeline
# --------------------------------------------------------------------------

def _average_nodes(chart: ActionAngleChart):
    """Quadrature nodes for (1/T) closed-orbit time averages.

    Returns x positions, |p|, and weights w such that
    sum w * (g_plus + g_minus) approximates the period average of g.
    """
    geo = chart.geometry
    xi, wi = _leggauss(geo.n)
    xs, ps, ws = [], [], []
    for side, smax in ((+1, geo.s_right), (-1, geo.s_left)):
        s = 0.5 * smax * (xi + 1.0)
        w = 0.5 * smax * wi
        q = geo._q(s, side)
        xt = chart.x_plus if side > 0 else chart.x_minus
        x = xt - side * s * s
        xs.append(x)
        ps.append(q * s)
        ws.append(w * 2.0 * geo.m / q / chart.T)
    return np.concatenate(xs), np.concatenate(ps), np.concatenate(ws)


def period_average(g, chart: ActionAngleChart):
    """(1/T) integral of g(x(t), p(t)) over one deterministic period.

    Both momentum branches are visited; for branch-odd g the signed
    contributions cancel as they do along the orbit.
    """
    x, p, w = _average_nodes(chart)
    vals = np.asarray(g(x, p), dtype=float) + np.asarray(g(x, -p), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise QuadratureError("period-average integrand is not finite on the orbit")
    return float(np.sum(w * vals))


def _stencil(fn, e, h):
    """Values of fn at e + {-2h,-h,0,h,2h}."""
    return [fn(e + k * h) for k in (-2.0, -1.0, 0.0, 1.0, 2.0)]


def _d1(vals, h):
    return (8.0 * (vals[3] - vals[1]) - (vals[4] - vals[0])) / (12.0 * h)


def _d2(vals, h):
    return (-vals[4] + 16.0 * vals[3] - 30.0 * vals[2] + 16.0 * vals[1] - vals[0]) / (12.0 * h**2)


def compute_averaged_coefficients(chart: ActionAngleChart, eps7=0.0,
                                  h_frac=1e-3, trim=1e-3) -> AveragedCoefficients:
    """Averaged (E, theta) coefficients at the chart energy.

    F(E) and the cross entry D12 reduce to closed forms in the action,
    the frequency and the E-derivatives of the half-orbit travel time
    (the divergent parts of the f_E averages cancel between branches);
    D11, D22 and G^2 are evaluated by turning-point-regularized
    quadrature. sigma is a matrix square root of D with small negative
    eigenvalues clipped.
    """
    pot, m, e = chart.pot, chart.m, chart.E
    h = h_frac * abs(e)

    def side_chart(ee):
        return build_chart(pot, m, ee, x0=chart.x0, n_quad=chart.geometry.n)

    charts = _stencil(side_chart, e, h)
    omegas = [c.omega for c in charts]
    taus = [c.t_plus_max / c.m for c in charts]
    omega, omega_e, omega_ee = chart.omega, _d1(omegas, h), _d2(omegas, h)
    tau = taus[2]
    c1, c2 = _d1(taus, h), _d2(taus, h)

    x, p_abs, w = _average_nodes(chart)
    f_plus = np.array([chart.f(xx) for xx in x])
    fe_plus = np.array([chart.f_E(xx) for xx in x])

    d11 = float(np.sum(w * 2.0 * p_abs**2 / m**2))
    d12 = omega**2 * c1 * chart.I
    d22 = float(np.sum(w * p_abs**2 * omega**2
                       * (fe_plus**2 + (2.0 * c1 - fe_plus) ** 2)))
    f_coef = omega * c1 + 2.0 * omega * omega_e * c1 * chart.I + omega**2 * c2 * chart.I

    d_mat = np.array([[d11, d12], [d12, d22]])
    sigma, repaired = _psd_factor(d_mat)

    # position-noise amplitude from the inverse chart x(theta + w t, E):
    # G^2 = < X_E^2 D11 + 2 X_E X_phi D12 + X_phi^2 D22 >_T, independent
    # of the sigma factorization.
    g2 = 0.0
    for sign in (+1.0, -1.0):
        p = sign * p_abs
        f_b = f_plus if sign > 0 else 2.0 * tau - f_plus
        fe_b = fe_plus if sign > 0 else 2.0 * c1 - fe_plus
        x_e = -p * (omega * fe_b + omega_e * f_b) / omega
        x_phi = p / (m * omega)
        g2 += float(np.sum(w * (x_e**2 * d11 + 2.0 * x_e * x_phi * d12
                                + x_phi**2 * d22)))
    g_amp = np.sqrt(max(g2, 0.0))

    kbar = _kbar_trimmed(chart, w, x, p_abs, f_plus, fe_plus, tau, c1, c2,
                         omega, omega_e, omega_ee, d_mat, f_coef, trim)

    return AveragedCoefficients(E=e, F=f_coef, D=d_mat, sigma=sigma, G=g_amp,
                                Kbar=kbar, eps7=float(eps7),
                                psd_repaired=repaired, trim=trim)


def _psd_factor(d_mat):
    evals, evecs = np.linalg.eigh(d_mat)
    tol = 1e-12 * max(np.trace(d_mat), 1e-300)
    if evals.min() < -tol:
        raise QuadratureError(f"averaged covariance has eigenvalue {evals.min()}")
    repaired = bool(evals.min() < 0.0)
    if repaired:
        warnings.warn("clipped a slightly negative covariance eigenvalue",
                      stacklevel=3)
    clipped = np.clip(evals, 0.0, None)
    try:
        sigma = np.linalg.cholesky(evecs @ np.diag(clipped) @ evecs.T)
    except np.linalg.LinAlgError:
        sigma = evecs @ np.diag(np.sqrt(clipped)) @ evecs.T
    return sigma, repaired


def _kbar_trimmed(chart, w, x, p_abs, f_plus, fe_plus, tau, c1, c2,
                  omega, omega_e, omega_ee, d_mat, f_coef, trim):
    """Heuristic position-drift correction, averaged away from the
    turning points (the full integrand is ~ 1/s^2 there; trimmed
    diagnostic only)."""
    m = chart.m
    geo = chart.geometry
    smax = max(geo.s_left, geo.s_right)
    dist = np.minimum(x - chart.x_minus, chart.x_plus - x)
    keep = dist > (trim * smax) ** 2
    if not keep.any():
        return float("nan")
    fee_plus = np.array([chart.f_EE(xx) for xx in x[keep]])
    du = chart.pot.dU(x[keep])
    d11, d12, d22 = d_mat[0, 0], d_mat[0, 1], d_mat[1, 1]
    total = 0.0
    wk = w[keep]
    for sign in (+1.0, -1.0):
        p = sign * p_abs[keep]
        f_b = (f_plus[keep] if sign > 0 else 2.0 * tau - f_plus[keep])
        fe_b = (fe_plus[keep] if sign > 0 else 2.0 * c1 - fe_plus[keep])
        fee_b = (fee_plus if sign > 0 else 2.0 * c2 - fee_plus)
        w_big = omega * fe_b + omega_e * f_b
        w_x = -m * omega / p**3 + omega_e / p
        dw_de = omega * fee_b + 2.0 * omega_e * fe_b + omega_ee * f_b
        x_e = -p * w_big / omega
        p_x = -m * du / p
        x_phi = p / (m * omega)
        x_phiphi = -du / (m * omega**2)
        x_phie = (p_x * x_e + m / p) / (m * omega) - p * omega_e / (m * omega**2)
        d_x = -p_x * w_big / omega - p * w_x / omega
        d_e = -(m / p) * w_big / omega - p * (dw_de / omega - w_big * omega_e / omega**2)
        x_ee = x_e * d_x + d_e
        k_val = (x_e / (2.0 * m) + x_phi * f_coef / 2.0
                 + 0.5 * (x_phiphi * d22 + 2.0 * x_phie * d12 + x_ee * d11))
        total += float(np.sum(wk * k_val))
    return total


def nelson_noise_choice(coeffs: AveragedCoefficients, hbar, m):
    """Noise scale eps with eps * G(E) = sqrt(hbar/m).

    E-dependent for anharmonic wells: each energy needs its own scale,
    which is the universality caveat of the general construction.
    """
    if coeffs.G <= 0:
        raise DegenerateNoiseError("induced position noise amplitude vanishes")
    return float(np.sqrt(hbar / m) / coeffs.G)


def averaged_general_system(pot: PotentialSpec, m, eps7, e_lo, e_hi,
                            n_grid=9, x0=None, gauge=None) -> SdeSystem:
    """Averaged (E, theta) diffusion with coefficients interpolated on an
    energy grid; `gauge` right-multiplies sigma by an orthogonal matrix
    (which must not change the law of the process)."""
    if not e_lo < e_hi:
        raise ParameterError("need e_lo < e_hi")
    es = np.linspace(e_lo, e_hi, n_grid)
    tables = [compute_averaged_coefficients(build_chart(pot, m, ee, x0=x0))
              for ee in es]
    f_tab = np.array([c.F for c in tables])
    sig_tab = np.array([c.sigma for c in tables])
    if gauge is not None:
        gauge = np.asarray(gauge, dtype=float)
        if not np.allclose(gauge @ gauge.T, np.eye(2), atol=1e-12):
            raise ParameterError("gauge must be orthogonal")
        sig_tab = sig_tab @ gauge

    def drift(state, t):
        out = np.empty_like(state)
        out[..., 0] = eps7**2 / (2.0 * m)
        out[..., 1] = 0.5 * eps7**2 * np.interp(state[..., 0], es, f_tab)
        return out

    def diffusion(state, t):
        e = state[..., 0]
        g = np.empty(state.shape[:-1] + (2, 2))
        for i in range(2):
            for j in range(2):
                g[..., i, j] = eps7 * np.interp(e, es, sig_tab[:, i, j])
        return g

    def constrain(state):
        e = state[..., 0]
        state[..., 0] = np.clip(e, e_lo, e_hi)
        return state

    return SdeSystem(dimension=2, drift=drift, diffusion=diffusion, k=2,
                     constrain=constrain, labels=("E", "theta"),
                     name="averaged_general",
                     params=dict(m=m, eps=eps7, potential=pot.name,
                                 e_lo=e_lo, e_hi=e_hi))
