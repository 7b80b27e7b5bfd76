"""Coordinate transforms and action-angle machinery for single wells.

Orbit integrals (period, action, the time integral f(x,E) = int dx'/p
and its energy derivatives) all carry inverse-square-root endpoint
behaviour at the turning points. Every integral is evaluated after the
substitution x' = x_t -+ s^2, which makes the integrand analytic in s;
the remaining inverse powers of s (for the E-derivatives of f) are
integrated on geometrically graded panels. Gauss-Legendre everywhere.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, NoMotionError, ParameterError
from .models import PotentialSpec

TWO_PI = 2.0 * np.pi


# --------------------------------------------------------------------------
# amplitude-phase chart of the harmonic oscillator
# --------------------------------------------------------------------------

def _wrap_pi(phi):
    """Reduce an angle to (-pi, pi]."""
    out = np.mod(np.asarray(phi, dtype=float) + np.pi, TWO_PI) - np.pi
    return np.where(out == -np.pi, np.pi, out)


def to_amplitude_phase(x, v, omega, t=0.0):
    """(x, v) -> (r, phi) with x = r cos(w t + phi), v = -w r sin(w t + phi)."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    r = np.hypot(x, v / omega)
    if np.any(r == 0.0):
        raise DomainError("phase undefined at the origin")
    phi = np.arctan2(-v / omega, x) - omega * t
    return r, _wrap_pi(phi)


def from_amplitude_phase(r, phi, omega, t=0.0):
    """Inverse of to_amplitude_phase."""
    arg = omega * t + np.asarray(phi, dtype=float)
    r = np.asarray(r, dtype=float)
    return r * np.cos(arg), -omega * r * np.sin(arg)


# --------------------------------------------------------------------------
# quadrature helpers
# --------------------------------------------------------------------------

@lru_cache(maxsize=32)
def _leggauss(n):
    return np.polynomial.legendre.leggauss(n)


def _gl(fn, a, b, n):
    if b <= a:
        return 0.0
    xi, wi = _leggauss(n)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return half * float(np.dot(wi, fn(mid + half * xi)))


def _gl_graded(fn, a, b, n):
    """GL on geometrically graded panels; for integrands with an
    inverse-power factor that blows up toward a > 0."""
    if b <= a:
        return 0.0
    edges = [b]
    while edges[-1] > 2.0 * a:
        edges.append(edges[-1] * 0.5)
    edges.append(a)
    total = 0.0
    for lo, hi in zip(edges[1:], edges[:-1]):
        total += _gl(fn, lo, hi, n)
    return total


def _cumulative_simpson(y, dx):
    """Cumulative integral of uniformly sampled y, 4th order."""
    n = y.size
    out = np.zeros(n)
    if n < 3:
        if n == 2:
            out[1] = 0.5 * dx * (y[0] + y[1])
        return out
    # even endpoints by composite Simpson, odd by local parabola
    out[1] = dx / 12.0 * (5.0 * y[0] + 8.0 * y[1] - y[2])
    for i in range(2, n):
        if i % 2 == 0:
            out[i] = out[i - 2] + dx / 3.0 * (y[i - 2] + 4.0 * y[i - 1] + y[i])
        else:
            out[i] = out[i - 1] + dx / 12.0 * (5.0 * y[i - 1] + 8.0 * y[i] - y[i - 1 - 1])
    return out


# --------------------------------------------------------------------------
# turning points and orbit geometry
# --------------------------------------------------------------------------

# absolute root tolerance: the orbit integrals lose accuracy like the
# square root of the turning-point error, so roots are polished to
# machine level (rtol is the binding criterion away from zero)
_ROOT_XTOL = 1e-15
_ROOT_RTOL = 8.9e-16


def well_minimum(pot: PotentialSpec):
    """Location of the single minimum of U on its domain."""
    lo, hi = pot.domain
    dlo, dhi = pot.dU(lo), pot.dU(hi)
    if dlo >= 0 or dhi <= 0:
        raise ParameterError("potential slope does not bracket a minimum")
    return brentq(pot.dU, lo, hi, xtol=_ROOT_XTOL, rtol=_ROOT_RTOL)


def turning_points(pot: PotentialSpec, m, e):
    """Roots of U(x) = E bracketing the well minimum."""
    lo, hi = pot.domain
    x_min = well_minimum(pot)
    u_min = float(pot.U(x_min))
    if e <= u_min + 1e-14 * max(1.0, abs(u_min)):
        raise NoMotionError(f"E={e} at or below the well bottom {u_min}")
    g = lambda x: pot.U(x) - e
    if g(lo) <= 0 or g(hi) <= 0:
        raise DomainError(f"E={e} not bracketed inside the potential domain")
    x_minus = brentq(g, lo, x_min, xtol=_ROOT_XTOL, rtol=_ROOT_RTOL)
    x_plus = brentq(g, x_min, hi, xtol=_ROOT_XTOL, rtol=_ROOT_RTOL)
    return x_minus, x_plus


class _OrbitGeometry:
    """Turning-point-substituted evaluators for one (pot, m, E) orbit."""

    def __init__(self, pot, m, e, n_quad=96):
        self.pot, self.m, self.e, self.n = pot, m, float(e), n_quad
        self.x_minus, self.x_plus = turning_points(pot, m, e)
        self.x_min = well_minimum(pot)
        self.s_left = np.sqrt(self.x_min - self.x_minus)
        self.s_right = np.sqrt(self.x_plus - self.x_min)
        self._table = None

    def momentum(self, x):
        """|p|(x, E) on the orbit."""
        val = 2.0 * self.m * (self.e - self.pot.U(x))
        return np.sqrt(np.maximum(val, 0.0))

    def _q(self, s, side):
        """p/(distance from turning point)^(1/2); analytic and positive."""
        s = np.asarray(s, dtype=float)
        xt = self.x_plus if side > 0 else self.x_minus
        x = xt - np.sign(side) * s * s
        out = np.empty_like(s)
        tiny = s < 1e-7 * max(self.s_left, self.s_right)
        slope = self.pot.dU(xt) * np.sign(side)
        out[~tiny] = self.momentum(x[~tiny]) / s[~tiny]
        out[tiny] = np.sqrt(2.0 * self.m * slope)
        return out

    def _half_integral(self, x, power):
        """Signed int_{x_min}^{x} p^{-(2 power + 1)} dx'."""
        if x > self.x_plus + 1e-12 or x < self.x_minus - 1e-12:
            raise DomainError(f"x={x} outside the orbit [{self.x_minus}, {self.x_plus}]")
        x = min(max(x, self.x_minus), self.x_plus)
        if x >= self.x_min:
            side, s_u, s_m = +1, np.sqrt(max(self.x_plus - x, 0.0)), self.s_right
            sign = 1.0
        else:
            side, s_u, s_m = -1, np.sqrt(x - self.x_minus), self.s_left
            sign = -1.0
        k = 2 * power + 1
        fn = lambda s: 2.0 / (np.power(s, 2 * power) * self._q(s, side) ** k)
        if power == 0:
            return sign * _gl(lambda s: 2.0 / self._q(s, side), s_u, s_m, self.n)
        if s_u <= 0.0:
            raise DomainError("energy derivative of f diverges at the turning point")
        return sign * _gl_graded(fn, s_u, s_m, self.n)

    def f_from_min(self, x):
        return self._half_integral(x, 0)

    def fE_from_min(self, x):
        return -self.m * self._half_integral(x, 1)

    def fEE_from_min(self, x):
        return 3.0 * self.m**2 * self._half_integral(x, 2)

    def period(self):
        return 2.0 * self.m * (self.f_from_min(self.x_plus) - self.f_from_min(self.x_minus))

    def action(self):
        right = _gl(lambda s: 2.0 * s * s * self._q(s, +1), 0.0, self.s_right, self.n)
        left = _gl(lambda s: 2.0 * s * s * self._q(s, -1), 0.0, self.s_left, self.n)
        return (right + left) / np.pi

    def time_table(self, n_half=4096):
        """(x, t) samples of the positive-momentum half orbit from x_minus."""
        if self._table is None:
            sl = np.linspace(0.0, self.s_left, n_half + 1)
            gl = 2.0 / self._q(sl, -1)
            tl = self.m * _cumulative_simpson(gl, sl[1] - sl[0] if n_half else 0.0)
            xl = self.x_minus + sl * sl
            sr = np.linspace(0.0, self.s_right, n_half + 1)
            gr = 2.0 / self._q(sr, +1)
            dr = self.m * _cumulative_simpson(gr, sr[1] - sr[0] if n_half else 0.0)
            xr = (self.x_plus - sr * sr)[::-1]
            tr = tl[-1] + (dr[-1] - dr)[::-1]
            xs = np.concatenate([xl, xr[1:]])
            ts = np.concatenate([tl, tr[1:]])
            order = np.argsort(xs)
            self._table = (xs[order], ts[order])
        return self._table


@dataclass(frozen=True)
class ActionAngleChart:
    """Action-angle data of one orbit: turning points, period, action,
    frequency, and the reference point x0 of the angle integral."""

    pot: PotentialSpec
    m: float
    E: float
    x_minus: float
    x_plus: float
    T: float
    I: float
    omega: float
    x0: float
    geometry: _OrbitGeometry = field(repr=False)

    @property
    def t_plus_max(self):
        """Time from x0 to the right turning point along the orbit."""
        return self.m * (self.geometry.f_from_min(self.x_plus) - self._f0)

    @property
    def _f0(self):
        return self.geometry.f_from_min(self.x0)

    def momentum(self, x):
        return self.geometry.momentum(x)

    def f(self, x):
        """f(x, E) = int_{x0}^{x} dx'/p on the positive branch."""
        return self.geometry.f_from_min(x) - self._f0

    def f_E(self, x):
        return self.geometry.fE_from_min(x) - self.geometry.fE_from_min(self.x0)

    def f_EE(self, x):
        return self.geometry.fEE_from_min(x) - self.geometry.fEE_from_min(self.x0)


def build_chart(pot, m, e, x0=None, n_quad=96) -> ActionAngleChart:
    """Construct the action-angle chart at energy E.

    x0 defaults to the well minimum. The frequency is always 2 pi / T;
    dE/dI equals it by construction and is only used as a cross-check.
    """
    geo = _OrbitGeometry(pot, m, e, n_quad=n_quad)
    t = geo.period()
    act = geo.action()
    if x0 is None:
        x0 = geo.x_min
    if x0 < geo.x_minus - 1e-12 or x0 > geo.x_plus + 1e-12:
        raise DomainError("x0 must lie on the orbit")
    return ActionAngleChart(pot=pot, m=m, E=float(e), x_minus=geo.x_minus,
                            x_plus=geo.x_plus, T=t, I=act, omega=TWO_PI / t,
                            x0=float(x0), geometry=geo)


def period(pot, m, e, n_quad=96):
    """Orbit period 2 int m dx / p with turning-point-regularized quadrature."""
    return _OrbitGeometry(pot, m, e, n_quad).period()


def action(pot, m, e, n_quad=96):
    """Action I = (1/2 pi) closed-int p dx."""
    return _OrbitGeometry(pot, m, e, n_quad).action()


def f_integral(pot, m, e, x, x0, n_quad=96):
    """int_{x0}^{x} dx'/p(x', E) on the positive branch; m*f is travel time."""
    geo = _OrbitGeometry(pot, m, e, n_quad)
    for pt in (x, x0):
        if pt < geo.x_minus - 1e-12 or pt > geo.x_plus + 1e-12:
            raise DomainError(f"point {pt} outside the orbit")
    return geo.f_from_min(x) - geo.f_from_min(x0)


def angle(chart: ActionAngleChart, x, branch=1):
    """Angle variable phi = m w f(x,E) on the positive branch, continued
    across the negative branch by time reversal; advances 2 pi per circuit."""
    if branch not in (-1, 1):
        raise ParameterError("branch must be +1 or -1")
    phi = chart.m * chart.omega * chart.f(x)
    if branch < 0:
        phi = 2.0 * chart.omega * chart.t_plus_max - phi
    return float(np.mod(phi, TWO_PI))


def shifted_angle(chart: ActionAngleChart, x, branch, t):
    """Slow angle theta = phi - w t, reduced mod 2 pi."""
    return float(np.mod(angle(chart, x, branch) - chart.omega * t, TWO_PI))


def orbit_state(chart: ActionAngleChart, t):
    """Deterministic orbit state (x, v) at time t after passing x_minus."""
    xs, ts = chart.geometry.time_table()
    half = chart.T / 2.0
    u = float(np.mod(t, chart.T))
    if u <= half:
        x = float(np.interp(u, ts, xs))
        v = chart.momentum(x) / chart.m
    else:
        x = float(np.interp(chart.T - u, ts, xs))
        v = -chart.momentum(x) / chart.m
    return x, v


def uniform_orbit_sampler(chart: ActionAngleChart, momentum=False):
    """Initial states uniform in time along the deterministic orbit.

    This is the stationary measure of the noiseless flow at energy E,
    i.e. uniform angle; with momentum=True returns (x, p) instead of (x, v).
    """
    xs, ts = chart.geometry.time_table()
    half = chart.T / 2.0
    scale = chart.m if momentum else 1.0

    def sample(stream):
        u = stream.uniform(0.0, chart.T)
        if u <= half:
            x = float(np.interp(u, ts, xs))
            sgn = 1.0
        else:
            x = float(np.interp(chart.T - u, ts, xs))
            sgn = -1.0
        return np.array([x, sgn * scale * chart.momentum(x) / chart.m])

    return sample
