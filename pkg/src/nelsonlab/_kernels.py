"""Stepping kernels for the ensemble integrators.

Each kernel exists in two functionally identical versions: a numba
@njit loop over trajectories (parallel, nogil) and a pure-numpy loop
over steps vectorized across trajectories. Arithmetic is written with
the same operation order in both so that polynomial-force models agree
bit for bit; transcendental forces (pendulum term) may differ in the
last ulp between libm implementations.

All kernels consume pre-drawn Wiener increments and write strided
frames into caller-allocated output arrays; ``diverged[i]`` records the
first step at which trajectory ``i`` left the finite range (-1 if it
never did).
"""

import math
from types import SimpleNamespace

import numpy as np

from ._backend import BACKEND, numba_available


# --------------------------------------------------------------------------
# numpy implementations
# --------------------------------------------------------------------------

def _em_kinetic_np(init, inv_mass, b1, b3, bs, sigma, forcing, use_forcing,
                   dt, stride, dW, out, diverged):
    n, steps = dW.shape
    x = init[:, 0].copy()
    y = init[:, 1].copy()
    out[:, 0, 0] = x
    out[:, 0, 1] = y
    frame = 1
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            if bs != 0.0:
                f = b1 * x + b3 * (x * x * x) + bs * np.sin(x)
            else:
                f = b1 * x + b3 * (x * x * x)
            if use_forcing:
                y_new = y + (-(f)) * dt + sigma * dW[:, k] + forcing[:, k] * dt
            else:
                y_new = y + (-(f)) * dt + sigma * dW[:, k]
            x_new = x + (y * inv_mass) * dt
            x, y = x_new, y_new
            bad = ~np.isfinite(x + y)
            if bad.any():
                fresh = bad & (diverged < 0)
                diverged[fresh] = k
                x[bad] = 0.0
                y[bad] = 0.0
            if (k + 1) % stride == 0:
                out[:, frame, 0] = x
                out[:, frame, 1] = y
                frame += 1


def _exact_linear_np(init, m11, m12, m21, m22, l11, l21, l22,
                     z, stride, out, diverged):
    n, steps, _ = z.shape
    x = init[:, 0].copy()
    y = init[:, 1].copy()
    out[:, 0, 0] = x
    out[:, 0, 1] = y
    frame = 1
    for k in range(steps):
        z1 = z[:, k, 0]
        z2 = z[:, k, 1]
        x_new = m11 * x + m12 * y + l11 * z1
        y_new = m21 * x + m22 * y + l21 * z1 + l22 * z2
        x, y = x_new, y_new
        if (k + 1) % stride == 0:
            out[:, frame, 0] = x
            out[:, frame, 1] = y
            frame += 1
    bad = ~np.isfinite(x + y)
    if bad.any():
        diverged[bad & (diverged < 0)] = steps - 1


def _em_rphi_np(init, alpha, beta, gamma, rmin, dt, dW, out, stride, diverged):
    n, steps, _ = dW.shape
    r = init[:, 0].copy()
    phi = init[:, 1].copy()
    out[:, 0, 0] = r
    out[:, 0, 1] = phi
    frame = 1
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            r_new = r + (alpha / r) * dt + beta * dW[:, k, 0]
            phi_new = phi + (gamma / r) * dW[:, k, 1]
            low = r_new < rmin
            if low.any():
                r_new = np.where(low, 2.0 * rmin - r_new, r_new)
                r_new = np.maximum(r_new, rmin)
            r, phi = r_new, phi_new
            bad = ~np.isfinite(r + phi)
            if bad.any():
                fresh = bad & (diverged < 0)
                diverged[fresh] = k
                r[bad] = rmin
                phi[bad] = 0.0
            if (k + 1) % stride == 0:
                out[:, frame, 0] = r
                out[:, frame, 1] = phi
                frame += 1


def _em_branch_np(init_x, init_s, two_over_m, e0, u1, u3, us, xm, xp,
                  sigma, dt, dW, stride, out_x, out_s, diverged):
    n, steps = dW.shape
    x = init_x.copy()
    s = init_s.copy()
    out_x[:, 0] = x
    out_s[:, 0] = s
    frame = 1
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            x2 = x * x
            pot = 0.5 * u1 * x2 + 0.25 * u3 * (x2 * x2)
            if us != 0.0:
                pot = pot + us * (1.0 - np.cos(x))
            vsq = two_over_m * (e0 - pot)
            drift = s * np.sqrt(np.maximum(vsq, 0.0))
            x_new = x + drift * dt + sigma * dW[:, k]
            hi = x_new > xp
            lo = x_new < xm
            if hi.any():
                x_new = np.where(hi, 2.0 * xp - x_new, x_new)
                s = np.where(hi, -1.0, s)
            if lo.any():
                x_new = np.where(lo, 2.0 * xm - x_new, x_new)
                s = np.where(lo, 1.0, s)
            x = np.clip(x_new, xm, xp)
            bad = ~np.isfinite(x)
            if bad.any():
                fresh = bad & (diverged < 0)
                diverged[fresh] = k
                x[bad] = 0.5 * (xm + xp)
            if (k + 1) % stride == 0:
                out_x[:, frame] = x
                out_s[:, frame] = s
                frame += 1


_NUMPY = SimpleNamespace(
    em_kinetic=_em_kinetic_np,
    exact_linear=_exact_linear_np,
    em_rphi=_em_rphi_np,
    em_branch=_em_branch_np,
    name="numpy",
)


# --------------------------------------------------------------------------
# numba implementations (built on first use)
# --------------------------------------------------------------------------

_NUMBA_CACHE = None


def _build_numba():
    from numba import njit, prange

    @njit(parallel=True, nogil=True, cache=True)
    def em_kinetic(init, inv_mass, b1, b3, bs, sigma, forcing, use_forcing,
                   dt, stride, dW, out, diverged):
        n, steps = dW.shape
        for i in prange(n):
            x = init[i, 0]
            y = init[i, 1]
            out[i, 0, 0] = x
            out[i, 0, 1] = y
            frame = 1
            for k in range(steps):
                if bs != 0.0:
                    f = b1 * x + b3 * (x * x * x) + bs * math.sin(x)
                else:
                    f = b1 * x + b3 * (x * x * x)
                if use_forcing:
                    y_new = y + (-(f)) * dt + sigma * dW[i, k] + forcing[i, k] * dt
                else:
                    y_new = y + (-(f)) * dt + sigma * dW[i, k]
                x_new = x + (y * inv_mass) * dt
                x = x_new
                y = y_new
                if not (math.isfinite(x) and math.isfinite(y)):
                    diverged[i] = k
                    x = 0.0
                    y = 0.0
                if (k + 1) % stride == 0:
                    out[i, frame, 0] = x
                    out[i, frame, 1] = y
                    frame += 1

    @njit(parallel=True, nogil=True, cache=True)
    def exact_linear(init, m11, m12, m21, m22, l11, l21, l22,
                     z, stride, out, diverged):
        n, steps, _ = z.shape
        for i in prange(n):
            x = init[i, 0]
            y = init[i, 1]
            out[i, 0, 0] = x
            out[i, 0, 1] = y
            frame = 1
            for k in range(steps):
                z1 = z[i, k, 0]
                z2 = z[i, k, 1]
                x_new = m11 * x + m12 * y + l11 * z1
                y_new = m21 * x + m22 * y + l21 * z1 + l22 * z2
                x = x_new
                y = y_new
                if (k + 1) % stride == 0:
                    out[i, frame, 0] = x
                    out[i, frame, 1] = y
                    frame += 1
            if not (math.isfinite(x) and math.isfinite(y)):
                diverged[i] = steps - 1

    @njit(parallel=True, nogil=True, cache=True)
    def em_rphi(init, alpha, beta, gamma, rmin, dt, dW, out, stride, diverged):
        n, steps, _ = dW.shape
        for i in prange(n):
            r = init[i, 0]
            phi = init[i, 1]
            out[i, 0, 0] = r
            out[i, 0, 1] = phi
            frame = 1
            for k in range(steps):
                r_new = r + (alpha / r) * dt + beta * dW[i, k, 0]
                phi_new = phi + (gamma / r) * dW[i, k, 1]
                if r_new < rmin:
                    r_new = 2.0 * rmin - r_new
                    if r_new < rmin:
                        r_new = rmin
                r = r_new
                phi = phi_new
                if not (math.isfinite(r) and math.isfinite(phi)):
                    diverged[i] = k
                    r = rmin
                    phi = 0.0
                if (k + 1) % stride == 0:
                    out[i, frame, 0] = r
                    out[i, frame, 1] = phi
                    frame += 1

    @njit(parallel=True, nogil=True, cache=True)
    def em_branch(init_x, init_s, two_over_m, e0, u1, u3, us, xm, xp,
                  sigma, dt, dW, stride, out_x, out_s, diverged):
        n, steps = dW.shape
        for i in prange(n):
            x = init_x[i]
            s = init_s[i]
            out_x[i, 0] = x
            out_s[i, 0] = s
            frame = 1
            for k in range(steps):
                x2 = x * x
                pot = 0.5 * u1 * x2 + 0.25 * u3 * (x2 * x2)
                if us != 0.0:
                    pot = pot + us * (1.0 - math.cos(x))
                vsq = two_over_m * (e0 - pot)
                drift = s * math.sqrt(max(vsq, 0.0))
                x_new = x + drift * dt + sigma * dW[i, k]
                if x_new > xp:
                    x_new = 2.0 * xp - x_new
                    s = -1.0
                if x_new < xm:
                    x_new = 2.0 * xm - x_new
                    s = 1.0
                if x_new > xp:
                    x_new = xp
                if x_new < xm:
                    x_new = xm
                x = x_new
                if not math.isfinite(x):
                    diverged[i] = k
                    x = 0.5 * (xm + xp)
                if (k + 1) % stride == 0:
                    out_x[i, frame] = x
                    out_s[i, frame] = s
                    frame += 1

    return SimpleNamespace(
        em_kinetic=em_kinetic,
        exact_linear=exact_linear,
        em_rphi=em_rphi,
        em_branch=em_branch,
        name="numba",
    )


def get_kernels(backend=None):
    """Kernel namespace for the requested backend (default: env selection)."""
    global _NUMBA_CACHE
    if backend is None:
        backend = BACKEND
    if backend == "numpy":
        return _NUMPY
    if backend == "numba":
        if not numba_available():
            raise RuntimeError("numba backend requested but numba is not importable")
        if _NUMBA_CACHE is None:
            _NUMBA_CACHE = _build_numba()
        return _NUMBA_CACHE
    raise ValueError(f"unknown backend {backend!r}")
