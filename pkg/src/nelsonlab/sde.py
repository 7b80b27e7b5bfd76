"""Ito SDE integration engine and trajectory-ensemble management.

Drift/diffusion callables are vectorized over a leading batch axis:
``drift(state, t)`` maps an ``(n, d)`` state block to ``(n, d)`` and
``diffusion(state, t)`` to ``(n, d, k)``. Euler-Maruyama evaluates both
at the left endpoint (Ito convention). Models from
:mod:`nelsonlab.models` additionally carry a kernel hint so ensembles
run through the compiled stepping kernels; systems without a hint fall
back to the generic callable loop.
"""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import __version__
from ._backend import BACKEND
from ._kernels import get_kernels
from .errors import GridError, IntegrationDivergedError, ParameterError
from .rng import trajectory_stream


@dataclass(frozen=True)
class SdeSystem:
    """Drift/diffusion field pair defining a d-dimensional Ito SDE.

    driving is "wiener" (k independent Wiener processes) or "external"
    (a pre-synthesized forcing path consumed as a drift term on
    component ``forcing_component``; ``forcing_builder(streams, dt,
    steps)`` must return one forcing row per stream).
    """

    dimension: int
    drift: Callable
    diffusion: Callable
    k: int = 1
    driving: str = "wiener"
    forcing_builder: Optional[Callable] = None
    forcing_component: int = 1
    constrain: Optional[Callable] = None
    kernel: Optional[tuple] = None
    labels: tuple = ("x", "v")
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dimension < 1:
            raise ParameterError("dimension must be >= 1")
        if self.driving == "wiener" and self.k < 1:
            raise ParameterError("need k >= 1 Wiener drivers")
        if self.driving == "external" and self.forcing_builder is None:
            raise ParameterError("external driving needs a forcing builder")
        if self.driving not in ("wiener", "external"):
            raise ParameterError(f"unknown driving {self.driving!r}")


@dataclass
class TrajectoryEnsemble:
    """N sampled paths on a shared uniform time grid, plus provenance.

    ``paths`` has shape (n_traj, frames, d) where frames are the steps
    multiples of ``stride`` (inclusive of step 0 and the final step).
    ``meta`` is sufficient to regenerate the ensemble bit-exactly.
    """

    paths: np.ndarray
    t0: float
    dt: float
    steps: int
    stride: int
    meta: dict

    @property
    def n_traj(self):
        return self.paths.shape[0]

    @property
    def frames(self):
        return self.paths.shape[1]

    @property
    def frame_dt(self):
        return self.dt * self.stride

    @property
    def times(self):
        return self.t0 + self.frame_dt * np.arange(self.frames)

    @property
    def labels(self):
        return tuple(self.meta.get("labels", [f"c{i}" for i in range(self.paths.shape[2])]))

    def component(self, which):
        if isinstance(which, str):
            which = self.labels.index(which)
        return self.paths[:, :, which]

    def frame_index(self, t):
        """Frame index of time t; GridError if t is off the stored grid."""
        idx = int(round((t - self.t0) / self.frame_dt))
        if idx < 0 or idx >= self.frames:
            raise GridError(f"time {t} outside stored range")
        if abs(self.t0 + idx * self.frame_dt - t) > 1e-9 * max(1.0, abs(t)):
            raise GridError(f"time {t} not on the stored grid (frame dt {self.frame_dt})")
        return idx

    def states_at(self, t):
        return self.paths[:, self.frame_index(t), :]

    def save(self, directory):
        """One CSV per component (rows = time, columns = trajectories) + meta.json."""
        os.makedirs(directory, exist_ok=True)
        times = self.times
        for ci, label in enumerate(self.labels):
            table = np.column_stack([times, self.paths[:, :, ci].T])
            header = "t," + ",".join(f"traj_{i}" for i in range(self.n_traj))
            np.savetxt(os.path.join(directory, f"{label}.csv"), table,
                       fmt="%.17g", delimiter=",", header=header, comments="")
        meta = dict(self.meta)
        meta.update(t0=self.t0, dt=self.dt, steps=self.steps, stride=self.stride,
                    n_traj=self.n_traj, labels=list(self.labels))
        with open(os.path.join(directory, "meta.json"), "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, directory):
        with open(os.path.join(directory, "meta.json")) as fh:
            meta = json.load(fh)
        labels = meta["labels"]
        comps = []
        for label in labels:
            table = np.loadtxt(os.path.join(directory, f"{label}.csv"),
                               delimiter=",", skiprows=1, ndmin=2)
            comps.append(table[:, 1:].T)
        paths = np.stack(comps, axis=-1)
        return cls(paths=paths, t0=meta["t0"], dt=meta["dt"], steps=meta["steps"],
                   stride=meta["stride"], meta=meta)


def point_sampler(state):
    """Initial-condition sampler concentrated on one state."""
    state = np.asarray(state, dtype=float)

    def sample(stream):
        return state.copy()

    return sample


def _validate_run(dt, steps, stride, n_traj):
    if dt <= 0:
        raise ParameterError("dt must be positive")
    if steps < 1:
        raise ParameterError("steps must be >= 1")
    if n_traj < 1:
        raise ParameterError("need n_traj >= 1")
    if stride < 1 or steps % stride != 0:
        raise ParameterError("stride must divide steps")


def _generic_chunk(system, init_states, dW, forcing, t0, dt, stride, out, diverged):
    """Euler-Maruyama on a block of trajectories with callable fields."""
    n, steps, _k = dW.shape
    state = init_states.copy()
    out[:, 0, :] = state
    frame = 1
    const_diff = system.params.get("diffusion_matrix")
    with np.errstate(over="ignore", invalid="ignore"):
        for ki in range(steps):
            t = t0 + ki * dt
            f = system.drift(state, t)
            if const_diff is not None:
                inc = dW[:, ki, :] @ const_diff.T
            else:
                g = system.diffusion(state, t)
                inc = np.einsum("nij,nj->ni", g, dW[:, ki, :])
            state = state + f * dt + inc
            if forcing is not None:
                state[:, system.forcing_component] += forcing[:, ki] * dt
            if system.constrain is not None:
                state = system.constrain(state)
            bad = ~np.isfinite(state.sum(axis=1))
            if bad.any():
                fresh = bad & (diverged < 0)
                diverged[fresh] = ki
                state[bad] = 0.0
            if (ki + 1) % stride == 0:
                out[:, frame, :] = state
                frame += 1


def _exact_linear_coeffs(omega, eps, dt):
    """One-step transition matrix and noise Cholesky factor for
    dx = v dt, dv = -w^2 x dt + eps w dW (conditionally Gaussian)."""
    wh = omega * dt
    c, s = np.cos(wh), np.sin(wh)
    m11, m12 = c, s / omega
    m21, m22 = -omega * s, c
    q11 = eps**2 * (dt / 2.0 - np.sin(2 * wh) / (4 * omega))
    q12 = eps**2 * np.sin(wh) ** 2 / 2.0
    q22 = eps**2 * omega**2 * (dt / 2.0 + np.sin(2 * wh) / (4 * omega))
    if q11 <= 0.0:
        l11 = l21 = l22 = 0.0
    else:
        l11 = np.sqrt(q11)
        l21 = q12 / l11
        l22 = np.sqrt(max(q22 - l21**2, 0.0))
    return (m11, m12, m21, m22), (l11, l21, l22)


def _run_kernel_chunk(system, kernels, init_states, draws, aux, dt, stride,
                      out, diverged, method):
    kind, kp = system.kernel
    if method == "exact":
        if kind != "kinetic" or kp.get("b3") or kp.get("bs") or kp.get("inv_mass") != 1.0:
            raise ParameterError("exact sampling is only defined for the linear oscillator")
        omega = np.sqrt(kp["b1"])
        eps = kp["sigma"] / omega
        (m11, m12, m21, m22), (l11, l21, l22) = _exact_linear_coeffs(omega, eps, dt)
        kernels.exact_linear(init_states, m11, m12, m21, m22, l11, l21, l22,
                             draws, stride, out, diverged)
    elif kind == "kinetic":
        forcing = aux if aux is not None else np.zeros((1, 1))
        kernels.em_kinetic(init_states, kp["inv_mass"], kp["b1"], kp["b3"],
                           kp["bs"], kp["sigma"], forcing, aux is not None,
                           dt, stride, draws, out, diverged)
    elif kind == "rphi":
        kernels.em_rphi(init_states, kp["alpha"], kp["beta"], kp["gamma"],
                        kp["rmin"], dt, draws, out, stride, diverged)
    elif kind == "branch":
        out_x = np.empty(out.shape[:2])
        out_s = np.empty(out.shape[:2])
        kernels.em_branch(init_states[:, 0].copy(), init_states[:, 1].copy(),
                          kp["two_over_m"], kp["e0"], kp["u1"], kp["u3"],
                          kp["us"], kp["xm"], kp["xp"], kp["sigma"],
                          dt, draws, stride, out_x, out_s, diverged)
        out[:, :, 0] = out_x
        out[:, :, 1] = out_s
    else:
        raise ParameterError(f"unknown kernel kind {kind!r}")


def run_ensemble(system, init_sampler, n_traj, dt, steps, master_seed,
                 t0=0.0, stride=1, threads=1, method="em", backend=None,
                 raise_on_divergence=True):
    """Integrate N independent trajectories.

    Trajectory i draws from the counter-based stream (master_seed, i):
    initial state, then forcing phases (external driving only), then
    Wiener increments. The result is identical for any thread count or
    chunking of the work.

    method="exact" uses the one-step-exact Gaussian transition of the
    linear oscillator instead of Euler-Maruyama (linear systems only).
    """
    _validate_run(dt, steps, stride, n_traj)
    if method not in ("em", "exact"):
        raise ParameterError(f"unknown method {method!r}")
    kernels = get_kernels(backend) if system.kernel is not None else None
    frames = steps // stride + 1
    d = system.dimension
    out = np.empty((n_traj, frames, d))
    diverged = np.full(n_traj, -1, dtype=np.int64)

    if system.driving == "external":
        k_draw = 0
    elif method == "exact":
        k_draw = 2
    else:
        k_draw = system.k

    sqdt = np.sqrt(dt)
    max_block = max(1, int(4_000_000 // max(steps * max(k_draw, 1), 1)))

    def run_block(lo, hi):
        n = hi - lo
        init_states = np.empty((n, d))
        draws = np.empty((n, steps, k_draw)) if k_draw else None
        streams = []
        for j in range(n):
            stream = trajectory_stream(master_seed, lo + j)
            init_states[j] = init_sampler(stream)
            streams.append(stream)
        forcing = None
        if system.driving == "external":
            forcing = system.forcing_builder(streams, dt, steps)
        if k_draw:
            for j, stream in enumerate(streams):
                if method == "exact":
                    draws[j] = stream.standard_normal((steps, 2))
                else:
                    draws[j] = stream.standard_normal((steps, k_draw)) * sqdt
        if system.kernel is not None:
            if system.kernel[0] == "kinetic" and method == "em":
                block_draws = draws[:, :, 0] if k_draw else np.zeros((n, steps))
                _run_kernel_chunk(system, kernels, init_states, block_draws,
                                  forcing, dt, stride, out[lo:hi], diverged[lo:hi],
                                  method)
            elif system.kernel[0] == "branch":
                _run_kernel_chunk(system, kernels, init_states, draws[:, :, 0],
                                  None, dt, stride, out[lo:hi], diverged[lo:hi], method)
            else:
                _run_kernel_chunk(system, kernels, init_states, draws,
                                  forcing, dt, stride, out[lo:hi], diverged[lo:hi],
                                  method)
        else:
            if method == "exact":
                raise ParameterError("exact sampling needs a linear-oscillator kernel hint")
            if draws is None:
                draws = np.zeros((n, steps, max(system.k, 1)))
            _generic_chunk(system, init_states, draws, forcing, t0, dt, stride,
                           out[lo:hi], diverged[lo:hi])

    blocks = [(lo, min(lo + max_block, n_traj)) for lo in range(0, n_traj, max_block)]
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda b: run_block(*b), blocks))
    else:
        for b in blocks:
            run_block(*b)

    if raise_on_divergence and (diverged >= 0).any():
        i = int(np.argmax(diverged >= 0))
        raise IntegrationDivergedError(step=int(diverged[i]), trajectory=i)

    meta = {
        "master_seed": int(master_seed),
        "model": system.name,
        "params": {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                   for k, v in system.params.items() if _jsonable(v)},
        "labels": list(system.labels),
        "method": method,
        "backend": kernels.name if kernels is not None else "numpy-generic",
        "version": __version__,
    }
    return TrajectoryEnsemble(paths=out, t0=t0, dt=dt, steps=steps,
                              stride=stride, meta=meta)


def _jsonable(v):
    return isinstance(v, (int, float, str, bool, list, tuple, np.ndarray)) or v is None


def integrate_em(system, init, dt, steps, stream):
    """Single Euler-Maruyama path (steps+1, d) driven by `stream`.

    Left-endpoint (Ito) evaluation of drift and diffusion; raises
    IntegrationDivergedError with the failing step on NaN/overflow.
    """
    _validate_run(dt, steps, 1, 1)
    init = np.asarray(init, dtype=float).reshape(1, -1)
    out = np.empty((1, steps + 1, system.dimension))
    diverged = np.full(1, -1, dtype=np.int64)
    forcing = None
    if system.driving == "external":
        forcing = system.forcing_builder([stream], dt, steps)
        dW = np.zeros((1, steps, max(system.k, 1)))
    else:
        dW = stream.standard_normal((1, steps, system.k)) * np.sqrt(dt)
    _generic_chunk(system, init, dW, forcing, 0.0, dt, 1, out, diverged)
    if diverged[0] >= 0:
        raise IntegrationDivergedError(step=int(diverged[0]))
    return out[0]


def integrate_exact_linear(omega, eps_force, init, dt, steps, stream):
    """Exact conditional-Gaussian sampling of dx = v dt, dv = -w^2 x dt + eps w dW.

    The one-step transition is the rotation of (x, v) plus the exactly
    integrated noise covariance, so moments are invariant under step
    splitting; reference integrator for the oscillator tests.
    """
    _validate_run(dt, steps, 1, 1)
    (m11, m12, m21, m22), (l11, l21, l22) = _exact_linear_coeffs(omega, eps_force, dt)
    z = stream.standard_normal((1, steps, 2))
    out = np.empty((1, steps + 1, 2))
    diverged = np.full(1, -1, dtype=np.int64)
    get_kernels("numpy").exact_linear(np.asarray(init, dtype=float).reshape(1, 2),
                                      m11, m12, m21, m22, l11, l21, l22,
                                      z, 1, out, diverged)
    if diverged[0] >= 0:
        raise IntegrationDivergedError(step=int(diverged[0]))
    return out[0]


def active_backend():
    """Name of the kernel backend selected by the environment."""
    return BACKEND
