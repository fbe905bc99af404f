"""Euler-Maruyama stepping for the interacting particle system, the
frozen-law reference SDE, and the shared-noise coupled pair.

Randomness is addressed, not consumed: the Gaussian block for step k of a
system is a pure function of (seed, stream, k), drawn in particle-id order.
Rows are then gathered through the system's particle-id vector, so permuting
the storage order of particles permutes every later state array by exactly
the same permutation, bit for bit, and thread scheduling can never reorder
the noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.signal import lfilter

from ._rng import (
    CH_INIT,
    CH_SYSTEM,
    RngKey,
    block_normals,
    chunked_normals,
    keyed_generator,
    make_stream,
)
from .measures import EmpiricalMeasure, wasserstein2

DIVERGENCE_LIMIT = 1e8

__all__ = [
    "DIVERGENCE_LIMIT",
    "DivergenceError",
    "ParticleSystem",
    "Path",
    "CoupledPaths",
    "make_particle_system",
    "em_step",
    "simulate",
    "simulate_reference",
    "simulate_coupled",
    "estimate_invariant",
]


class DivergenceError(RuntimeError):
    """A state left the sane region (|x| > 1e8 or non-finite).

    Dissipative models never get here; reaching it signals a bad
    configuration (e.g. a step size far beyond the stability region).
    """

    def __init__(self, particle, time):
        self.particle = particle
        self.time = time
        super().__init__(f"divergence: particle {particle} at time {time:.6g}")


def _check_finite(states, ids, time):
    amax = float(np.abs(states).max())
    if not math.isfinite(amax) or amax > DIVERGENCE_LIMIT:
        rows = np.nonzero(~(np.abs(states) <= DIVERGENCE_LIMIT).all(axis=-1))[0]
        row = int(rows[0]) if rows.size else 0
        label = int(ids[row]) if ids is not None else row
        raise DivergenceError(label, time)


@dataclass(frozen=True)
class ParticleSystem:
    """State of N interacting particles at one instant.

    ``particle_ids`` names each storage row; noise and the empirical
    measure are always formed in id order, which is what makes relabeling
    rows an exact symmetry.  ``step_index`` addresses the next noise block.
    """

    model: object
    time: float
    states: np.ndarray = field(repr=False)
    rng_key: RngKey
    step_index: int = 0
    particle_ids: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        st = np.asarray(self.states, dtype=np.float64)
        if st.ndim != 2 or st.shape[1] != self.model.dim:
            raise ValueError(f"states must be (N, {self.model.dim}), got {st.shape}")
        ids = self.particle_ids
        if ids is None:
            ids = np.arange(st.shape[0], dtype=np.int64)
        else:
            ids = np.asarray(ids, dtype=np.int64)
            if sorted(ids.tolist()) != list(range(st.shape[0])):
                raise ValueError("particle_ids must be a permutation of 0..N-1")
        _check_finite(st, ids, self.time)
        st = st.copy()
        st.setflags(write=False)
        ids = ids.copy()
        ids.setflags(write=False)
        object.__setattr__(self, "states", st)
        object.__setattr__(self, "particle_ids", ids)

    @property
    def n_particles(self) -> int:
        return self.states.shape[0]

    def _advance(self, states: np.ndarray, time: float) -> "ParticleSystem":
        # internal fast path: states already divergence-checked and fresh
        states.setflags(write=False)
        obj = object.__new__(ParticleSystem)
        object.__setattr__(obj, "model", self.model)
        object.__setattr__(obj, "time", time)
        object.__setattr__(obj, "states", states)
        object.__setattr__(obj, "rng_key", self.rng_key)
        object.__setattr__(obj, "step_index", self.step_index + 1)
        object.__setattr__(obj, "particle_ids", self.particle_ids)
        return obj

    def empirical(self) -> EmpiricalMeasure:
        """Empirical measure of the cloud, atoms in id-canonical order."""
        canon = np.empty_like(self.states)
        canon[self.particle_ids] = self.states
        return EmpiricalMeasure._wrap(canon)


def make_particle_system(model, n, seed, replica=0, init=None) -> ParticleSystem:
    """Fresh system of n particles; default start is i.i.d. standard normal."""
    if init is None:
        key = RngKey(seed, make_stream(CH_INIT, replica))
        states = block_normals(key, 0, (n, model.dim))
    elif isinstance(init, EmpiricalMeasure):
        states = init.points
        if states.shape != (n, model.dim):
            raise ValueError(f"init cloud has shape {states.shape}, expected {(n, model.dim)}")
    else:
        states = np.asarray(init, dtype=np.float64)
        if states.ndim == 1:
            states = states[:, None]
        if states.shape != (n, model.dim):
            raise ValueError(f"init has shape {states.shape}, expected {(n, model.dim)}")
    return ParticleSystem(
        model=model,
        time=0.0,
        states=states,
        rng_key=RngKey(seed, make_stream(CH_SYSTEM, replica)),
    )


def _apply_sigma(model, states, mu, noise, sqdt):
    """sqrt(dt) * sigma(x, mu) xi for each row, honoring sigma_class."""
    cls = model.sigma_class
    if cls == "constant":
        S = np.asarray(model.diffusion(None, None))
        return sqdt * (noise @ S.T)
    if cls == "measure_only":
        S = np.asarray(model.diffusion(None, mu))
        return sqdt * (noise @ S.T)
    out = np.empty_like(noise)
    for i in range(states.shape[0]):
        out[i] = np.asarray(model.diffusion(states[i], mu)) @ noise[i]
    return sqdt * out


def em_step(ps: ParticleSystem, dt: float) -> ParticleSystem:
    """One explicit Euler-Maruyama step of the whole cloud.

    Every particle sees the complete empirical measure from before the step
    (synchronous update), and row i consumes noise row particle_ids[i] of
    the block addressed by step_index.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    states = ps.states
    mu = ps.empirical()
    drift = np.asarray(ps.model.drift(states, mu), dtype=np.float64)
    xi = block_normals(ps.rng_key, ps.step_index, states.shape)
    noise = xi[ps.particle_ids]
    new = states + drift * dt + _apply_sigma(ps.model, states, mu, noise, math.sqrt(dt))
    t_new = ps.time + dt
    _check_finite(new, ps.particle_ids, t_new)
    return ps._advance(new, t_new)


@dataclass(frozen=True)
class Path:
    """One tracked trajectory on a uniform grid."""

    times: np.ndarray
    states: np.ndarray
    dt: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        s = np.asarray(self.states, dtype=np.float64)
        if s.ndim == 1:
            s = s[:, None]
        if t.ndim != 1 or s.shape[0] != t.shape[0]:
            raise ValueError("times and states must align")
        if t.size > 1:
            gaps = np.diff(t)
            tol = 1e-12 * max(1.0, float(abs(t[-1])))
            if np.max(np.abs(gaps - self.dt)) > tol:
                raise ValueError("times must be uniform with spacing dt")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", s)


def _n_steps(T, dt) -> int:
    if T < 0:
        raise ValueError("horizon T must be nonnegative")
    if dt <= 0:
        raise ValueError("dt must be positive")
    ratio = T / dt
    k = round(ratio)
    if abs(ratio - k) > 1e-9:
        raise ValueError(f"T/dt must be an integer (got {ratio})")
    return int(k)


def simulate(ps: ParticleSystem, T, dt, track: Sequence[int] = ()):
    """Advance the system by T; returns (final system, tracked Paths).

    ``track`` lists particle ids whose trajectories are recorded at every
    grid time including the start.
    """
    k = _n_steps(T, dt)
    track = list(track)
    rows = []
    for pid in track:
        hit = np.nonzero(ps.particle_ids == pid)[0]
        if hit.size != 1:
            raise ValueError(f"unknown particle id {pid}")
        rows.append(int(hit[0]))
    t0 = ps.time
    recorded = [np.array([ps.states[r] for r in rows])] if rows else []
    cur = ps
    for i in range(k):
        cur = em_step(cur, dt)
        if rows:
            recorded.append(np.array([cur.states[r] for r in rows]))
    times = t0 + dt * np.arange(k + 1)
    paths = []
    if rows:
        stack = np.stack(recorded)  # (k+1, n_track, dim)
        for j in range(len(rows)):
            paths.append(Path(times=times, states=stack[:, j, :], dt=dt))
    return cur, paths


def simulate_reference(model, frozen_mu: EmpiricalMeasure, x0, T, dt,
                       rng_key: RngKey) -> Path:
    """Single trajectory of the Markov SDE with the measure pinned to frozen_mu.

    Noise is pre-addressed in fixed step blocks on rng_key, so the realized
    increments depend only on the key and the step index, never on the
    horizon.  Scalar models with an affine drift kernel and constant
    diffusion run through a compiled linear-filter recursion; the code path
    is chosen by the model alone, so reruns stay bit-identical.
    """
    if frozen_mu.n < 1:
        raise ValueError("frozen_mu must be nonempty")
    k = _n_steps(T, dt)
    x = np.asarray(x0, dtype=np.float64).reshape(model.dim)
    out = np.empty((k + 1, model.dim))
    out[0] = x
    if k == 0:
        return Path(times=dt * np.arange(1), states=out, dt=dt)
    noise = chunked_normals(rng_key, k, model.dim)
    sqdt = math.sqrt(dt)
    kernel = model.linear_kernel() if hasattr(model, "linear_kernel") else None
    if kernel is not None and model.sigma_class == "constant" and model.dim == 1:
        F, G, S = kernel
        a = 1.0 + float(F[0, 0]) * dt
        driving = float(G[0, 0]) * float(frozen_mu.mean()[0]) * dt + float(S[0, 0]) * sqdt * noise[:, 0]
        y, _ = lfilter([1.0], [1.0, -a], driving, zi=np.array([a * float(x[0])]))
        bad = ~(np.abs(y) <= DIVERGENCE_LIMIT)
        if bad.any():
            j = int(np.nonzero(bad)[0][0])
            raise DivergenceError(0, (j + 1) * dt)
        out[1:, 0] = y
    else:
        for i in range(k):
            drift = np.asarray(model.drift(x, frozen_mu), dtype=np.float64).reshape(model.dim)
            S = np.asarray(model.diffusion(x, frozen_mu))
            x = x + drift * dt + sqdt * (S @ noise[i])
            _check_finite(x[None, :], None, (i + 1) * dt)
            out[i + 1] = x
    return Path(times=dt * np.arange(k + 1), states=out, dt=dt)


@dataclass(frozen=True)
class CoupledPaths:
    """Mean-field path and frozen-law reference path under one noise.

    ``deterministic_bound_applies`` is False when the diffusion reads the
    state, in which case the two paths see different noise amplitudes and
    the pathwise contraction bound is not a deterministic statement.
    """

    path_x: Path
    path_xbar: Path
    shared_noise: bool
    deterministic_bound_applies: bool

    def __post_init__(self):
        if not np.array_equal(self.path_x.times, self.path_xbar.times):
            raise ValueError("coupled paths must share one time grid")


def simulate_coupled(model, init_x, init_xbar, frozen_mu: EmpiricalMeasure,
                     law_proxy: ParticleSystem, T, dt,
                     rng_key: RngKey) -> CoupledPaths:
    """Shared-noise pair: X under the live empirical law, Xbar under frozen_mu.

    The caller supplies (init_x, init_xbar) from a W2-optimal coupling of
    the two initial clouds.  law_proxy supplies the live law and advances in
    lockstep on its own noise stream; the pair consumes one Gaussian
    increment per step from rng_key, identical for both paths.
    """
    if law_proxy.model.dim != model.dim:
        raise ValueError("law proxy does not match the model dimension")
    k = _n_steps(T, dt)
    x = np.asarray(init_x, dtype=np.float64).reshape(model.dim)
    xb = np.asarray(init_xbar, dtype=np.float64).reshape(model.dim)
    xs = np.empty((k + 1, model.dim))
    xbs = np.empty_like(xs)
    xs[0], xbs[0] = x, xb
    proxy = law_proxy
    sqdt = math.sqrt(dt)
    for i in range(k):
        mu_hat = proxy.empirical()
        zeta = block_normals(rng_key, i, (model.dim,))
        bx = np.asarray(model.drift(x, mu_hat), dtype=np.float64).reshape(model.dim)
        bxb = np.asarray(model.drift(xb, frozen_mu), dtype=np.float64).reshape(model.dim)
        Sx = np.asarray(model.diffusion(x, mu_hat))
        Sxb = np.asarray(model.diffusion(xb, frozen_mu))
        x = x + bx * dt + sqdt * (Sx @ zeta)
        xb = xb + bxb * dt + sqdt * (Sxb @ zeta)
        t_new = (i + 1) * dt
        try:
            _check_finite(x[None, :], None, t_new)
            _check_finite(xb[None, :], None, t_new)
        except DivergenceError as e:
            raise DivergenceError("coupled pair", e.time) from None
        proxy = em_step(proxy, dt)
        xs[i + 1], xbs[i + 1] = x, xb
    times = dt * np.arange(k + 1)
    return CoupledPaths(
        path_x=Path(times=times, states=xs, dt=dt),
        path_xbar=Path(times=times, states=xbs, dt=dt),
        shared_noise=True,
        deterministic_bound_applies=model.sigma_class in ("constant", "measure_only"),
    )


def _residual_w2(cloud_a: np.ndarray, cloud_b: np.ndarray) -> float:
    """Stationarity diagnostic between two snapshots of the same cloud.

    Full sorted matching in dimension 1; in higher dimension the assignment
    solve caps at 1024 rows, taken as a strided subsample in id order.
    """
    a = EmpiricalMeasure._wrap(cloud_a)
    b = EmpiricalMeasure._wrap(cloud_b)
    if a.dim == 1:
        return wasserstein2(a, b, method="sorted1d")
    n = a.n
    if n <= 1024:
        return wasserstein2(a, b, method="assignment")
    stride = -(-n // 1024)
    idx = np.arange(0, n, stride)
    return wasserstein2(
        EmpiricalMeasure._wrap(cloud_a[idx]),
        EmpiricalMeasure._wrap(cloud_b[idx]),
        method="assignment",
    )


def estimate_invariant(model, N, T_burn, T_avg, dt, seed):
    """Empirical invariant measure by burn-in plus settling.

    Runs the N-particle system for T_burn, then another T_avg, and returns
    the final cloud together with a stationarity residual: the exact W2
    between the clouds at T_burn + T_avg/2 and at the end (subsampled above
    1024 rows in dimension > 1).  A residual far above the N^-1/2 sampling
    scale says the horizon was too short.
    """
    if T_burn <= 0 or T_avg <= 0:
        raise ValueError("T_burn and T_avg must be positive")
    ps = make_particle_system(model, N, seed)
    ps, _ = simulate(ps, T_burn, dt)
    half = round(T_avg / (2 * dt)) * dt
    ps, _ = simulate(ps, half, dt)
    mid = ps.empirical().points
    ps, _ = simulate(ps, T_avg - half, dt)
    final = ps.empirical().points
    residual = _residual_w2(mid, final)
    return EmpiricalMeasure(final), float(residual)
