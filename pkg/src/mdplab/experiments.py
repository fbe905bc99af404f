"""Experiment harnesses: contraction curves, tail curves, equivalence, probes.

Each operation turns simulations into one quantitative table.  Replica loops
run in fixed-size batches with per-batch keyed noise streams, so outputs are
a function of (model, parameters, seed) alone — thread count never changes a
byte.  Rare-event rows are never logged at -inf: zero-hit rows switch to the
Wilson 95% upper bound and carry saturated=1.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from ._rng import CH_INIT, CH_SYSTEM, RngKey, block_normals, keyed_generator, make_stream
from .functionals import ScalingFunction
from .integrator import (
    DIVERGENCE_LIMIT,
    DivergenceError,
    _n_steps,
    em_step,
    make_particle_system,
)
from .measures import EmpiricalMeasure, optimal_pairing, wasserstein2
from .models import HypothesisReport, SHSModel, psi_equivalence_constant

# replica batch width of the tail drivers; part of the noise-keying scheme,
# so changing it changes sample paths (not just speed)
BATCH_REPLICAS = 250

_WILSON_Z = 1.959963984540054  # Phi^{-1}(0.975)


# --------------------------------------------------------------------------
# result rows


@dataclass(frozen=True)
class CurveRow:
    t: float
    observed: float
    bound: float
    ratio: float


@dataclass(frozen=True)
class TailEstimate:
    """One horizon of a rare-event tail table."""

    t: float
    replicas: int
    hits: int
    p_hat: float
    wilson_low: float
    wilson_high: float
    normalized_log_tail: float
    saturated: bool

    def __post_init__(self):
        if not 0.0 <= self.p_hat <= 1.0:
            raise ValueError(f"p_hat {self.p_hat} outside [0, 1]")
        if not self.wilson_low <= self.p_hat <= self.wilson_high:
            raise ValueError("Wilson interval must contain p_hat")


@dataclass(frozen=True)
class MdpTailResult:
    rows: tuple
    rate8: float  # -y^2 / (8 vbar)
    rate4: float  # -y^2 / (4 vbar)
    y: float
    kappa: float
    vbar: float
    l_samples: tuple = field(compare=False, repr=False, default=())


@dataclass(frozen=True)
class EquivalenceResult:
    rows: tuple
    outcome: str  # strictly_decreasing | all_saturated | strictly_increasing | mixed
    epsilon: float
    kappa: float


@dataclass(frozen=True)
class ProbeRow:
    kind: str
    delta: float
    T: float
    log_mean_exp: float
    saturated: bool


@dataclass(frozen=True)
class ProbeTable:
    kind: str
    rows: tuple
    all_saturated_deltas: tuple


@dataclass(frozen=True)
class CltCheck:
    t: float
    replicas: int
    sample_variance: float
    stderr: float


def wilson_interval(hits: int, n: int) -> tuple:
    """95% Wilson score interval for a binomial proportion."""
    if not 0 <= hits <= n or n <= 0:
        raise ValueError(f"need 0 <= hits <= n, got hits={hits}, n={n}")
    z2 = _WILSON_Z * _WILSON_Z
    p = hits / n
    denom = 1.0 + z2 / n
    center = (p + z2 / (2 * n)) / denom
    half = (_WILSON_Z / denom) * math.sqrt(p * (1 - p) / n + z2 / (4.0 * n * n))
    lo = 0.0 if hits == 0 else max(0.0, center - half)  # exact endpoints, no fp dust
    hi = 1.0 if hits == n else min(1.0, center + half)
    return lo, hi


def tail_estimate(values, threshold: float, t: float, scaling,
                  strict: bool = False) -> TailEstimate:
    """Exceedance row for #{values >= threshold} with Wilson zero-hit handling."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    hits = int(((values > threshold) if strict else (values >= threshold)).sum())
    lo, hi = wilson_interval(hits, n)
    p_hat = hits / n
    saturated = hits == 0
    p_used = hi if saturated else p_hat
    nlt = float(scaling.speed(t) * math.log(p_used))
    return TailEstimate(
        t=float(t), replicas=n, hits=hits, p_hat=p_hat,
        wilson_low=lo, wilson_high=hi,
        normalized_log_tail=nlt, saturated=saturated,
    )


def parallel_map(fn, items, threads: int = 1):
    """Order-preserving map; results always reduced in item order."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------
# batched tagged-particle engine
#
# Each replica is an independent n-particle system; functionals are read off
# particle 0 ("tagged").  Optionally a reference copy driven by the frozen
# law rides along, sharing the tagged particle's noise, so pathwise
# differences are true coupling differences.  Integrals use the trapezoid
# rule on the step grid; horizon snapshots are nested into a single run.


def _init_states(nu0, batch: int, n: int, dim: int, seed: int, batch_index: int):
    if nu0 is None:
        key = RngKey(seed, make_stream(CH_INIT, batch_index))
        return block_normals(key, 0, (batch, n, dim))
    pts = nu0.points
    if nu0.n == n:
        return np.broadcast_to(pts, (batch, n, dim)).copy()
    if nu0.n == 1:
        return np.broadcast_to(pts[0], (batch, n, dim)).copy()
    key = RngKey(seed, make_stream(CH_INIT, batch_index))
    idx = keyed_generator(key, 0).integers(nu0.n, size=(batch, n))
    return pts[idx]


def _batch_widths(replicas: int):
    sizes = [BATCH_REPLICAS] * (replicas // BATCH_REPLICAS)
    if replicas % BATCH_REPLICAS:
        sizes.append(replicas % BATCH_REPLICAS)
    return sizes


def _run_one_batch(model, *, batch_index, batch, n, dt, n_steps, snap_steps,
                   seed, nu0, frozen_mu, integrands, need_reference, track_sup):
    dim = model.dim
    kernel = model.linear_kernel()
    fast = kernel is not None and model.sigma_class == "constant"
    if fast:
        F, G, S = kernel
        Ft, Gt, St = F.T.copy(), G.T.copy(), S.T.copy()
    noise_key = RngKey(seed, make_stream(CH_SYSTEM, batch_index))
    sqdt = math.sqrt(dt)

    states = _init_states(nu0, batch, n, dim, seed, batch_index)
    x_tag = states[:, 0, :].copy()
    xbar = x_tag.copy() if need_reference else None
    if need_reference and fast:
        ref_drift_const = frozen_mu.mean() @ Gt

    names = [name for name, _ in integrands]
    fns = [fn for _, fn in integrands]
    prev = [fn(x_tag, xbar) for fn in fns]
    acc = [np.zeros(batch) for _ in fns]
    sup = (x_tag * x_tag).sum(axis=-1) if track_sup else None

    out = {name: [] for name in names}
    if track_sup:
        out["sup"] = []
    snap_iter = iter(snap_steps)
    next_snap = next(snap_iter)
    if next_snap == 0:
        for name, a in zip(names, acc):
            out[name].append(a.copy())
        if track_sup:
            out["sup"].append(sup.copy())
        next_snap = next(snap_iter, None)

    for step in range(n_steps):
        xi = block_normals(noise_key, step, (batch, n, dim))
        if fast:
            mean = states.mean(axis=1, keepdims=True)
            states = states + dt * (states @ Ft + mean @ Gt) + sqdt * (xi @ St)
            if need_reference:
                xbar = xbar + dt * (xbar @ Ft + ref_drift_const) + sqdt * (xi[:, 0, :] @ St)
        else:
            new = np.empty_like(states)
            for b in range(batch):
                mu_b = EmpiricalMeasure._wrap(states[b])
                drift = model.drift(states[b], mu_b)
                sig = _sigma_rows(model, states[b], mu_b, xi[b], sqdt)
                new[b] = states[b] + dt * drift + sig
            states = new
            if need_reference:
                drift = model.drift(xbar, frozen_mu)
                xbar = xbar + dt * drift + _sigma_rows(model, xbar, frozen_mu, xi[:, 0, :], sqdt)

        absmax = np.abs(states)
        if not absmax.max() <= DIVERGENCE_LIMIT:
            _, p_idx, _ = np.unravel_index(int(np.argmax(absmax)), absmax.shape)
            raise DivergenceError(particle=int(p_idx), time=(step + 1) * dt)
        x_tag = states[:, 0, :]
        cur = [fn(x_tag, xbar) for fn in fns]
        for a, p, c in zip(acc, prev, cur):
            a += 0.5 * dt * (p + c)
        prev = cur
        if track_sup:
            np.maximum(sup, (x_tag * x_tag).sum(axis=-1), out=sup)
        if next_snap is not None and step + 1 == next_snap:
            for name, a in zip(names, acc):
                out[name].append(a.copy())
            if track_sup:
                out["sup"].append(sup.copy())
            next_snap = next(snap_iter, None)
    return {k: np.stack(v) for k, v in out.items()}


def _sigma_rows(model, rows, mu, xi, sqdt):
    cls = model.sigma_class
    if cls in ("constant", "measure_only"):
        S = np.asarray(model.diffusion(None, None if cls == "constant" else mu))
        return sqdt * (xi @ S.T)
    out = np.empty_like(rows)
    for i in range(rows.shape[0]):
        out[i] = np.asarray(model.diffusion(rows[i], mu)) @ xi[i]
    return sqdt * out


def _run_tagged_batches(model, *, horizons, replicas, n, dt, seed, nu0=None,
                        frozen_mu=None, integrands, need_reference=False,
                        track_sup=False, threads=1):
    """Per-horizon replica arrays of trapezoid integrals (and running sup).

    Returns (snap_times, {name: array of shape (n_horizons, replicas)}).
    """
    if replicas <= 0:
        raise ValueError(f"replicas must be positive, got {replicas}")
    if need_reference and frozen_mu is None:
        raise ValueError("reference coupling requested without a frozen law")
    horizons = sorted({float(t) for t in horizons})
    if not horizons:
        raise ValueError("need at least one horizon")
    if horizons[0] < 0:
        raise ValueError(f"horizons must be nonnegative, got {horizons[0]}")
    snap_steps = tuple(_n_steps(t, dt) for t in horizons)
    n_steps = snap_steps[-1]

    def work(idx_width):
        batch_index, width = idx_width
        return _run_one_batch(
            model, batch_index=batch_index, batch=width, n=n, dt=dt,
            n_steps=n_steps, snap_steps=snap_steps, seed=seed, nu0=nu0,
            frozen_mu=frozen_mu, integrands=integrands,
            need_reference=need_reference, track_sup=track_sup,
        )

    widths = _batch_widths(replicas)
    parts = parallel_map(work, list(enumerate(widths)), threads=threads)
    merged = {k: np.concatenate([p[k] for p in parts], axis=1) for k in parts[0]}
    return np.asarray(horizons), merged


# --------------------------------------------------------------------------
# contraction


def _contraction_gap(model) -> float:
    if isinstance(model, SHSModel):
        if model.theta1 is None or model.theta2 is None or model.r is None:
            raise ValueError("model is not certified; run certify_shs first")
        C = psi_equivalence_constant(model.r, model.r0, model.matB)
        return (model.theta1 - model.theta2) / (2.0 * C)
    return model.lambda1 - model.lambda2


def contraction_experiment(model, nu0: EmpiricalMeasure, horizons, N: int,
                           dt: float, seed: int, *, mu_bar_hat: EmpiricalMeasure):
    """Decay of the squared transport distance to the invariant cloud.

    One N-particle run from nu0; at each horizon the cloud is matched
    against mu_bar_hat exactly.  A t=0 row is always present, so the first
    ratio is an estimator identity (== 1).
    """
    if nu0.n == 0:
        raise ValueError("nu0 must be nonempty")
    if mu_bar_hat.n != N:
        raise ValueError(
            f"mu_bar_hat has {mu_bar_hat.n} atoms; need N={N} for exact matching")
    gap = _contraction_gap(model)
    horizons = sorted({float(t) for t in horizons} | {0.0})
    snap_steps = [_n_steps(t, dt) for t in horizons]

    init = nu0 if nu0.n == N else None
    if init is None:
        if nu0.n == 1:
            init = EmpiricalMeasure(np.broadcast_to(nu0.points[0], (N, model.dim)))
        else:
            raise ValueError(f"nu0 has {nu0.n} atoms; need N or a single atom")
    ps = make_particle_system(model, N, seed, init=init)
    w0_sq = wasserstein2(init, mu_bar_hat) ** 2

    rows = []
    target = dict(zip(snap_steps, horizons))
    for step in range(snap_steps[-1] + 1):
        if step in target:
            t = target[step]
            w_sq = float(wasserstein2(ps.empirical(), mu_bar_hat) ** 2)
            bound = float(w0_sq * math.exp(-gap * t))
            ratio = w_sq / bound if bound > 0 else float("nan")
            rows.append(CurveRow(t=t, observed=w_sq, bound=bound, ratio=ratio))
        if step < snap_steps[-1]:
            ps = em_step(ps, dt)
    return rows


# --------------------------------------------------------------------------
# pathwise coupling bound


def pathwise_contraction_check(model, n_pairs: int, T: float, dt: float,
                               seed: int, *, mu_bar_hat: EmpiricalMeasure,
                               nu0: EmpiricalMeasure | None = None,
                               n_law: int | None = None) -> HypothesisReport:
    """Per-pair, per-time check of the discrete coupling envelope.

    margin = |X_t - Xbar_t|^2
             - max(|X_0 - Xbar_0|^2, W2(nu, mu_bar)^2) e^{-(l1-l2) t} (1 + 10 dt t)

    Pairs are tagged particles of one system; each reference copy shares its
    particle's noise and starts at the transport-matched atom of mu_bar_hat.
    """
    if model.sigma_class not in ("constant", "measure_only"):
        raise ValueError(
            f"sigma_class {model.sigma_class!r} admits no deterministic envelope")
    if n_pairs <= 0:
        raise ValueError("n_pairs must be positive")
    n = n_law if n_law is not None else max(1024, n_pairs)
    if n < n_pairs:
        raise ValueError("n_law must be at least n_pairs")
    gap = model.lambda1 - model.lambda2
    n_steps = _n_steps(T, dt)

    if nu0 is None:
        key = RngKey(seed, make_stream(CH_INIT, 0))
        states = block_normals(key, 0, (n, model.dim))
    elif nu0.n == n:
        states = nu0.points.copy()
    elif nu0.n == 1:
        states = np.broadcast_to(nu0.points[0], (n, model.dim)).copy()
    else:
        raise ValueError(f"nu0 has {nu0.n} atoms; need {n} or a single atom")
    nu_cloud = EmpiricalMeasure(states)
    if mu_bar_hat.n != n:
        raise ValueError(
            f"mu_bar_hat has {mu_bar_hat.n} atoms; need n_law={n} for matching")
    match = optimal_pairing(nu_cloud, mu_bar_hat)
    w0_sq = float(wasserstein2(nu_cloud, mu_bar_hat) ** 2)
    xbar = mu_bar_hat.points[match[:n_pairs]].copy()

    u0 = ((states[:n_pairs] - xbar) ** 2).sum(axis=1)
    envelope0 = np.maximum(u0, w0_sq)

    noise_key = RngKey(seed, make_stream(CH_SYSTEM, 0))
    sqdt = math.sqrt(dt)
    worst = -math.inf
    witness = None
    for step in range(n_steps):
        xi = block_normals(noise_key, step, (n, model.dim))
        mu = EmpiricalMeasure._wrap(states)
        drift = model.drift(states, mu)
        states = states + dt * drift + _sigma_rows(model, states, mu, xi, sqdt)
        ref_drift = model.drift(xbar, mu_bar_hat)
        xbar = xbar + dt * ref_drift + _sigma_rows(
            model, xbar, mu_bar_hat, xi[:n_pairs], sqdt)
        if not np.abs(states).max() <= DIVERGENCE_LIMIT:
            raise DivergenceError(particle=int(np.argmax(np.abs(states).max(axis=-1))),
                                  time=(step + 1) * dt)
        t = (step + 1) * dt
        lhs = ((states[:n_pairs] - xbar) ** 2).sum(axis=1)
        bound = envelope0 * math.exp(-gap * t) * (1.0 + 10.0 * dt * t)
        margins = lhs - bound
        i = int(np.argmax(margins))
        if margins[i] > worst:
            worst = float(margins[i])
            witness = {
                "pair": i, "time": t, "lhs": float(lhs[i]), "bound": float(bound[i]),
                "x": states[i].tolist(), "xbar": xbar[i].tolist(),
            }
    passed = worst <= 0.0
    return HypothesisReport(
        name="pathwise_contraction", trials=n_pairs, worst_margin=worst,
        tolerance=0.0, passed=passed, witness=witness,
        extra={"T": T, "dt": dt, "n_law": n, "gap": gap, "w0_sq": w0_sq},
    )


# --------------------------------------------------------------------------
# tail experiments


class _SqrtScaling:
    """CLT diagnostic scaling a(t) = sqrt(t): tail scale sqrt(t), speed 1."""

    kappa = 0.5

    @staticmethod
    def a(t):
        return math.sqrt(t)

    @staticmethod
    def tail_scale(t):
        return math.sqrt(t)

    @staticmethod
    def speed(t):
        return 1.0


def _observable_integrand(A, on_reference=False):
    if on_reference:
        return lambda x, xbar: np.asarray(A.eval(xbar), dtype=np.float64)
    return lambda x, xbar: np.asarray(A.eval(x), dtype=np.float64)


def mdp_tail_experiment(model, A, y: float, kappa: float, horizons, replicas: int,
                        N: int, dt: float, seed: int, *, vbar: float,
                        mu_bar_A: float, nu0: EmpiricalMeasure | None = None,
                        threads: int = 1) -> MdpTailResult:
    """Tail table of the rescaled additive functional along a tagged particle.

    l_t = t^{1-kappa} (t^{-1} int_0^t A(X^0_s) ds - mu_bar_A); rows report
    P(l_t >= y) per horizon with both candidate Gaussian reference rates.
    """
    scaling = ScalingFunction(kappa)
    if y <= 0:
        raise ValueError(f"threshold y must be positive, got {y}")
    if vbar <= 0:
        raise ValueError(f"vbar must be positive, got {vbar}")
    if min(horizons) <= 0:
        raise ValueError("tail horizons must be positive")
    times, tables = _run_tagged_batches(
        model, horizons=horizons, replicas=replicas, n=N, dt=dt, seed=seed,
        nu0=nu0, integrands=[("A", _observable_integrand(A))], threads=threads,
    )
    rows = []
    samples = []
    for t, integral in zip(times, tables["A"]):
        l = scaling.tail_scale(t) * (integral / t - mu_bar_A)
        rows.append(tail_estimate(l, y, t, scaling))
        samples.append(l)
    return MdpTailResult(
        rows=tuple(rows),
        rate8=-(y * y) / (8.0 * vbar),
        rate4=-(y * y) / (4.0 * vbar),
        y=y, kappa=kappa, vbar=vbar,
        l_samples=tuple(samples),
    )


def clt_variance_check(model, A, mu_bar_A: float, t: float, replicas: int,
                       N: int, dt: float, seed: int, *,
                       nu0: EmpiricalMeasure | None = None,
                       threads: int = 1) -> CltCheck:
    """Sample variance of t^{-1/2} int_0^t (A - mu_bar_A) ds (CLT-scale mode)."""
    if t <= 0:
        raise ValueError(f"horizon must be positive, got {t}")
    scaling = _SqrtScaling()
    _, tables = _run_tagged_batches(
        model, horizons=[t], replicas=replicas, n=N, dt=dt, seed=seed,
        nu0=nu0, integrands=[("A", _observable_integrand(A))], threads=threads,
    )
    integral = tables["A"][0]
    l = scaling.tail_scale(t) * (integral / t - mu_bar_A)
    var = float(l.var(ddof=1))
    # chi-square spread of a sample variance, Gaussian reference
    stderr = var * math.sqrt(2.0 / (replicas - 1)) if replicas > 1 else float("inf")
    return CltCheck(t=float(t), replicas=replicas, sample_variance=var, stderr=stderr)


def _classify_outcome(rows) -> str:
    if all(r.saturated for r in rows):
        return "all_saturated"
    vals = [r.normalized_log_tail for r in rows]
    if all(b < a for a, b in zip(vals, vals[1:])):
        return "strictly_decreasing"
    if all(b > a for a, b in zip(vals, vals[1:])):
        return "strictly_increasing"
    return "mixed"


def exp_equivalence_experiment(model, A, epsilon: float, kappa: float, horizons,
                               replicas: int, N: int, dt: float, seed: int, *,
                               mu_bar_hat: EmpiricalMeasure,
                               nu0: EmpiricalMeasure | None = None,
                               threads: int = 1) -> EquivalenceResult:
    """Tail table of P(|l_t - lbar_t| > eps) under the shared-noise coupling.

    The reference copy runs on the frozen law mu_bar_hat with the tagged
    particle's own noise, so the difference isolates the mean-field error.
    """
    scaling = ScalingFunction(kappa)
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if min(horizons) <= 0:
        raise ValueError("tail horizons must be positive")
    times, tables = _run_tagged_batches(
        model, horizons=horizons, replicas=replicas, n=N, dt=dt, seed=seed,
        nu0=nu0, frozen_mu=mu_bar_hat, need_reference=True,
        integrands=[
            ("A", _observable_integrand(A)),
            ("Abar", _observable_integrand(A, on_reference=True)),
        ],
        threads=threads,
    )
    rows = []
    for t, ax, abar in zip(times, tables["A"], tables["Abar"]):
        diff = np.abs(scaling.tail_scale(t) * (ax - abar) / t)
        # strict exceedance: count > epsilon, not >=
        rows.append(tail_estimate(diff, epsilon, t, scaling, strict=True))
    return EquivalenceResult(
        rows=tuple(rows), outcome=_classify_outcome(rows),
        epsilon=epsilon, kappa=kappa,
    )


# --------------------------------------------------------------------------
# integrability probes


def _probe_integrand(kind: str):
    """Pair integrand g(x, xbar); None marks the sup-of-state kind."""
    if kind == "abs":
        return lambda x, xbar: np.linalg.norm(x - xbar, axis=-1)
    if kind.startswith("hoelder(") and kind.endswith(")"):
        alpha = float(kind[8:-1])
        if not 0 < alpha <= 1:
            raise ValueError(f"hoelder exponent must be in (0, 1], got {alpha}")

        def g(x, xbar):
            sep = np.linalg.norm(x - xbar, axis=-1)
            grow = 1.0 + np.linalg.norm(x, axis=-1) + np.linalg.norm(xbar, axis=-1)
            return sep**alpha * grow ** (2.0 - alpha)

        return g
    if kind.startswith("logmod(") and kind.endswith(")"):
        p = float(kind[7:-1])
        if p <= 0:
            raise ValueError(f"logmod exponent must be positive, got {p}")

        def g(x, xbar):
            sq = (x * x).sum(axis=-1) + (xbar * xbar).sum(axis=-1)
            sep = np.linalg.norm(x - xbar, axis=-1)
            with np.errstate(divide="ignore"):
                inv = np.where(sep > 0, 1.0 / sep, np.inf)
            return (1.0 + sq) / (np.log(math.e + sq) * np.log(math.e + inv) ** p)

        return g
    if kind == "supexp":
        return None
    raise ValueError(f"unknown probe kind {kind!r}")


def _log_mean_exp(exponents) -> tuple:
    """(log E exp(e), overflowed) with the shift trick; flag means a raw
    exp would have overflowed float64."""
    e = np.asarray(exponents, dtype=np.float64)
    m = float(e.max())
    val = m + math.log(float(np.mean(np.exp(e - m))))
    return val, m > 700.0


def integrability_probe(model, kind: str, delta_grid, T_grid, replicas: int,
                        dt: float, seed: int, *, mu_bar_hat: EmpiricalMeasure,
                        N: int = 1024, nu0: EmpiricalMeasure | None = None,
                        threads: int = 1) -> ProbeTable:
    """log Ê[exp{delta G_T}] per (delta, T) for coupled-pair integrands.

    kind=abs/hoelder(a)/logmod(p): G_T is the pathwise integral of the class
    envelope along (X, Xbar).  kind=supexp: the exponent is
    delta sup_{t<=T} |X_t|^2.  A plateau in T reads as "the exponential
    moment exists at this delta".
    """
    deltas = [float(d) for d in delta_grid]
    if any(d < 0 for d in deltas):
        raise ValueError("delta_grid must be nonnegative")
    g = _probe_integrand(kind)
    track_sup = g is None
    integrands = [] if track_sup else [("G", lambda x, xbar: g(x, xbar))]
    times, tables = _run_tagged_batches(
        model, horizons=T_grid, replicas=replicas, n=N, dt=dt, seed=seed,
        nu0=nu0, frozen_mu=mu_bar_hat, need_reference=True,
        integrands=integrands, track_sup=track_sup, threads=threads,
    )
    base = tables["sup"] if track_sup else tables["G"]
    rows = []
    saturated_count = {d: 0 for d in deltas}
    for d in deltas:
        for t, G in zip(times, base):
            if d == 0.0:
                val, overflow = 0.0, False
            else:
                val, overflow = _log_mean_exp(d * G)
            rows.append(ProbeRow(kind=kind, delta=d, T=float(t),
                                 log_mean_exp=val, saturated=overflow))
            saturated_count[d] += overflow
    all_sat = tuple(d for d in deltas if saturated_count[d] == len(times))
    return ProbeTable(kind=kind, rows=tuple(rows), all_saturated_deltas=all_sat)


# --------------------------------------------------------------------------
# delimited output + provenance


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))  # shortest round-trip decimal
    return str(v)


def _write_atomic(path: str, text: str):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_rows_csv(path: str, header, rows):
    """rows: iterables of scalars, formatted shortest-round-trip, LF endings."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    _write_atomic(path, "\n".join(lines) + "\n")


TAIL_HEADER = ("t", "replicas", "hits", "p_hat", "wilson_low", "wilson_high",
               "norm_log_tail", "saturated")
MDP_TAIL_HEADER = TAIL_HEADER + ("rate8", "rate4")


def _tail_cells(r: TailEstimate):
    return (r.t, r.replicas, r.hits, r.p_hat, r.wilson_low, r.wilson_high,
            r.normalized_log_tail, int(r.saturated))


def write_mdp_tail_csv(path: str, result: MdpTailResult):
    write_rows_csv(path, MDP_TAIL_HEADER,
                   [_tail_cells(r) + (result.rate8, result.rate4)
                    for r in result.rows])


def write_tail_csv(path: str, rows):
    write_rows_csv(path, TAIL_HEADER, [_tail_cells(r) for r in rows])


def write_curve_csv(path: str, rows):
    write_rows_csv(path, ("t", "observed", "bound", "ratio"),
                   [(r.t, r.observed, r.bound, r.ratio) for r in rows])


def write_probe_csv(path: str, table: ProbeTable):
    write_rows_csv(path, ("kind", "delta", "T", "log_mean_exp", "saturated"),
                   [(r.kind, r.delta, r.T, r.log_mean_exp, int(r.saturated))
                    for r in table.rows])


def write_report_csv(path: str, reports):
    write_rows_csv(path, ("name", "trials", "worst_margin", "tolerance", "passed"),
                   [(r.name, r.trials, r.worst_margin, r.tolerance, r.passed)
                    for r in reports])


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if dataclasses.is_dataclass(v) and not isinstance(v, type):
        return {k: _jsonable(x) for k, x in dataclasses.asdict(v).items()}
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def write_provenance(csv_path: str, experiment: str, params: dict, extra=None):
    """Sidecar <output>.meta.json; the record alone re-runs the output."""
    doc = {
        "artifact_version": __version__,
        "experiment": experiment,
        "params": _jsonable(params),
    }
    if extra:
        doc["extra"] = _jsonable(extra)
    _write_atomic(csv_path + ".meta.json",
                  json.dumps(doc, indent=2, sort_keys=True) + "\n")
