"""Additive functionals, moderate scalings, observable classes, asymptotic
variance, the rate function, and the empirical Cramer functional.

The asymptotic variance is estimated in Green-Kubo form on the frozen-law
reference process: integrate the stationary autocovariance of the observable
up to a fixed truncation lag, average over independent replicas, and report
the replica standard error.  Nothing here is adaptive; the truncation and
step are recorded in the estimate so a run can be reproduced exactly.
"""
from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._rng import CH_CHECK, CH_INIT, CH_REFERENCE, RngKey, keyed_generator, make_stream
from .integrator import Path, simulate_reference
from .models import HypothesisReport

__all__ = [
    "Observable",
    "make_observable",
    "check_observable_class",
    "ScalingFunction",
    "scaling_check",
    "VarianceEstimate",
    "additive_functional",
    "moderate_functional",
    "autocovariance",
    "asymptotic_variance",
    "rate_function",
    "cramer_functional",
    "legendre_transform",
    "SATURATED",
]


class _Saturated:
    """Sentinel for an exponential estimate beyond float range."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "SATURATED"


SATURATED = _Saturated()


@dataclass(frozen=True)
class Observable:
    """Scalar observable with a declared regularity class.

    ``reg_class`` is one of "lipschitz", "hoelder" (with exponent alpha in
    (0,1)), or "log_modulus" (with power p > 1).  ``class_const`` is the
    declared finite supremum of the class ratio; for the Lipschitz class it
    coincides with ``lip_const``.  ``eval`` maps arrays of shape (..., D)
    to shape (...).
    """

    eval: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    reg_class: str
    class_const: float
    lip_const: Optional[float] = None
    alpha: Optional[float] = None
    p: Optional[float] = None
    name: str = "custom"

    def __post_init__(self):
        if self.reg_class == "lipschitz":
            if self.lip_const is None or self.lip_const <= 0:
                raise ValueError("lipschitz observables need a positive lip_const")
        elif self.reg_class == "hoelder":
            if self.alpha is None or not 0 < self.alpha < 1:
                raise ValueError(f"hoelder exponent must lie in (0,1), got {self.alpha}")
        elif self.reg_class == "log_modulus":
            if self.p is None or not self.p > 1:
                raise ValueError(f"log_modulus power must exceed 1, got {self.p}")
        else:
            raise ValueError(f"unknown reg_class {self.reg_class!r}")
        if self.class_const <= 0:
            raise ValueError("class_const must be positive")


_OBS_CALL = re.compile(r"^([a-z_0-9]+)\(([^)]*)\)$")


def make_observable(name: str, **params) -> Observable:
    """Catalogue lookup: identity, norm2, constant(c), coordinate(i).

    ``identity`` is the first coordinate; ``norm2`` the squared Euclidean
    norm, which is not Lipschitz but lies in the hoelder(alpha) class with
    constant 1 for every alpha (since |x-y| <= 1 + |x| + |y|).
    Parenthesized forms like "constant(2.5)" carry their parameter inline.
    """
    m = _OBS_CALL.match(name.strip())
    if m:
        name = m.group(1)
        arg = m.group(2).strip()
        if name == "constant" and "c" not in params:
            params["c"] = float(arg)
        elif name == "coordinate" and "i" not in params:
            params["i"] = int(arg)
    if name == "identity":
        return Observable(
            eval=lambda x: np.asarray(x)[..., 0],
            reg_class="lipschitz", lip_const=1.0, class_const=1.0, name="identity",
        )
    if name == "coordinate":
        i = int(params["i"])
        if i < 0:
            raise ValueError("coordinate index must be nonnegative")
        return Observable(
            eval=lambda x: np.asarray(x)[..., i],
            reg_class="lipschitz", lip_const=1.0, class_const=1.0,
            name=f"coordinate({i})",
        )
    if name == "constant":
        c = float(params["c"])
        return Observable(
            eval=lambda x: np.full(np.asarray(x).shape[:-1], c),
            reg_class="lipschitz", lip_const=1.0, class_const=1.0,
            name=f"constant({c})",
        )
    if name == "norm2":
        return Observable(
            eval=lambda x: (np.asarray(x) ** 2).sum(axis=-1),
            reg_class="hoelder", alpha=0.5, class_const=1.0, name="norm2",
        )
    raise ValueError(f"unknown observable {name!r}")


def _class_ratio(A: Observable, x, y) -> float:
    dA = abs(float(A.eval(x)) - float(A.eval(y)))
    sep = float(np.linalg.norm(x - y))
    if sep == 0.0:
        return 0.0
    if A.reg_class == "lipschitz":
        return dA / sep
    nx, ny = float(np.linalg.norm(x)), float(np.linalg.norm(y))
    if A.reg_class == "hoelder":
        return dA / (sep**A.alpha * (1.0 + nx + ny) ** (2.0 - A.alpha))
    # log_modulus: the modulus multiplies the numerator, so near pairs are
    # the demanding regime
    return (
        dA
        * math.log(math.e + nx**2 + ny**2)
        * math.log(math.e + 1.0 / sep) ** A.p
        / (1.0 + nx**2 + ny**2)
    )


def check_observable_class(A: Observable, seed=0, n_trials=20_000, dim=1) -> HypothesisReport:
    """Sampled supremum of the declared class ratio (refuter semantics).

    Pairs are drawn with log-uniform radii and separations across six
    decades, so both far-field growth and near-diagonal modulus blowups get
    probed.  Pass means no sampled ratio exceeded class_const; fail carries
    the worst pair as witness and genuinely disproves the declaration.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    rng = keyed_generator(RngKey(seed, make_stream(CH_CHECK, 2)), step=0)
    worst = -np.inf
    witness = None
    for i in range(n_trials):
        u = rng.standard_normal(dim)
        u /= max(float(np.linalg.norm(u)), 1e-300)
        v = rng.standard_normal(dim)
        v /= max(float(np.linalg.norm(v)), 1e-300)
        radius = math.exp(rng.uniform(math.log(1e-3), math.log(1e3)))
        sep = math.exp(rng.uniform(math.log(1e-6), math.log(1e3)))
        x = radius * u
        y = x + sep * v
        ratio = _class_ratio(A, x, y)
        if ratio > worst:
            worst = ratio
            witness = {"trial": i, "x": x.tolist(), "y": y.tolist(), "ratio": ratio}
    return HypothesisReport(
        name=f"observable_class_{A.reg_class}",
        trials=n_trials,
        worst_margin=float(worst),
        tolerance=A.class_const,
        passed=bool(worst <= A.class_const),
        witness=witness,
        extra={"observable": A.name, "dim": dim},
    )


@dataclass(frozen=True)
class ScalingFunction:
    """Moderate-deviation scaling a(t) = t^kappa with 1/2 < kappa < 1.

    The window guarantees sqrt(t)/a(t) -> 0 (above the CLT scale) and
    a(t)/t -> 0 (below the LLN scale).
    """

    kappa: float

    def __post_init__(self):
        if not scaling_check(self.kappa):
            raise ValueError(f"kappa must lie strictly in (1/2, 1), got {self.kappa}")

    def a(self, t):
        return t**self.kappa

    def tail_scale(self, t):
        """t / a(t) = t^(1-kappa), the moderate normalization."""
        return t ** (1.0 - self.kappa)

    def speed(self, t):
        """t / a(t)^2 = t^(1-2 kappa), the large-deviation speed."""
        return t ** (1.0 - 2.0 * self.kappa)


def scaling_check(kappa) -> bool:
    """True iff t^kappa sits strictly between the CLT and LLN scales."""
    return 0.5 < kappa < 1.0


@dataclass(frozen=True)
class VarianceEstimate:
    """Green-Kubo asymptotic variance with its replica standard error."""

    vbar: float
    stderr: float
    truncation_tau: float
    dt: float
    replica_values: tuple = ()

    def __post_init__(self):
        if self.vbar < 0:
            raise ValueError("vbar must be nonnegative")
        if self.stderr < 0:
            raise ValueError("stderr must be nonnegative")


def additive_functional(path: Path, A: Observable) -> float:
    """Time average (1/t) * trapezoid of A along the path."""
    vals = np.asarray(A.eval(path.states), dtype=np.float64)
    if vals.shape[0] == 1:
        return float(vals[0])
    span = float(path.times[-1] - path.times[0])
    return float(np.trapezoid(vals, dx=path.dt) / span)


def moderate_functional(L: float, mu_bar_A: float, t: float, a: ScalingFunction) -> float:
    """(t/a(t)) * (L - mu_bar_A), the moderately rescaled deviation."""
    if t <= 0:
        raise ValueError("t must be positive")
    return float(a.tail_scale(t) * (L - mu_bar_A))


def autocovariance(path: Path, A: Observable, max_lag: float):
    """Empirical autocovariance of A along the path, FFT-accelerated.

    Returns (lags, c) with c[k] the average of centered products at lag
    k*dt, normalized by the number of pairs at that lag.  Requires the path
    span to cover at least 10 times max_lag.
    """
    vals = np.asarray(A.eval(path.states), dtype=np.float64)
    n = vals.shape[0]
    span = float(path.times[-1] - path.times[0])
    if max_lag <= 0:
        raise ValueError("max_lag must be positive")
    if max_lag > span / 10.0 + 1e-12:
        raise ValueError(f"max_lag {max_lag} too large for path span {span} (need 10x)")
    k_max = int(round(max_lag / path.dt))
    y = vals - vals.mean()
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(y, nfft)
    acov = np.fft.irfft(spec * np.conj(spec), nfft)[: k_max + 1]
    counts = n - np.arange(k_max + 1)
    lags = path.dt * np.arange(k_max + 1)
    return lags, acov / counts


def asymptotic_variance(model, A: Observable, mu_bar_hat, T, dt, tau,
                        n_replicas=8, seed=0) -> VarianceEstimate:
    """Green-Kubo estimate of the asymptotic variance on the reference SDE.

    Each replica starts at an atom of mu_bar_hat (a draw from the invariant
    proxy), runs the frozen-law reference dynamics for T, integrates its
    autocovariance out to lag tau by trapezoid, and the estimates are
    averaged with a replica standard error.  Tiny negative averages from
    truncation noise are clamped to zero.
    """
    if tau > T / 10.0:
        raise ValueError("truncation tau must not exceed T/10")
    if n_replicas < 1:
        raise ValueError("need at least one replica")
    values = []
    for rep in range(n_replicas):
        pick = keyed_generator(RngKey(seed, make_stream(CH_INIT, rep)), step=1)
        x0 = mu_bar_hat.points[int(pick.integers(mu_bar_hat.n))]
        key = RngKey(seed, make_stream(CH_REFERENCE, rep))
        path = simulate_reference(model, mu_bar_hat, x0, T, dt, key)
        lags, c = autocovariance(path, A, tau)
        values.append(float(np.trapezoid(c, dx=dt)))
    arr = np.asarray(values)
    vbar = float(arr.mean())
    stderr = float(arr.std(ddof=1) / math.sqrt(n_replicas)) if n_replicas > 1 else 0.0
    return VarianceEstimate(
        vbar=max(vbar, 0.0),
        stderr=stderr,
        truncation_tau=float(tau),
        dt=float(dt),
        replica_values=tuple(values),
    )


def rate_function(y: float, vbar: float) -> float:
    """Quadratic moderate-deviation rate y^2 / (8 vbar)."""
    if vbar <= 0:
        raise ValueError("vbar must be positive")
    return float(y) ** 2 / (8.0 * vbar)


def cramer_functional(l_samples, z: float, t: float, a: ScalingFunction):
    """Finite-replica plug-in of the Cramer functional at argument z.

    Computes (t/a(t)^2) * log mean exp((a(t)^2/t) * z * l_r) over replica
    values l_r.  If the largest exponent exceeds 700 the estimate is beyond
    float range and the SATURATED sentinel is returned instead of a value.
    """
    l = np.asarray(l_samples, dtype=np.float64)
    if l.size == 0:
        raise ValueError("need at least one sample")
    if t <= 0:
        raise ValueError("t must be positive")
    inv_speed = a.a(t) ** 2 / t
    expo = inv_speed * z * l
    m = float(expo.max())
    if m > 700.0:
        return SATURATED
    # shifted log-sum-exp keeps the value finite for any unsaturated input
    log_mean = m + math.log(float(np.exp(expo - m).mean()))
    return float(log_mean / inv_speed)


def legendre_transform(lambda_grid, y: float) -> float:
    """Grid Legendre conjugate: max over (z, v) pairs of z*y - v.

    The maximum only sees the convex envelope of the input, so non-convex
    grids (beyond a small tolerance) are accepted but flagged with a
    warning.  Needs at least three grid points.
    """
    grid = np.asarray(lambda_grid, dtype=np.float64)
    if grid.ndim != 2 or grid.shape[1] != 2:
        raise ValueError("lambda_grid must be (n, 2) pairs (z, value)")
    if grid.shape[0] < 3:
        raise ValueError("need at least 3 grid points")
    order = np.argsort(grid[:, 0])
    z, v = grid[order, 0], grid[order, 1]
    dz = np.diff(z)
    if np.any(dz <= 0):
        raise ValueError("grid z values must be distinct")
    slopes = np.diff(v) / dz
    scale = max(1.0, float(np.abs(v).max()))
    if np.any(np.diff(slopes) < -1e-8 * scale):
        warnings.warn(
            "lambda grid is not convex; the conjugate equals that of its convex envelope",
            stacklevel=2,
        )
    return float(np.max(z * y - v))
