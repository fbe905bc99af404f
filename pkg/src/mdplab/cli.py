"""Configuration-driven command line runner.

One experiment per invocation: a JSON config names a catalogue model and an
experiment with parameters; outputs are CSV tables plus a JSON provenance
sidecar that suffices to reproduce them byte-for-byte.  Exit codes: 0
success, 1 runtime failure, 2 configuration failure — nothing else.
"""

from __future__ import annotations

import argparse
import difflib
import json
import os
import sys

import numpy as np

from .functionals import asymptotic_variance, make_observable, scaling_check
from .integrator import estimate_invariant, make_particle_system, simulate
from .measures import EmpiricalMeasure, from_samples, write_measure_csv
from .models import (
    DDSDEModel,
    HypothesisReport,
    SHSModel,
    certify_shs,
    check_H1,
    check_H2,
    check_D3,
    kalman_rank,
    make_mean_field_ou,
    make_shs_linear,
)
from ._rng import CH_PROBE, RngKey, keyed_generator, make_stream
from .experiments import (
    clt_variance_check,  # noqa: F401  (library-only diagnostic, kept importable)
    contraction_experiment,
    exp_equivalence_experiment,
    integrability_probe,
    mdp_tail_experiment,
    pathwise_contraction_check,
    write_curve_csv,
    write_mdp_tail_csv,
    write_probe_csv,
    write_provenance,
    write_report_csv,
    write_rows_csv,
    write_tail_csv,
)
from .report import render_out_dir


class ConfigError(Exception):
    """Configuration failure; maps to exit code 2."""


# --------------------------------------------------------------------------
# schema machinery


def _unknown(key, allowed, where):
    hint = difflib.get_close_matches(key, list(allowed), n=1, cutoff=0.6)
    msg = f"unknown key {key!r} in {where}"
    if hint:
        msg += f" (did you mean {hint[0]!r}?)"
    raise ConfigError(msg)


def _check_keys(doc, allowed, where):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be a JSON object, got {type(doc).__name__}")
    for key in doc:
        if key not in allowed:
            _unknown(key, allowed, where)


def _num(doc, key, default, where, *, positive=False, nonneg=False, integer=False):
    v = doc.get(key, default)
    if v is None:
        raise ConfigError(f"{where}.{key} is required")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key} must be a number, got {v!r}")
    if integer:
        if int(v) != v:
            raise ConfigError(f"{where}.{key} must be an integer, got {v!r}")
        v = int(v)
    else:
        v = float(v)
    if positive and not v > 0:
        raise ConfigError(f"{where}.{key} must be positive, got {v}")
    if nonneg and v < 0:
        raise ConfigError(f"{where}.{key} must be nonnegative, got {v}")
    return v


def _num_list(doc, key, default, where, *, positive=False):
    v = doc.get(key, default)
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{where}.{key} must be a nonempty list of numbers")
    out = []
    for x in v:
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise ConfigError(f"{where}.{key} entries must be numbers, got {x!r}")
        if positive and not x > 0:
            raise ConfigError(f"{where}.{key} entries must be positive, got {x}")
        out.append(float(x))
    return out


def _kappa(doc, where):
    v = _num(doc, "kappa", 0.75, where)
    if not scaling_check(v):
        raise ConfigError(
            f"{where}.kappa={v} rejected: the moderate-deviation scaling "
            "a(t) = t^kappa requires 1/2 < kappa < 1")
    return v


def _grid(doc, where, T_key="T", dt_key="dt", T_default=None, dt_default=None):
    T = _num(doc, T_key, T_default, where, positive=True)
    dt = _num(doc, dt_key, dt_default, where, positive=True)
    if round(T / dt) < 1 or abs(T / dt - round(T / dt)) > 1e-9 * max(1.0, T / dt):
        raise ConfigError(f"{where}: {T_key}={T} is not an integer multiple of {dt_key}={dt}")
    return T, dt


def _observable(doc, where, default="identity"):
    name = doc.get("A", default)
    if not isinstance(name, str):
        raise ConfigError(f"{where}.A must be an observable name, got {name!r}")
    try:
        return make_observable(name)
    except ValueError as e:
        raise ConfigError(f"{where}.A: {e}") from None


def _nu0(doc, where, default):
    v = doc.get("nu0", default)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.nu0 must be a number (single-atom start) or null")
    return float(v)


_INVARIANT_KEYS = ("N", "T_burn", "T_avg", "dt")


def _invariant_block(doc, where, N_default=2000, force_N=None):
    sub = doc.get("invariant", {})
    _check_keys(sub, _INVARIANT_KEYS, f"{where}.invariant")
    N = _num(sub, "N", force_N if force_N is not None else N_default,
             f"{where}.invariant", positive=True, integer=True)
    if force_N is not None and N != force_N:
        raise ConfigError(
            f"{where}.invariant.N={N} must match the experiment cloud size {force_N}")
    Tb = _num(sub, "T_burn", 20.0, f"{where}.invariant", positive=True)
    Ta = _num(sub, "T_avg", 20.0, f"{where}.invariant", positive=True)
    dt = _num(sub, "dt", 0.01, f"{where}.invariant", positive=True)
    return {"N": N, "T_burn": Tb, "T_avg": Ta, "dt": dt}


_VARIANCE_KEYS = ("A", "T", "dt", "tau", "n_replicas")


def _variance_block(doc, where):
    sub = doc.get("variance", {})
    _check_keys(sub, _VARIANCE_KEYS, f"{where}.variance")
    w = f"{where}.variance"
    T, dt = _grid(sub, w, T_default=2000.0, dt_default=0.01)
    tau = _num(sub, "tau", 20.0, w, positive=True)
    if tau > T / 10:
        raise ConfigError(
            f"{w}: truncation tau={tau} must satisfy tau <= T/10 = {T / 10}")
    reps = _num(sub, "n_replicas", 8, w, positive=True, integer=True)
    return {"T": T, "dt": dt, "tau": tau, "n_replicas": reps}


# --------------------------------------------------------------------------
# model catalogue


def _build_model(doc):
    _check_keys(doc, ("name", "theta", "eta", "sigma0", "gamma", "k", "eps_int"),
                "model")
    name = doc.get("name")
    if name == "mean_field_ou":
        _check_keys(doc, ("name", "theta", "eta", "sigma0"), "model")
        return make_mean_field_ou(
            _num(doc, "theta", 1.0, "model", positive=True),
            _num(doc, "eta", 0.5, "model", nonneg=True),
            _num(doc, "sigma0", 1.0, "model", positive=True),
        )
    if name == "shs_linear":
        _check_keys(doc, ("name", "gamma", "k", "eps_int", "sigma0"), "model")
        return make_shs_linear(
            gamma=_num(doc, "gamma", 1.0, "model", positive=True),
            k=_num(doc, "k", 1.0, "model", positive=True),
            eps_int=_num(doc, "eps_int", 0.1, "model", nonneg=True),
            sigma0=_num(doc, "sigma0", 1.0, "model", positive=True),
        )
    if name is None:
        raise ConfigError("model.name is required")
    raise ConfigError(
        f"unknown model {name!r}; catalogue: mean_field_ou, shs_linear")


def _model_record(model):
    if isinstance(model, SHSModel):
        z = model.z_affine
        return {"name": "shs_linear", "gamma": float(-z.c2[0, 0]),
                "k": float(-z.c1[0, 0]), "eps_int": float(z.eps_mean2),
                "sigma0": float(model.matM[0, 0])}
    a = model.affine
    return {"name": "mean_field_ou", "theta": a.theta, "eta": a.eta,
            "sigma0": a.sigma0}


# --------------------------------------------------------------------------
# experiment schemas

EXPERIMENTS = ("check", "simulate", "invariant", "variance", "contraction",
               "pathwise", "mdp-tail", "equivalence", "probe")

_EXP_KEYS = {
    "check": ("name", "trials", "support", "tolerance"),
    "simulate": ("name", "N", "T", "dt", "track", "init"),
    "invariant": ("name",) + _INVARIANT_KEYS,
    "variance": ("name", "A", "T", "dt", "tau", "n_replicas", "invariant"),
    "contraction": ("name", "nu0", "horizons", "N", "dt", "invariant"),
    "pathwise": ("name", "n_pairs", "T", "dt", "nu0", "n_law", "invariant"),
    "mdp-tail": ("name", "A", "y", "kappa", "horizons", "replicas", "N", "dt",
                 "nu0", "variance", "invariant"),
    "equivalence": ("name", "A", "epsilon", "kappa", "horizons", "replicas",
                    "N", "dt", "nu0", "invariant"),
    "probe": ("name", "kind", "delta_grid", "T_grid", "replicas", "N", "dt",
              "nu0", "invariant"),
}


def _parse_experiment(doc, model):
    name = doc.get("name")
    if name not in EXPERIMENTS:
        if name is None:
            raise ConfigError("experiment.name is required")
        hint = difflib.get_close_matches(name, EXPERIMENTS, n=1, cutoff=0.6)
        extra = f" (did you mean {hint[0]!r}?)" if hint else ""
        raise ConfigError(f"unknown experiment {name!r}{extra}")
    _check_keys(doc, _EXP_KEYS[name], "experiment")
    w = "experiment"
    p = {"name": name}
    if name == "check":
        p["trials"] = _num(doc, "trials", 10_000, w, positive=True, integer=True)
        p["support"] = _num(doc, "support", 8, w, positive=True, integer=True)
        p["tolerance"] = _num(doc, "tolerance", 1e-9, w, nonneg=True)
    elif name == "simulate":
        p["N"] = _num(doc, "N", 1000, w, positive=True, integer=True)
        p["T"], p["dt"] = _grid(doc, w, T_default=10.0, dt_default=0.01)
        track = doc.get("track", [0])
        if (not isinstance(track, list)
                or any(isinstance(i, bool) or not isinstance(i, int) for i in track)):
            raise ConfigError(f"{w}.track must be a list of particle indices")
        if any(not 0 <= i < p["N"] for i in track):
            raise ConfigError(f"{w}.track indices must lie in [0, N)")
        p["track"] = track
        p["init"] = _nu0({"nu0": doc.get("init")}, w, None)
    elif name == "invariant":
        p.update(_invariant_block({"invariant": {k: doc[k] for k in doc
                                                 if k != "name"}}, w))
    elif name == "variance":
        p["A"] = doc.get("A", "identity")
        _observable(doc, w)
        sub = {k: doc[k] for k in ("T", "dt", "tau", "n_replicas") if k in doc}
        p.update(_variance_block({"variance": sub}, w))
        p["invariant"] = _invariant_block(doc, w)
    elif name == "contraction":
        p["N"] = _num(doc, "N", 2000, w, positive=True, integer=True)
        p["dt"] = _num(doc, "dt", 0.01, w, positive=True)
        p["horizons"] = _num_list(doc, "horizons",
                                  [0.5 * k for k in range(1, 11)], w, positive=True)
        p["nu0"] = _nu0(doc, w, 2.0)
        p["invariant"] = _invariant_block(doc, w, force_N=p["N"])
    elif name == "pathwise":
        if not isinstance(model, DDSDEModel):
            raise ConfigError(
                "experiment 'pathwise' needs the explicit two-constant model "
                "class; the hypoelliptic catalogue model has no such envelope")
        p["n_pairs"] = _num(doc, "n_pairs", 256, w, positive=True, integer=True)
        p["T"], p["dt"] = _grid(doc, w, T_default=5.0, dt_default=0.005)
        p["n_law"] = _num(doc, "n_law", 1024, w, positive=True, integer=True)
        if p["n_law"] < p["n_pairs"]:
            raise ConfigError(f"{w}.n_law must be at least n_pairs")
        p["nu0"] = _nu0(doc, w, 2.0)
        p["invariant"] = _invariant_block(doc, w, force_N=p["n_law"])
    elif name == "mdp-tail":
        p["A"] = doc.get("A", "identity")
        _observable(doc, w)
        p["y"] = _num(doc, "y", 0.5, w, positive=True)
        p["kappa"] = _kappa(doc, w)
        p["horizons"] = _num_list(doc, "horizons", [50.0, 100.0, 200.0], w,
                                  positive=True)
        p["replicas"] = _num(doc, "replicas", 10_000, w, positive=True, integer=True)
        p["N"] = _num(doc, "N", 1000, w, positive=True, integer=True)
        p["dt"] = _num(doc, "dt", 0.25, w, positive=True)
        p["nu0"] = _nu0(doc, w, 4.0)
        p["variance"] = _variance_block(doc, w)
        p["invariant"] = _invariant_block(doc, w)
    elif name == "equivalence":
        p["A"] = doc.get("A", "identity")
        _observable(doc, w)
        p["epsilon"] = _num(doc, "epsilon", 0.05, w, positive=True)
        p["kappa"] = _kappa(doc, w)
        p["horizons"] = _num_list(doc, "horizons", [50.0, 100.0, 200.0], w,
                                  positive=True)
        p["replicas"] = _num(doc, "replicas", 10_000, w, positive=True, integer=True)
        p["N"] = _num(doc, "N", 1000, w, positive=True, integer=True)
        p["dt"] = _num(doc, "dt", 0.25, w, positive=True)
        p["nu0"] = _nu0(doc, w, 2.0)
        p["invariant"] = _invariant_block(doc, w)
    elif name == "probe":
        kind = doc.get("kind", "abs")
        from .experiments import _probe_integrand

        try:
            _probe_integrand(kind)
        except ValueError as e:
            raise ConfigError(f"{w}.kind: {e}") from None
        p["kind"] = kind
        p["delta_grid"] = _num_list(doc, "delta_grid", [0.1], w)
        if any(d < 0 for d in p["delta_grid"]):
            raise ConfigError(f"{w}.delta_grid must be nonnegative")
        p["T_grid"] = _num_list(doc, "T_grid", [5.0, 10.0, 20.0, 40.0], w,
                                positive=True)
        p["replicas"] = _num(doc, "replicas", 256, w, positive=True, integer=True)
        p["N"] = _num(doc, "N", 1024, w, positive=True, integer=True)
        p["dt"] = _num(doc, "dt", 0.05, w, positive=True)
        p["nu0"] = _nu0(doc, w, 2.0)
        p["invariant"] = _invariant_block(doc, w)
    return p


# --------------------------------------------------------------------------
# RunConfig


class RunConfig:
    def __init__(self, model, model_record, experiment, seed, threads, out_dir):
        self.model = model
        self.model_record = model_record
        self.experiment = experiment
        self.seed = seed
        self.threads = threads
        self.out_dir = out_dir

    def record(self):
        return {
            "model": self.model_record,
            "experiment": self.experiment,
            "seed": self.seed,
            "threads": self.threads,
            "out_dir": self.out_dir,
        }


def parse_config(text: str) -> RunConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    _check_keys(doc, ("model", "experiment", "seed", "threads", "out_dir"), "config")
    if "model" not in doc:
        raise ConfigError("config.model is required")
    model = _build_model(doc["model"])
    experiment = _parse_experiment(doc.get("experiment", {}), model)
    seed = _num(doc, "seed", 0, "config", nonneg=True, integer=True)
    if seed >= 2**64:
        raise ConfigError(f"config.seed must fit in 64 bits, got {seed}")
    threads = doc.get("threads", None)
    threads = _resolve_threads(threads)
    out_dir = doc.get("out_dir", "out")
    if not isinstance(out_dir, str) or not out_dir:
        raise ConfigError("config.out_dir must be a nonempty path string")
    return RunConfig(model, _model_record(model), experiment, seed, threads, out_dir)


def _resolve_threads(value):
    if value is None:
        value = os.environ.get("MDPLAB_THREADS", 1)
    if value == "auto":
        return os.cpu_count() or 1
    try:
        n = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"threads must be a positive integer or 'auto', got {value!r}") from None
    if n < 1:
        raise ConfigError(f"threads must be a positive integer or 'auto', got {value!r}")
    return n


def _stage_seed(seed: int, stage: int) -> int:
    """Distinct deterministic seed per pipeline stage, so helper estimations
    never share keyed noise streams with the main experiment."""
    return int(np.random.SeedSequence((seed, stage)).generate_state(1)[0])


# --------------------------------------------------------------------------
# dispatch


def _probe_reports(model, seed, trials, support, tolerance):
    if isinstance(model, SHSModel):
        rank, ok = kalman_rank(model.matA, model.matB)
        kal = HypothesisReport(
            name="kalman_rank", trials=1,
            worst_margin=float(model.m - rank), tolerance=0.0, passed=ok,
            witness=None, extra={"rank": rank},
        )
        d3 = check_D3(model, seed=seed, n_trials=trials,
                      support_size=support, tolerance=tolerance)
        return [kal, d3]
    h1 = check_H1(model, seed=seed, n_trials=trials, support_size=support,
                  tolerance=tolerance)
    gen = keyed_generator(RngKey(seed, make_stream(CH_PROBE, 0)), 0)
    states = gen.standard_normal((128, model.dim))
    measures = [from_samples(gen.standard_normal((64, model.dim)))]
    k1, k2, ok = check_H2(model, states, measures)
    margin = max(model.kappa1 - k1, k2 - model.kappa2)
    h2 = HypothesisReport(
        name="check_H2", trials=128, worst_margin=float(margin),
        tolerance=1e-9, passed=ok, witness=None,
        extra={"kappa1_hat": float(k1), "kappa2_hat": float(k2)},
    )
    return [h1, h2]


def _delta_or_none(value, n, dim):
    if value is None:
        return None
    return from_samples(np.full((n, dim), value))


def run(config: RunConfig) -> int:
    model = config.model
    p = config.experiment
    name = p["name"]
    seed = config.seed
    threads = config.threads
    out_dir = config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def out(fname):
        path = os.path.join(out_dir, fname)
        written.append(path)
        return path

    def meta(path, extra=None):
        write_provenance(path, name, config.record(), extra=extra)
        written.append(path + ".meta.json")

    def invariant_cloud(block, stage=1):
        return estimate_invariant(model, block["N"], T_burn=block["T_burn"],
                                  T_avg=block["T_avg"], dt=block["dt"],
                                  seed=_stage_seed(seed, stage))

    try:
        if name == "check":
            reports = _probe_reports(model, seed, p["trials"], p["support"],
                                     p["tolerance"])
            path = out("check.csv")
            write_report_csv(path, reports)
            meta(path, extra={"witnesses": {r.name: r.witness for r in reports},
                              "details": {r.name: r.extra for r in reports}})
        elif name == "simulate":
            init = _delta_or_none(p["init"], p["N"], model.dim)
            ps = make_particle_system(model, p["N"], seed, init=init)
            final_ps, paths = simulate(ps, p["T"], p["dt"], track=tuple(p["track"]))
            cloud_path = out("final_cloud.csv")
            write_measure_csv(final_ps.empirical(), cloud_path)
            meta(cloud_path)
            if p["track"]:
                tp = out("tracked.csv")
                header = ("t", "particle") + tuple(f"x{j}" for j in range(model.dim))
                rows = []
                for pid, pth in zip(p["track"], paths):
                    for t, x in zip(pth.times, pth.states):
                        rows.append((float(t), pid) + tuple(float(c) for c in x))
                write_rows_csv(tp, header, rows)
                meta(tp)
        elif name == "invariant":
            cloud, residual = invariant_cloud(p, stage=1)
            cpath = out("invariant_cloud.csv")
            write_measure_csv(cloud, cpath)
            meta(cpath, extra={"residual": residual})
            spath = out("invariant_summary.csv")
            write_rows_csv(spath, ("N", "T_burn", "T_avg", "dt", "residual"),
                           [(p["N"], p["T_burn"], p["T_avg"], p["dt"], residual)])
            meta(spath)
        elif name == "variance":
            cloud, _ = invariant_cloud(p["invariant"], stage=1)
            A = make_observable(p["A"])
            est = asymptotic_variance(model, A, cloud, T=p["T"], dt=p["dt"],
                                      tau=p["tau"], n_replicas=p["n_replicas"],
                                      seed=_stage_seed(seed, 2))
            path = out("variance.csv")
            write_rows_csv(path, ("vbar", "stderr", "tau", "dt", "n_replicas"),
                           [(est.vbar, est.stderr, est.truncation_tau, est.dt,
                             p["n_replicas"])])
            meta(path, extra={"replica_values": list(est.replica_values)})
        elif name == "contraction":
            cloud, _ = invariant_cloud(p["invariant"], stage=1)
            work_model = model
            if isinstance(model, SHSModel) and model.theta1 is None:
                work_model = certify_shs(model)
            nu0 = _delta_or_none(p["nu0"], 1, model.dim)
            if nu0 is None:
                nu0 = cloud
            rows = contraction_experiment(work_model, nu0, p["horizons"], p["N"],
                                          p["dt"], _stage_seed(seed, 3),
                                          mu_bar_hat=cloud)
            path = out("contraction.csv")
            write_curve_csv(path, rows)
            meta(path)
        elif name == "pathwise":
            cloud, _ = invariant_cloud(p["invariant"], stage=1)
            rep = pathwise_contraction_check(
                model, p["n_pairs"], p["T"], p["dt"], _stage_seed(seed, 3),
                mu_bar_hat=cloud, nu0=_delta_or_none(p["nu0"], 1, model.dim),
                n_law=p["n_law"])
            path = out("pathwise.csv")
            write_report_csv(path, [rep])
            meta(path, extra={"witness": rep.witness, "details": rep.extra})
        elif name == "mdp-tail":
            cloud, _ = invariant_cloud(p["invariant"], stage=1)
            A = make_observable(p["A"])
            v = p["variance"]
            est = asymptotic_variance(model, A, cloud, T=v["T"], dt=v["dt"],
                                      tau=v["tau"], n_replicas=v["n_replicas"],
                                      seed=_stage_seed(seed, 2))
            mu_bar_A = float(np.mean(A.eval(cloud.points)))
            res = mdp_tail_experiment(
                model, A, p["y"], p["kappa"], p["horizons"], p["replicas"],
                p["N"], p["dt"], _stage_seed(seed, 3), vbar=est.vbar,
                mu_bar_A=mu_bar_A, nu0=_delta_or_none(p["nu0"], 1, model.dim),
                threads=threads)
            path = out("mdp_tail.csv")
            write_mdp_tail_csv(path, res)
            meta(path, extra={"vbar": est.vbar, "vbar_stderr": est.stderr,
                              "mu_bar_A": mu_bar_A})
        elif name == "equivalence":
            cloud, _ = invariant_cloud(p["invariant"], stage=1)
            A = make_observable(p["A"])
            res = exp_equivalence_experiment(
                model, A, p["epsilon"], p["kappa"], p["horizons"], p["replicas"],
                p["N"], p["dt"], _stage_seed(seed, 3), mu_bar_hat=cloud,
                nu0=_delta_or_none(p["nu0"], 1, model.dim), threads=threads)
            path = out("equivalence.csv")
            write_tail_csv(path, res.rows)
            meta(path, extra={"outcome": res.outcome})
            print(f"outcome: {res.outcome}")
        elif name == "probe":
            cloud, _ = invariant_cloud(p["invariant"], stage=1)
            table = integrability_probe(
                model, p["kind"], p["delta_grid"], p["T_grid"], p["replicas"],
                p["dt"], _stage_seed(seed, 3), mu_bar_hat=cloud, N=p["N"],
                nu0=_delta_or_none(p["nu0"], 1, model.dim), threads=threads)
            path = out("probe.csv")
            write_probe_csv(path, table)
            meta(path, extra={"all_saturated_deltas": list(table.all_saturated_deltas)})
            if table.all_saturated_deltas:
                print(f"all-saturated deltas: {table.all_saturated_deltas}")
        else:  # pragma: no cover - schema guarantees membership
            raise ConfigError(f"unknown experiment {name!r}")
    except Exception as e:
        for f in written:
            try:
                os.unlink(f)
            except OSError:
                pass
        print(f"runtime failure: {e}", file=sys.stderr)
        return 1
    for f in written:
        print(f"wrote {f}")
    return 0


# --------------------------------------------------------------------------
# argv entry


def _build_parser():
    ap = argparse.ArgumentParser(
        prog="mdplab",
        description="simulation and tail-asymptotics lab for "
                    "distribution-dependent SDEs")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", required=True, help="JSON config path")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
        sp.add_argument("--out", default=None, help="override the output directory")
        sp.add_argument("--threads", default=None,
                        help="worker threads (positive integer or 'auto')")
        sp.add_argument("--format", choices=["csv"], default="csv",
                        help="output format (csv only)")
    rp = sub.add_parser("report", help="render figures for a run directory")
    rp.add_argument("out_dir", help="directory holding experiment CSV outputs")
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "report":
        try:
            made = render_out_dir(args.out_dir)
        except Exception as e:
            print(f"runtime failure: {e}", file=sys.stderr)
            return 1
        for f in made:
            print(f"wrote {f}")
        return 0
    try:
        with open(args.config) as fh:
            text = fh.read()
    except OSError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    try:
        config = parse_config(text)
        if config.experiment["name"] != args.command:
            raise ConfigError(
                f"config names experiment {config.experiment['name']!r} but the "
                f"{args.command!r} subcommand was invoked")
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be nonnegative")
            config.seed = args.seed
        if args.out is not None:
            config.out_dir = args.out
        if args.threads is not None:
            config.threads = _resolve_threads(args.threads)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    print("config: " + json.dumps(config.record(), sort_keys=True))
    return run(config)


def entry():  # console script
    sys.exit(main())


if __name__ == "__main__":
    entry()
