"""Render experiment CSV outputs to PNG figures.

Figures are a reading aid, not part of the numeric contract: every value
plotted here comes straight out of a CSV, so re-rendering never touches
simulation state.  The CSV kind is sniffed from its header.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        rows = [dict(zip(header, r)) for r in reader]
    return header, rows


def _floats(rows, key):
    return [float(r[key]) for r in rows]


def _render_contraction(rows, ax):
    t = _floats(rows, "t")
    ax.semilogy(t, _floats(rows, "observed"), "o-", label="observed $\\hat W_2^2$")
    ax.semilogy(t, _floats(rows, "bound"), "--", label="contraction bound")
    ax.set_xlabel("t")
    ax.set_ylabel("squared transport distance")
    ax.set_title("transport contraction")
    ax.legend()


def _render_tail(rows, ax, with_rates):
    t = _floats(rows, "t")
    nlt = _floats(rows, "norm_log_tail")
    sat = [r["saturated"] == "1" for r in rows]
    ok_t = [x for x, s in zip(t, sat) if not s]
    ok_v = [v for v, s in zip(nlt, sat) if not s]
    sat_t = [x for x, s in zip(t, sat) if s]
    sat_v = [v for v, s in zip(nlt, sat) if s]
    ax.plot(ok_t, ok_v, "o-", label="normalized log tail")
    if sat_t:
        ax.plot(sat_t, sat_v, "v", color="gray",
                label="saturated (Wilson bound)")
    if with_rates and rows:
        ax.axhline(float(rows[0]["rate8"]), ls="--", color="C1",
                   label="$-y^2/8\\bar V$")
        ax.axhline(float(rows[0]["rate4"]), ls=":", color="C2",
                   label="$-y^2/4\\bar V$")
    ax.set_xlabel("t")
    ax.set_ylabel("$(t/a(t)^2)\\,\\log \\hat p$")
    ax.set_title("tail decay" if with_rates else "exponential equivalence")
    ax.legend()


def _render_probe(rows, ax):
    deltas = sorted({float(r["delta"]) for r in rows})
    for d in deltas:
        sub = [r for r in rows if float(r["delta"]) == d]
        T = _floats(sub, "T")
        v = _floats(sub, "log_mean_exp")
        line, = ax.plot(T, v, "o-", label=f"$\\delta$={d:g}")
        sat = [(x, y) for x, y, r in zip(T, v, sub) if r["saturated"] == "1"]
        if sat:
            ax.plot(*zip(*sat), "x", color=line.get_color(), markersize=10)
    kind = rows[0]["kind"] if rows else "?"
    ax.set_xlabel("T")
    ax.set_ylabel("$\\log \\hat E\\, e^{\\delta G_T}$")
    ax.set_title(f"integrability probe ({kind})")
    ax.legend()


def _render_checks(rows, ax):
    names = [r["name"] for r in rows]
    margins = _floats(rows, "worst_margin")
    colors = ["C2" if r["passed"] == "true" else "C3" for r in rows]
    ax.bar(range(len(names)), margins, color=colors)
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=20, ha="right")
    ax.set_ylabel("worst margin")
    ax.set_title("hypothesis checks (green = pass)")


def _render_cloud(header, rows, ax):
    if len(header) == 1:
        ax.hist(_floats(rows, "x0"), bins=40, density=True, alpha=0.8)
        ax.set_xlabel("x0")
        ax.set_ylabel("density")
    else:
        ax.plot(_floats(rows, "x0"), _floats(rows, "x1"), ".", ms=2, alpha=0.5)
        ax.set_xlabel("x0")
        ax.set_ylabel("x1")
        ax.set_aspect("equal", adjustable="datalim")
    ax.set_title(f"atom cloud (n={len(rows)})")


def _render_variance(rows, ax):
    r = rows[0]
    vbar, err = float(r["vbar"]), float(r["stderr"])
    ax.errorbar([0.0], [vbar], yerr=[2 * err], fmt="o", capsize=6)
    ax.set_xticks([])
    ax.set_ylabel("$\\bar V$")
    ax.set_title(f"asymptotic variance (tau={r['tau']}, 2 stderr bars)")


def render_csv(csv_path: str, out_path: str | None = None):
    """Render one CSV to PNG; returns the PNG path, or None if the header
    is not a known experiment table."""
    header, rows = _read_csv(csv_path)
    fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=120)
    try:
        if header == ("t", "observed", "bound", "ratio"):
            _render_contraction(rows, ax)
        elif header[:8] == ("t", "replicas", "hits", "p_hat", "wilson_low",
                            "wilson_high", "norm_log_tail", "saturated"):
            _render_tail(rows, ax, with_rates="rate8" in header)
        elif header == ("kind", "delta", "T", "log_mean_exp", "saturated"):
            _render_probe(rows, ax)
        elif header == ("name", "trials", "worst_margin", "tolerance", "passed"):
            _render_checks(rows, ax)
        elif header[0] == "x0" and all(h == f"x{i}" for i, h in enumerate(header)):
            _render_cloud(header, rows, ax)
        elif header[:2] == ("vbar", "stderr"):
            _render_variance(rows, ax)
        else:
            return None
        fig.tight_layout()
        out = out_path or os.path.splitext(csv_path)[0] + ".png"
        fig.savefig(out)
        return out
    finally:
        plt.close(fig)


def render_out_dir(out_dir: str):
    """Render every known CSV in a run directory; returns the PNG paths."""
    made = []
    for name in sorted(os.listdir(out_dir)):
        if not name.endswith(".csv"):
            continue
        png = render_csv(os.path.join(out_dir, name))
        if png:
            made.append(png)
    return made
