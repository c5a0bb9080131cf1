"""SVG figures for evaluation reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

LABELS = {"jvwl": "Joint WiFi + visual", "baseline_wifi": "WiFi only (baseline)"}
COLORS = {"jvwl": "tab:red", "baseline_wifi": "tab:green"}

_RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "jointloc",  # stable element ids across runs
}


def new_figure(width=4.5, height=3.2):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(width, height))
    return fig, ax


def save(fig, path):
    with plt.rc_context(_RC):
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _step_cdf(errors):
    e = sorted(errors)
    n = len(e)
    return [0.0] + e, [0.0] + [(k + 1) / n for k in range(n)]


def plot_cdf(report, path):
    """Empirical CDF of distance errors per method."""
    fig, ax = new_figure()
    for method, errs in report.errors.items():
        x, y = _step_cdf(errs)
        ax.step(x, y, where="post", color=COLORS.get(method), label=LABELS.get(method, method))
    ax.set_xlabel("Localization error (m)")
    ax.set_ylabel("CDF")
    ax.set_ylim(0, 1.02)
    ax.set_xlim(left=0)
    ax.legend(loc="lower right")
    save(fig, path)


def plot_sweep(reports, path, method="jvwl"):
    fig, ax = new_figure()
    for r in reports:
        x, y = _step_cdf(r.errors[method])
        ax.step(x, y, where="post", label=f"{r.grid_spacing:g} m grid ({r.n_rp} RPs)")
    ax.set_xlabel("Localization error (m)")
    ax.set_ylabel("CDF")
    ax.set_ylim(0, 1.02)
    ax.set_xlim(left=0)
    ax.legend(loc="lower right")
    save(fig, path)


def plot_latency(table, path):
    fig, ax = new_figure()
    for method, totals in table.totals_s.items():
        ax.loglog(table.query_counts, totals, "o-", color=COLORS.get(method),
                  label=LABELS.get(method, method))
    ax.set_xlabel("Number of queries")
    ax.set_ylabel("Total time (s)")
    ax.legend(loc="upper left")
    save(fig, path)
