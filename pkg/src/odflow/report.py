"""Figure rendering for the CLI report paths.

Every plot goes straight to a file next to the delimited outputs; nothing is
shown interactively.  The Agg backend keeps rendering deterministic for a
fixed input.
"""

from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

# Strip the version-dependent Software tag so reruns are byte-identical.
_PNG_METADATA = {"Software": "odflow"}


def _save(fig, path):
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    plt.close(fig)


def save_demand_profile(estimate, grid, path, title="Estimated total demand"):
    """Total estimated demand per interval, one line per day."""
    totals = estimate.q.reshape(-1, grid.n_intervals).sum(axis=0)
    hours = (np.arange(grid.intervals_per_day) * grid.interval_minutes) / 60.0
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for d in range(grid.n_days):
        day = totals[d * grid.intervals_per_day:(d + 1) * grid.intervals_per_day]
        ax.plot(hours, day, label=grid.day_labels[d].isoformat())
    ax.set_xlabel("hour of day")
    ax.set_ylabel("vehicles per interval")
    ax.set_title(title)
    if grid.n_days <= 8:
        ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def save_sweep_figure(rows, path):
    """Error terms against the symmetry weight (log scale when it spans decades)."""
    betas = np.array([r.beta for r in rows])
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    order = np.argsort(betas)
    for name, values in (("eps_b", [r.eps_b for r in rows]),
                         ("eps_s", [r.eps_s for r in rows]),
                         ("eps_lb", [r.eps_lb for r in rows])):
        axes[0].plot(betas[order], np.array(values)[order], marker="o", label=name)
    axes[0].set_xlabel("beta")
    axes[0].set_ylabel("residual norm")
    if betas.max() > 0 and betas.max() / max(betas[betas > 0].min(), 1e-12) > 100:
        axes[0].set_xscale("symlog")
    axes[0].legend()
    axes[1].plot(betas[order], np.array([r.total_flow for r in rows])[order], marker="o",
                 color="tab:green")
    axes[1].set_xlabel("beta")
    axes[1].set_ylabel("total flow (vehicles)")
    fig.suptitle("Weight sweep")
    fig.tight_layout()
    _save(fig, path)


def save_kde_figure(kde_increase, kde_decrease, path, xlabel="district income",
                    threshold=None):
    """Overlaid densities of increased/decreased OD pairs with threshold shading."""
    fig, ax = plt.subplots(figsize=(8, 4.5))
    if kde_increase is not None:
        ax.plot(kde_increase.x, kde_increase.density, color="tab:red", label="increased")
        if threshold is not None:
            mask = kde_increase.x <= threshold
            ax.fill_between(kde_increase.x[mask], kde_increase.density[mask],
                            color="tab:red", alpha=0.3)
    if kde_decrease is not None:
        ax.plot(kde_decrease.x, kde_decrease.density, color="tab:blue", label="decreased")
        if threshold is not None:
            mask = kde_decrease.x >= threshold
            ax.fill_between(kde_decrease.x[mask], kde_decrease.density[mask],
                            color="tab:blue", alpha=0.3)
    if threshold is not None:
        ax.axvline(threshold, linestyle=":", color="black")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("density")
    ax.set_title("Flow change by income")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def save_change_scatter(records, which: str, path):
    """Percentage change against min or max endpoint income, colored by class."""
    styles = {"sig_decrease": ("+", "tab:blue"), "decrease": (".", "tab:green"),
              "sig_increase": ("+", "tab:red"), "increase": (".", "tab:orange")}
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for label, (marker, color) in styles.items():
        xs = [getattr(r, which) for r in records
              if r.classification == label and getattr(r, which) is not None]
        ys = [r.pct_change for r in records
              if r.classification == label and getattr(r, which) is not None]
        if xs:
            ax.scatter(xs, ys, marker=marker, color=color, label=label, s=24)
    ax.axhline(0.0, color="black", linewidth=0.6)
    ax.set_xlabel(which.replace("_", " "))
    ax.set_ylabel("percentage change in flow")
    ax.set_title("Flow change vs district income")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)
