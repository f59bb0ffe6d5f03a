"""Figures drawn from the CSV outputs.  The CSVs are the contract; plots are a courtesy."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.8),
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "savefig.dpi": 150,
}

LABELS = {
    "occupancy": ("threshold $M$ (users)", r"$P(\eta < M)$"),
    "active": ("threshold $M$ (users)", r"$P(\eta_{act} < M)$"),
    "power": ("threshold $R$ (kW)", r"$P(Q < R)$"),
}


def read_csv(path: str | Path) -> dict[str, list[str]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: [r[k] for r in rows] for k in (rows[0].keys() if rows else [])}


def _col(table, name) -> np.ndarray:
    return np.array([float(v) for v in table[name]])


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_bound_csv(path: str | Path, kind: str, out: str | Path) -> Path:
    """Confidence curve ``1 - bound`` against the threshold."""
    t = read_csv(path)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(_col(t, "threshold"), _col(t, "confidence"), color="C0", label="lower bound")
        ax.set_xlabel(LABELS[kind][0])
        ax.set_ylabel(LABELS[kind][1])
        ax.set_ylim(-0.02, 1.02)
        ax.legend(loc="lower right")
        return _save(fig, Path(out))


def plot_exceedance_csv(path: str | Path, kind: str, out: str | Path, percentiles: str | Path | None = None) -> Path:
    """Empirical probability with 2-sigma band, the analytic lower bound, and percentile error bars."""
    t = read_csv(path)
    th, p, se = _col(t, "threshold"), _col(t, "empirical_prob"), _col(t, "stderr")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(th, p, color="C1", label="Monte Carlo")
        ax.fill_between(th, np.clip(p - 2 * se, 0, 1), np.clip(p + 2 * se, 0, 1), color="C1", alpha=0.25, lw=0)
        ax.plot(th, _col(t, "confidence"), color="C0", ls="--", label="lower bound")
        if percentiles is not None:
            pc = read_csv(percentiles)
            qty = "eta" if kind in ("occupancy", "active") else "q"
            sel = [i for i, q in enumerate(pc["quantity"]) if q == qty]
            if sel:
                lv = _col(pc, "level")[sel]
                mean, hw = _col(pc, "mean")[sel], _col(pc, "half_width")[sel]
                ax.errorbar(mean, lv, xerr=hw, fmt="o", ms=3, color="k", capsize=2, label="percentiles (2 sd)")
        ax.set_xlabel(LABELS[kind][0])
        ax.set_ylabel(LABELS[kind][1])
        ax.set_ylim(-0.02, 1.02)
        ax.legend(loc="lower right")
        return _save(fig, Path(out))


def plot_tune_csv(path: str | Path, out: str | Path) -> Path:
    """Occupancy, active-user and power confidence curves for every sweep setting, stacked."""
    t = read_csv(path)
    curves = defaultdict(lambda: ([], []))
    for s, k, th, c in zip(t["setting"], t["kind"], t["threshold"], t["confidence"]):
        curves[(k, s)][0].append(float(th))
        curves[(k, s)][1].append(float(c))
    param = t["param"][0] if t.get("param") else "setting"
    settings = list(dict.fromkeys(t["setting"]))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(3, 1, figsize=(6.0, 8.4))
        for ax, kind in zip(axes, ("occupancy", "active", "power")):
            for i, s in enumerate(settings):
                if (kind, s) in curves:
                    x, y = curves[(kind, s)]
                    ax.plot(x, y, color=f"C{i}", label=f"{param} = {s}")
            ax.set_xlabel(LABELS[kind][0])
            ax.set_ylabel(LABELS[kind][1])
            ax.set_ylim(-0.02, 1.02)
            ax.legend(loc="lower right")
        return _save(fig, Path(out))
