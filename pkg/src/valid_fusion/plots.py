"""Figures written next to evaluation outputs: PR curves and confidence-band histograms."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import ApReport, BandHistogram  # noqa: E402

BAND_COLORS = {"EASY": "#1b9e77", "MODERATE": "#d95f02", "HARD": "#7570b3"}

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 150,
}

# PNG metadata left empty so identical inputs give identical files.
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, format="png", metadata=_PNG_META, bbox_inches="tight")
    plt.close(fig)


def plot_pr_curves(report: ApReport, path, title: str | None = None,
                   baseline: ApReport | None = None) -> None:
    """Precision-recall curve per difficulty band.

    With ``baseline`` its curves are drawn dashed underneath for comparison.
    """
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.4))
        if baseline is not None:
            for name, b in baseline.bands.items():
                ax.plot([p.recall for p in b.pr_curve], [p.precision for p in b.pr_curve],
                        ls="--", lw=0.9, color=BAND_COLORS.get(name, "grey"), alpha=0.6,
                        label=f"{name.lower()} (baseline)")
        for name, b in report.bands.items():
            ap = b.ap_40 if b.ap_40 is not None else b.ap_11
            label = name.lower() if ap is None else f"{name.lower()} AP {ap:.2f}"
            ax.plot([p.recall for p in b.pr_curve], [p.precision for p in b.pr_curve],
                    lw=1.3, color=BAND_COLORS.get(name), label=label)
        ax.set_xlim(0.0, 1.0)
        ax.set_ylim(0.0, 1.02)
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        if title:
            ax.set_title(title)
        ax.legend(loc="lower left", frameon=False)
        _save(fig, path)


def plot_band_histogram(hist: BandHistogram, path, title: str | None = None) -> None:
    edges = hist.edges
    centers = [(lo + hi) / 2 for lo, hi in zip(edges[:-1], edges[1:])]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        ax.bar(centers, hist.tp_count, width=0.09, color="#1b9e77", label="TP")
        ax.bar(centers, hist.fp_count, width=0.09, bottom=hist.tp_count, color="#d95f02", label="FP")
        ax.set_xticks(edges)
        ax.set_xlim(0.0, 1.0)
        ax.set_xlabel("confidence")
        ax.set_ylabel("detections")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        _save(fig, path)
