"""Figures for sweep, scaling, shift, slice and permutation reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .diagnostics import PermutationReport  # noqa: E402
from .evaluation import MethodComparison, SweepReport  # noqa: E402
from .synthetic import ScalingReport, ShiftReport  # noqa: E402
from .tables import method_name  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.4),
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}
# no embedded timestamps, so reruns write identical files
METADATA = {"Software": None}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata=METADATA)
    plt.close(fig)
    return path


def plot_scaling(report: ScalingReport, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ks = list(report.k_range)
        ax.plot(ks, report.analytic, "k--", lw=1, label="(1-α)^K")
        for m in dict.fromkeys(c.method for c in report.cells):
            cells = [report.cell(k, m) for k in ks]
            ax.errorbar(ks, [c.mean for c in cells], yerr=[c.std for c in cells], marker="o", ms=3,
                        capsize=2, label=method_name(m))
        ax.axhline(1 - report.alpha, color="grey", lw=0.8, ls=":")
        ax.set_xlabel("stages K")
        ax.set_ylabel("E2E coverage")
        ax.set_xticks(ks)
        ax.legend(frameon=False)
        return _save(fig, Path(path))


def plot_sweep(report: SweepReport, path) -> Path:
    with plt.rc_context(STYLE):
        n_cals = sorted({c.n_cal for c in report.cells})
        fig, axes = plt.subplots(1, len(n_cals), squeeze=False, sharey=True,
                                 figsize=(3.2 * len(n_cals), 3.2))
        for ax, n_cal in zip(axes[0], n_cals):
            cells = [c for c in report.cells if c.n_cal == n_cal]
            alphas = sorted({c.alpha for c in cells})
            for m in dict.fromkeys(c.method for c in cells):
                mc = sorted((c for c in cells if c.method is m), key=lambda c: c.alpha)
                ax.errorbar([c.alpha for c in mc], [c.e2e_mean for c in mc], yerr=[c.e2e_std for c in mc],
                            marker="o", ms=3, capsize=2, label=method_name(m))
            ax.plot(alphas, [1 - a for a in alphas], "k--", lw=1, label="1-α")
            ax.set_title(f"n_cal = {n_cal}")
            ax.set_xlabel("α")
        axes[0][0].set_ylabel("E2E coverage")
        axes[0][-1].legend(frameon=False)
        return _save(fig, Path(path))


def plot_shift(report: ShiftReport, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        conditions = list(dict.fromkeys(c.condition for c in report.cells))
        methods = list(dict.fromkeys(c.method for c in report.cells))
        width = 0.8 / len(methods)
        for j, m in enumerate(methods):
            cells = [report.cell(cond, m) for cond in conditions]
            xs = [i + (j - (len(methods) - 1) / 2) * width for i in range(len(conditions))]
            ax.bar(xs, [c.mean for c in cells], width, yerr=[c.std for c in cells], label=method_name(m))
        ax.axhline(1 - report.alpha, color="k", lw=0.8, ls="--")
        ax.set_xticks(range(len(conditions)), conditions)
        ax.set_ylabel("E2E coverage")
        ax.legend(frameon=False, fontsize=7)
        return _save(fig, Path(path))


def plot_slices(report: MethodComparison, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        labels = [e.label for e in report.reports[0].slices]
        for r in report.reports:
            ax.plot(labels, [e.e2e_coverage for e in r.slices], marker="o", ms=3, label=method_name(r.method))
        ax.set_xlabel(report.reports[0].slice_name)
        ax.set_ylabel("E2E coverage")
        ax.legend(frameon=False)
        return _save(fig, Path(path))


def plot_permutation(report: PermutationReport, path) -> Path:
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(report.results), squeeze=False, figsize=(3.0 * len(report.results), 2.8))
        for ax, r in zip(axes[0], report.results):
            ax.hist(r.permutation_coverages, bins=20, color="0.7")
            ax.axvline(1 - r.alpha, color="k", ls="--", lw=1, label="1-α")
            ax.axvline(r.actual_coverage, color="C3", lw=1, label="actual")
            ax.set_title(f"α = {r.alpha:g}")
            ax.set_xlabel("coverage")
        axes[0][0].legend(frameon=False, fontsize=7)
        return _save(fig, Path(path))


def render_figures(report, stem) -> list[Path]:
    """Write whichever figures apply to ``report`` as ``<stem>_<name>.png``."""
    stem = Path(stem)

    def out(name):
        return stem.with_name(f"{stem.name}_{name}.png")

    if isinstance(report, ScalingReport):
        return [plot_scaling(report, out("scaling"))]
    if isinstance(report, SweepReport):
        return [plot_sweep(report, out("sweep"))]
    if isinstance(report, ShiftReport):
        return [plot_shift(report, out("shift"))]
    if isinstance(report, PermutationReport) and report.results:
        return [plot_permutation(report, out("permutation"))]
    if isinstance(report, MethodComparison) and report.reports[0].slices:
        return [plot_slices(report, out("slices"))]
    return []
