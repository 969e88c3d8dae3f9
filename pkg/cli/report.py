"""
SVG figures.

    quality-scatter   per-combination predicted vs true F1, mean points with SD bars
    rmse-bars         RMSE per regressor over folds
    delta-f1          paired F1 differences per variant against the reference
    uncertainty-maps  channels, ground truth, prediction, error, u_e and u_a for one patch

SVG text is reproducible: fixed hash salt, text kept as text, no date.
"""

import io
from typing import Dict, Mapping, Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from quality_pipeline.evaluate import QualityEvaluation  # noqa: E402
from uncertainty.bundle import UncertaintyBundle  # noqa: E402

SVG_PARAMS = {
    "svg.hashsalt": "msmeq",
    "svg.fonttype": "none",
    "path.simplify": False,
}


def figure_to_svg(fig) -> str:
    buffer = io.StringIO()
    with matplotlib.rc_context(SVG_PARAMS):
        fig.savefig(buffer, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buffer.getvalue()


def quality_scatter(evaluations: Mapping[str, QualityEvaluation]):
    names = list(evaluations)
    with matplotlib.rc_context(SVG_PARAMS):
        fig, axes = plt.subplots(1, len(names), figsize=(4 * len(names), 4), squeeze=False)
        for ax, name in zip(axes[0], names):
            summary = evaluations[name]
            true_mean = [c.true_mean for c in summary.per_combination]
            pred_mean = [c.pred_mean for c in summary.per_combination]
            ax.errorbar(
                true_mean,
                pred_mean,
                xerr=[c.true_sd for c in summary.per_combination],
                yerr=[c.pred_sd for c in summary.per_combination],
                fmt="o",
                markersize=3,
                capsize=2,
                elinewidth=0.8,
            )
            ax.plot([0, 1], [0, 1], color="grey", linestyle="--", linewidth=0.8)
            ax.set_xlim(0, 1)
            ax.set_ylim(0, 1)
            ax.set_xlabel("F1 (true)")
            ax.set_ylabel("F1 (predicted)")
            ax.set_title(f"{name}  RMSE={summary.rmse:.3f}  R2={summary.r2_of_means:.2f}")
        fig.tight_layout()
    return fig


def rmse_bars(evaluations: Mapping[str, QualityEvaluation]):
    names = list(evaluations)
    per_fold = [np.array(list(evaluations[n].rmse_per_fold.values())) for n in names]
    with matplotlib.rc_context(SVG_PARAMS):
        fig, ax = plt.subplots(figsize=(1.6 * len(names) + 2, 4))
        x = np.arange(len(names))
        means = [float(v.mean()) for v in per_fold]
        sds = [float(v.std(ddof=1)) if len(v) > 1 else 0.0 for v in per_fold]
        ax.bar(x, means, yerr=sds, capsize=4, color="lightsteelblue", edgecolor="black", linewidth=0.8)
        for i, values in enumerate(per_fold):
            ax.scatter(np.full(len(values), i), values, color="black", s=10, zorder=3)
        ax.set_xticks(x)
        ax.set_xticklabels(names)
        ax.set_ylabel("RMSE")
        ax.set_title("Quality regression error over folds")
        fig.tight_layout()
    return fig


def delta_f1(deltas: pd.DataFrame):
    models = sorted(deltas["model"].unique())
    reference = str(deltas["reference"].iloc[0])
    with matplotlib.rc_context(SVG_PARAMS):
        fig, ax = plt.subplots(figsize=(1.8 * len(models) + 2, 4))
        data = [deltas.loc[deltas["model"] == m, "delta_f1"].to_numpy() for m in models]
        ax.boxplot(data, showfliers=True, flierprops={"markersize": 2})
        ax.axhline(0.0, color="red", linewidth=0.8)
        ax.set_xticks(np.arange(1, len(models) + 1))
        ax.set_xticklabels(models, rotation=20)
        ax.set_ylabel(f"F1 - F1({reference})")
        ax.set_title("Relative segmentation F1")
        fig.tight_layout()
    return fig


def uncertainty_maps(channels: np.ndarray, mask: np.ndarray, bundle: UncertaintyBundle, title: Optional[str] = None):
    prediction = (bundle.mean_prob > 0.5).astype(np.uint8)
    error = (prediction != (mask > 0)).astype(np.uint8)
    panels: Dict[str, np.ndarray] = {f"marker {k + 1}": channels[k] for k in range(channels.shape[0])}
    panels.update(
        {
            "ground truth": mask,
            "prediction": prediction,
            "error": error,
            "u_e": bundle.u_e,
            "u_a": bundle.aleatoric_or_zero(),
        }
    )
    with matplotlib.rc_context(SVG_PARAMS):
        fig, axes = plt.subplots(1, len(panels), figsize=(1.8 * len(panels), 2.2))
        for ax, (name, plane) in zip(axes, panels.items()):
            cmap = "magma" if name.startswith("u_") else "gray"
            ax.imshow(plane, cmap=cmap, interpolation="nearest")
            ax.set_title(name, fontsize=8)
            ax.set_axis_off()
        if title:
            fig.suptitle(title, fontsize=9)
        fig.tight_layout()
    return fig
