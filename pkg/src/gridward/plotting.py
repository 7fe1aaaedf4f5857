"""Report figures. Rendered with the Agg backend to PNG files."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from gridward.detector import DetectionResult, Metrics  # noqa: E402

# No timestamps or version strings, so reruns give identical bytes.
_PNG_META = {"Software": None}

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
}

NORMAL_COLOR = "#4c72b0"
ATTACK_COLOR = "#c44e52"
_LABELS = {"stide": "mismatch rate", "lfc": "locality frame score", "ocsvm": "one-class score"}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    fig.savefig(tmp, format="png", metadata=_PNG_META)
    plt.close(fig)
    tmp.replace(path)
    return path


def score_histograms(results: Sequence[DetectionResult], kinds: Mapping[str, str],
                     thresholds: Mapping[str, float] | None, path: Path) -> Path:
    """One panel per detector: normal vs attack score distributions with the threshold."""
    detectors = [d for d in ("stide", "lfc", "ocsvm") if all(d in r.scores for r in results)]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(detectors), figsize=(3.2 * len(detectors), 2.6),
                                 squeeze=False)
        for ax, d in zip(axes[0], detectors):
            normal = np.array([r.scores[d] for r in results if kinds.get(r.truth or "") != "attack"])
            attack = np.array([r.scores[d] for r in results if kinds.get(r.truth or "") == "attack"])
            both = np.concatenate([normal, attack]) if attack.size else normal
            lo, hi = float(both.min()), float(both.max())
            bins = np.linspace(lo, hi if hi > lo else lo + 1e-9, 31)
            if normal.size:
                ax.hist(normal, bins=bins, color=NORMAL_COLOR, alpha=0.7, label="normal")
            if attack.size:
                ax.hist(attack, bins=bins, color=ATTACK_COLOR, alpha=0.7, label="attack")
            if thresholds and d in thresholds:
                ax.axvline(thresholds[d], color="k", ls="--", lw=1, label="threshold")
            ax.set_xlabel(_LABELS[d])
            ax.set_ylabel("jobs")
            ax.set_yscale("symlog")
        axes[0][0].legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def per_profile_rates(metrics: Metrics, path: Path) -> Path:
    """Detection rate per attack profile and false-positive rate per normal profile."""
    names = list(metrics.per_profile) + list(metrics.per_profile_fpr)
    values = list(metrics.per_profile.values()) + list(metrics.per_profile_fpr.values())
    colors = [ATTACK_COLOR] * len(metrics.per_profile) + [NORMAL_COLOR] * len(metrics.per_profile_fpr)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(3.5, 0.6 * len(names) + 1.5), 2.8))
        ax.bar(range(len(names)), values, color=colors)
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=35, ha="right")
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("flagged fraction")
        ax.set_title("TPR (attack) / FPR (normal)")
        fig.tight_layout()
        return _save(fig, path)


def enforcement_reasons(counts: Mapping[str, int], path: Path) -> Path:
    names = sorted(counts)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 2.6))
        ax.barh(names, [counts[n] for n in names], color=NORMAL_COLOR)
        ax.set_xlabel("violations")
        fig.tight_layout()
        return _save(fig, path)
