"""Report figures: training loss curves and per-pose metric summaries."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_losses(report, path) -> Path:
    """One log-scale curve per logged loss term."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        steps = report.column("step")
        for name in report.enabled:
            if name == "step":
                continue
            vals = report.column(name)
            if np.all(vals > 0):
                ax.plot(steps, vals, lw=1, label=name)
            else:
                ax.plot(steps, np.abs(vals) + 1e-12, lw=1, ls="--", label=f"|{name}|")
        ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.set_title(f"stage {report.stage}")
        ax.legend(ncol=2, frameon=False)
        return _save(fig, path)


def plot_metrics(metrics, out_dir) -> list[Path]:
    """PSNR/SSIM per pose group and the per-image PSNR distribution."""
    agg = metrics.aggregate
    rows = [r for r in metrics.per_image if r.get("error") is None]
    out_dir = Path(out_dir)
    paths = []
    with plt.rc_context(STYLE):
        groups = agg.get("by_pose") or {"all": {k: agg[k] for k in ("mean_psnr_db", "mean_ssim", "n")}}
        labels = list(groups)
        psnrs = [groups[g]["mean_psnr_db"] for g in labels]
        ssims = [groups[g]["mean_ssim"] for g in labels]
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(7, 3))
        x = np.arange(len(labels))
        finite = [p if p is not None and math.isfinite(p) else np.nan for p in psnrs]
        a1.bar(x, finite, color="tab:blue")
        a1.set_ylabel("PSNR [dB]")
        a2.bar(x, [s if s is not None else np.nan for s in ssims], color="tab:orange")
        a2.set_ylabel("SSIM")
        a2.set_ylim(0, 1)
        for ax in (a1, a2):
            ax.set_xticks(x, labels)
            ax.set_xlabel("pose tag [deg]")
        if "bicubic_mean_psnr_db" in agg:
            a1.axhline(agg["bicubic_mean_psnr_db"], color="k", ls=":", lw=1, label="bicubic")
            a1.legend(frameon=False)
        paths.append(_save(fig, out_dir / "metrics_by_pose.png"))

        vals = [r["psnr_db"] for r in rows if math.isfinite(r["psnr_db"])]
        fig, ax = plt.subplots(figsize=(4, 3))
        if vals:
            ax.hist(vals, bins=min(20, max(5, len(vals) // 3)), color="tab:blue", alpha=0.8)
        ax.set_xlabel("PSNR [dB]")
        ax.set_ylabel("images")
        paths.append(_save(fig, out_dir / "psnr_hist.png"))
    return paths


def plot_pipeline(lr, coarse, prior, fine, path, hr=None) -> Path:
    """Side-by-side panel of the pipeline stages for one face."""
    panels = [("input", lr), ("coarse", coarse), ("prior", prior), ("fine", fine)]
    if hr is not None:
        panels.append(("target", hr))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(panels), figsize=(2 * len(panels), 2.2))
        for ax, (title, img) in zip(axes, panels):
            ax.imshow(np.clip(img, 0, 1), interpolation="nearest")
            ax.set_title(title)
            ax.axis("off")
        return _save(fig, path)
