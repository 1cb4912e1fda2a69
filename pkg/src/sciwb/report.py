"""Matplotlib figures rendered next to the delimited output.

Every report function writes a PNG through the Agg backend and returns
the path; figures carry no timestamps so repeated runs in the same
environment produce identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from .analysis import ArchProfile


def _finish(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def save_loss_curve(losses: list[float], path: str | Path,
                    title: str = "training loss") -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(range(1, len(losses) + 1), losses, lw=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    if losses and min(losses) > 0:
        ax.set_yscale("log")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return _finish(fig, path)


def save_stage_trace(residuals: list[float], path: str | Path,
                     psnrs: list[float] | None = None) -> Path:
    """Per-stage measurement residual, optionally with a PSNR axis."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    stages = range(1, len(residuals) + 1)
    ax.plot(stages, residuals, marker="o", ms=3, lw=1.2, color="tab:blue")
    ax.set_xlabel("stage")
    ax.set_ylabel("measurement residual", color="tab:blue")
    if residuals and min(residuals) > 0:
        ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    if psnrs is not None:
        ax2 = ax.twinx()
        ax2.plot(range(1, len(psnrs) + 1), psnrs, marker="s", ms=3, lw=1.2,
                 color="tab:orange")
        ax2.set_ylabel("PSNR (dB)", color="tab:orange")
    ax.set_title("solver trace")
    fig.tight_layout()
    return _finish(fig, path)


def save_psnr_bars(channel_psnr: list[float], path: str | Path,
                   mean_psnr: float | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    finite = [v if v != float("inf") else 0.0 for v in channel_psnr]
    ax.bar(range(len(channel_psnr)), finite, color="tab:blue")
    if mean_psnr is not None and mean_psnr != float("inf"):
        ax.axhline(mean_psnr, color="tab:red", lw=1.0, ls="--",
                   label=f"mean {mean_psnr:.2f} dB")
        ax.legend(loc="lower right")
    ax.set_xlabel("channel")
    ax.set_ylabel("PSNR (dB)")
    ax.set_title("per-channel PSNR")
    fig.tight_layout()
    return _finish(fig, path)


def save_profile_chart(profiles: list[ArchProfile], path: str | Path) -> Path:
    """Grouped bars: parameters (millions) and FLOPs (billions) per row."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.8))
    labels = [p.label for p in profiles]
    xs = range(len(profiles))
    ax1.bar(xs, [p.params_m for p in profiles], color="tab:blue")
    ax1.set_ylabel("parameters (M)")
    ax2.bar(xs, [p.flops_g for p in profiles], color="tab:orange")
    ax2.set_ylabel("FLOPs (G)")
    for ax in (ax1, ax2):
        ax.set_xticks(list(xs))
        ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
        ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    return _finish(fig, path)
