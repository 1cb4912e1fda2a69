"""Reconstruction quality metrics.

PSNR follows the channel-first convention: a PSNR is computed per
channel against that channel's own peak value in the ground truth, then
channel PSNRs are averaged. This differs from pooling the squared error
over the whole cube first; for channels of unequal error the two
conventions disagree, and the channel-first number is the one reported.

SSIM uses the standard 11x11 Gaussian window (sigma 1.5), k1 = 0.01,
k2 = 0.03, on a caller-supplied dynamic range (default 1.0).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractError, DimensionError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class MetricReport:
    """Per-channel and aggregate quality numbers for one cube pair."""

    channel_psnr: list[float]
    mean_psnr: float
    mean_ssim: float | None = None
    shape: tuple[int, ...] = field(default_factory=tuple)

    def rows(self) -> list[list]:
        out: list[list] = [["channel", "psnr"]]
        for i, v in enumerate(self.channel_psnr):
            out.append([i, v])
        return out


def _check_cubes(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape:
        raise DimensionError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    if pred.ndim != 3:
        raise DimensionError(f"expected (H, W, C) cubes, got {pred.ndim}-D arrays")


def psnr(pred: np.ndarray, gt: np.ndarray) -> MetricReport:
    """Channel-first PSNR of a reconstructed cube against ground truth.

    Each channel uses its own ground-truth maximum as the peak. A
    channel reproduced exactly (zero error) contributes a +inf sentinel
    which is excluded from the mean with a warning. A ground-truth
    channel with no positive values has an undefined peak and raises.
    """
    _check_cubes(pred, gt)
    pred64 = pred.astype(np.float64)
    gt64 = gt.astype(np.float64)
    values: list[float] = []
    for c in range(gt.shape[2]):
        peak = gt64[:, :, c].max()
        if peak <= 0:
            raise ContractError(
                f"ground-truth channel {c} has no positive values; "
                "its peak (and PSNR) is undefined")
        mse = float(np.mean((pred64[:, :, c] - gt64[:, :, c]) ** 2))
        if mse == 0.0:
            values.append(float("inf"))
        else:
            values.append(float(10.0 * np.log10(peak * peak / mse)))
    finite = [v for v in values if np.isfinite(v)]
    if len(finite) < len(values):
        warnings.warn(
            f"{len(values) - len(finite)} channel(s) reproduced exactly; "
            "their +inf PSNR is excluded from the mean", RuntimeWarning)
    mean = float(np.mean(finite)) if finite else float("inf")
    return MetricReport(values, mean, shape=tuple(gt.shape))


def pooled_psnr(pred: np.ndarray, gt: np.ndarray) -> float:
    """Whole-cube PSNR (error pooled before the log); for comparison only."""
    _check_cubes(pred, gt)
    peak = float(gt.astype(np.float64).max())
    if peak <= 0:
        raise ContractError("ground truth has no positive values")
    mse = float(np.mean((pred.astype(np.float64) - gt.astype(np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    win = np.outer(g, g)
    return win / win.sum()


def ssim_plane(pred: np.ndarray, gt: np.ndarray, data_range: float = 1.0) -> float:
    """SSIM of one 2-D plane.

    Windows slide over every valid position; images smaller than the
    window fall back to a single global window with uniform weights
    (warned, since that degenerates to a luminance/contrast comparison
    without locality).
    """
    if pred.shape != gt.shape or pred.ndim != 2:
        raise DimensionError(
            f"ssim_plane expects matching 2-D planes, got {pred.shape} vs {gt.shape}")
    if data_range <= 0:
        raise ContractError(f"data_range must be positive, got {data_range}")
    x = pred.astype(np.float64)
    y = gt.astype(np.float64)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    if min(x.shape) < SSIM_WINDOW:
        warnings.warn(
            f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM "
            "window; using one global uniform window", RuntimeWarning)
        mu_x, mu_y = x.mean(), y.mean()
        var_x, var_y = x.var(), y.var()
        cov = ((x - mu_x) * (y - mu_y)).mean()
        num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
        den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
        return float(num / den)
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    wx = np.lib.stride_tricks.sliding_window_view(x, (SSIM_WINDOW, SSIM_WINDOW))
    wy = np.lib.stride_tricks.sliding_window_view(y, (SSIM_WINDOW, SSIM_WINDOW))
    mu_x = np.einsum("hwij,ij->hw", wx, win, optimize=True)
    mu_y = np.einsum("hwij,ij->hw", wy, win, optimize=True)
    xx = np.einsum("hwij,ij->hw", wx * wx, win, optimize=True)
    yy = np.einsum("hwij,ij->hw", wy * wy, win, optimize=True)
    xy = np.einsum("hwij,ij->hw", wx * wy, win, optimize=True)
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return float((num / den).mean())


def ssim(pred: np.ndarray, gt: np.ndarray, data_range: float = 1.0) -> float:
    """Mean SSIM over the channels of an (H, W, C) cube pair."""
    _check_cubes(pred, gt)
    vals = [ssim_plane(pred[:, :, c], gt[:, :, c], data_range)
            for c in range(gt.shape[2])]
    return float(np.mean(vals))


def evaluate(pred: np.ndarray, gt: np.ndarray, data_range: float = 1.0) -> MetricReport:
    """PSNR report with the mean SSIM filled in."""
    report = psnr(pred, gt)
    report.mean_ssim = ssim(pred, gt, data_range)
    return report
