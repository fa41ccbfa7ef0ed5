"""PSNR and SSIM on [0, 1] images, and paired-directory evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import Image, list_images, load_image

# reported when the two images are identical (mse below 1e-20)
PSNR_IDENTICAL = 200.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class UnpairedFileError(Exception):
    pass


def _pixels(x) -> np.ndarray:
    a = x.pixels if isinstance(x, Image) else np.asarray(x)
    return a.astype(np.float64)


def psnr(x, gt, max_val: float = 1.0) -> float:
    a, b = _pixels(x), _pixels(gt)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shapes differ, {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse < 1e-20:
        return PSNR_IDENTICAL
    return float(10 * np.log10(max_val ** 2 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return g


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable weighted window mean over every full window position."""
    k = g.size
    rows = sliding_window_view(img, k, axis=0) @ g
    return sliding_window_view(rows, k, axis=1) @ g


def ssim_map(x: np.ndarray, y: np.ndarray, data_range: float = 1.0) -> np.ndarray:
    """Local SSIM of two 2-D arrays at every valid 11x11 window position."""
    g = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    return ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))


def ssim(x, gt, data_range: float = 1.0) -> float:
    a, b = _pixels(x), _pixels(gt)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shapes differ, {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape[-2:]}")
    return float(np.mean([ssim_map(a[c], b[c], data_range).mean() for c in range(a.shape[0])]))


@dataclass
class MetricReport:
    names: list = field(default_factory=list)
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr)) if self.psnr else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else float("nan")

    def lines(self) -> list:
        out = [f"{n}, {p:.4f}, {s:.6f}" for n, p, s in zip(self.names, self.psnr, self.ssim)]
        out.append(f"average, {self.mean_psnr:.4f}, {self.mean_ssim:.6f}")
        return out

    def write(self, path) -> None:
        Path(path).write_text("\n".join(self.lines()) + "\n")


def evaluate_dir(denoised_dir, reference_dir) -> MetricReport:
    """Score every denoised image against the reference with the same relative path."""
    den_root, ref_root = Path(denoised_dir), Path(reference_dir)
    den = {p.relative_to(den_root).as_posix(): p for p in list_images(den_root)}
    ref = {p.relative_to(ref_root).as_posix(): p for p in list_images(ref_root)}
    for name in sorted(set(den) ^ set(ref)):
        side = "reference" if name in den else "denoised"
        raise UnpairedFileError(f"{name} has no counterpart in the {side} directory")
    report = MetricReport()
    for name in sorted(den):
        a, b = load_image(den[name]), load_image(ref[name])
        if a.shape != b.shape:
            raise ValueError(f"{name}: shape {a.shape} vs reference {b.shape}")
        report.names.append(name)
        report.psnr.append(psnr(a, b))
        report.ssim.append(ssim(a, b))
    return report
