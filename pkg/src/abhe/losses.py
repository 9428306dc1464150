"""Unsupervised objective and evaluation metrics.

Training losses are masked mean-absolute differences: for each cascade
stage the all-one mask and the target image are warped by that stage's
homography, the mask gates the source image, and the per-pixel L1 gap
is averaged over all pixels (mean, not sum, so the stage weights mean
the same thing at every resolution).

PSNR/SSIM are evaluation-only (plain numpy, never taped) and are
computed over the overlap region: PSNR from mask-weighted MSE with peak
1.0, capped at 100 dB; SSIM with an 11x11 Gaussian window (sigma 1.5,
K1=0.01, K2=0.03) averaged over windows fully covered by the mask.
"""

from __future__ import annotations

import numpy as np

from . import geometry, ops
from .tensor import Tensor

PSNR_CAP_DB = 100.0
PSNR_MSE_FLOOR = 1e-10
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
MASK_FULL = 0.999
MIN_OVERLAP_FRACTION = 0.01


class NoOverlapError(ValueError):
    """Warped overlap covers under 1% of the frame."""


def pixel_loss(ia: Tensor, ib: Tensor, homographies: list, weights) -> Tensor:
    """Sum of per-stage weighted masked L1 gaps at full image resolution.

    ``homographies[i]`` pairs with ``weights[i]``; each stage contributes
    weights[i] * mean |warp(E, H_i) * ia - warp(ib, H_i)|.
    """
    b, h, w, _ = ia.shape
    total = None
    ones = geometry.ones_mask(b, h, w, dtype=ia.dtype.type)
    for hom, wgt in zip(homographies, weights):
        mask = geometry.warp_mask(ones, hom)
        gap = ops.mean(ops.absolute(ops.sub(ops.mul(mask, ia), geometry.warp(ib, hom))))
        term = ops.scale(gap, float(wgt))
        total = term if total is None else ops.add(total, term)
    return total


def content_loss(za: Tensor, zb: Tensor, h_feat: Tensor) -> Tensor:
    """Masked L1 gap between za and warp(zb) at the deepest feature scale."""
    b, h, w, _ = za.shape
    mask = geometry.warp_mask(geometry.ones_mask(b, h, w, dtype=za.dtype.type), h_feat)
    return ops.mean(ops.absolute(ops.sub(ops.mul(mask, za), geometry.warp(zb, h_feat))))


def total_loss(l_content: Tensor, l_pixel: Tensor, lam_c: float, lam_p: float) -> Tensor:
    return ops.add(ops.scale(l_content, float(lam_c)), ops.scale(l_pixel, float(lam_p)))


# ---------------------------------------------------------------------------
# evaluation metrics (numpy only)


def _aligned_pair(ia: np.ndarray, ib: np.ndarray, h: np.ndarray):
    """(masked ia, warped ib, mask) as 2-d float64 arrays."""
    ia = np.asarray(ia, dtype=np.float64)
    ib = np.asarray(ib, dtype=np.float64)
    ht = Tensor(np.asarray(h), dtype=np.float64)
    warped = geometry.warp(Tensor(ib[None, :, :, None], dtype=np.float64), ht).data[0, :, :, 0]
    mask = geometry.warp_mask(
        geometry.ones_mask(1, ia.shape[0], ia.shape[1], dtype=np.float64), ht
    ).data[0, :, :, 0]
    if mask.sum() < MIN_OVERLAP_FRACTION * mask.size:
        raise NoOverlapError(
            f"overlap covers {mask.sum() / mask.size:.2%} of the frame (< 1%)"
        )
    return mask * ia, warped, mask


def psnr(ia: np.ndarray, ib: np.ndarray, h: np.ndarray) -> float:
    """Peak signal-to-noise ratio (dB) over the overlap region."""
    ga, gb, mask = _aligned_pair(ia, ib, h)
    mse = (mask * (ga - gb) ** 2).sum() / mask.sum()
    if mse < PSNR_MSE_FLOOR:
        return PSNR_CAP_DB
    return min(float(10.0 * np.log10(1.0 / mse)), PSNR_CAP_DB)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = size // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    g1 = np.exp(-(coords ** 2) / (2 * sigma * sigma))
    win = np.outer(g1, g1)
    return win / win.sum()


def _window_view(img: np.ndarray, size: int) -> np.ndarray:
    from numpy.lib.stride_tricks import sliding_window_view

    return sliding_window_view(img, (size, size))


def ssim(ia: np.ndarray, ib: np.ndarray, h: np.ndarray) -> float:
    """Mean SSIM over fully mask-covered 11x11 windows of the overlap."""
    ga, gb, mask = _aligned_pair(ia, ib, h)
    win = gaussian_window()
    size = SSIM_WINDOW
    wa = _window_view(ga, size)
    wb = _window_view(gb, size)
    wm = _window_view(mask, size)
    full = wm.min(axis=(2, 3)) > MASK_FULL
    if not full.any():
        raise NoOverlapError("no fully mask-covered SSIM window in the overlap")
    mu_a = np.einsum("ijkl,kl->ij", wa, win)
    mu_b = np.einsum("ijkl,kl->ij", wb, win)
    e_aa = np.einsum("ijkl,kl->ij", wa * wa, win)
    e_bb = np.einsum("ijkl,kl->ij", wb * wb, win)
    e_ab = np.einsum("ijkl,kl->ij", wa * wb, win)
    var_a = e_aa - mu_a ** 2
    var_b = e_bb - mu_b ** 2
    cov = e_ab - mu_a * mu_b
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float((num / den)[full].mean())


def corner_error(pred_offsets: np.ndarray, gt_offsets: np.ndarray) -> float:
    """Mean Euclidean distance over the 4 corners, in pixels."""
    d = (np.asarray(pred_offsets, dtype=np.float64)
         - np.asarray(gt_offsets, dtype=np.float64)).reshape(-1, 4, 2)
    return float(np.sqrt((d ** 2).sum(axis=-1)).mean())
