"""Synthetic warped-pair generation and dataset I/O.

A pair is built by cropping a P x P patch, displacing its four corners
by uniform offsets bounded by the tier radius rho, solving the 4-point
homography, and resampling the full image through it at the same crop
window. The ground-truth offsets are exact by construction. Tier radii
scale with the patch: rho = P/16 (easy), P/8 (moderate), P/4 (hard).

A procedural multi-octave value-noise generator provides a corpus when
no image directory is given; per-sample RNG is seeded by (dataset seed,
sample index) so generation is reproducible and order-independent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint, geometry
from .kernels import bilinear_gather

TIERS = ("easy", "moderate", "hard")


class DataError(ValueError):
    """Unusable corpus, undersized image, or corrupt dataset files."""


@dataclass
class PairSample:
    patch_a: np.ndarray  # [P, P] float32 in [0, 1]
    patch_b: np.ndarray
    gt_offsets: np.ndarray  # [8] float32, pixel units
    tier: str
    pair_id: str


def tier_rho(patch: int, tier: str) -> float:
    divisors = {"easy": 16, "moderate": 8, "hard": 4}
    if tier not in divisors:
        raise DataError(f"unknown tier {tier!r}, expected one of {TIERS}")
    return patch / divisors[tier]


def _bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = img.shape
    ys = np.linspace(0, h - 1, out_h)
    xs = np.linspace(0, w - 1, out_w)
    gx, gy = np.meshgrid(xs, ys)
    out = bilinear_gather(
        np.ascontiguousarray(img[None, :, :, None], dtype=np.float64),
        np.ascontiguousarray(gx.reshape(1, -1)),
        np.ascontiguousarray(gy.reshape(1, -1)),
    )
    return out.reshape(out_h, out_w)


def procedural_image(size: int, rng: np.random.Generator) -> np.ndarray:
    """One smooth multi-octave value-noise image in [0,1], float32."""
    img = np.zeros((size, size))
    amp = 1.0
    cells = 4
    while cells <= size // 2:
        img += amp * _bilinear_resize(rng.random((cells, cells)), size, size)
        amp *= 0.55
        cells *= 2
    # broad illumination gradient plus a few soft blobs for texture
    theta = rng.uniform(0, 2 * np.pi)
    yy, xx = np.meshgrid(np.linspace(-1, 1, size), np.linspace(-1, 1, size), indexing="ij")
    img += 0.35 * (np.cos(theta) * xx + np.sin(theta) * yy)
    for _ in range(3):
        cy, cx = rng.uniform(-0.8, 0.8, 2)
        s = rng.uniform(0.08, 0.3)
        img += rng.uniform(-0.5, 0.5) * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * s * s))
    lo, hi = img.min(), img.max()
    return ((img - lo) / (hi - lo + 1e-12)).astype(np.float32)


def procedural_corpus(n: int, size: int, seed: int) -> list:
    """n reproducible textured images (each gets its own child seed)."""
    if n < 1:
        raise DataError(f"corpus size must be >= 1, got {n}")
    return [
        procedural_image(size, np.random.default_rng(np.random.SeedSequence([seed, 77, i])))
        for i in range(n)
    ]


def generate_pair(img: np.ndarray, patch: int, rho: float, rng: np.random.Generator,
                  pair_id: str = "pair", tier: str = "easy") -> PairSample:
    """One aligned/warped patch pair with exact ground-truth offsets."""
    h, w = img.shape
    margin = int(np.ceil(rho)) + 2
    if w < patch + 2 * margin or h < patch + 2 * margin:
        raise DataError(
            f"image {h}x{w} too small for patch {patch} with margin {margin}"
        )
    if rho > patch / 4 + 1e-9:
        raise DataError(f"rho {rho} exceeds patch/4 = {patch / 4}")
    x0 = int(rng.integers(margin, w - patch - margin + 1))
    y0 = int(rng.integers(margin, h - patch - margin + 1))
    offsets = rng.uniform(-rho, rho, 8)
    corners = geometry.patch_corners(patch, patch) + np.array([x0, y0])
    dst = corners + offsets.reshape(4, 2)
    h_img = _homography_from_points(corners, dst)
    patch_a = img[y0:y0 + patch, x0:x0 + patch].astype(np.float32)
    # crop of the warped image == sampling the source at H p over the window
    ys, xs = np.meshgrid(np.arange(patch) + y0, np.arange(patch) + x0, indexing="ij")
    pts = np.stack([xs.reshape(-1), ys.reshape(-1), np.ones(patch * patch)])
    q = h_img @ pts
    gx = (q[0] / q[2]).reshape(1, -1)
    gy = (q[1] / q[2]).reshape(1, -1)
    patch_b = bilinear_gather(
        np.ascontiguousarray(img[None, :, :, None], dtype=np.float64),
        np.ascontiguousarray(gx), np.ascontiguousarray(gy),
    ).reshape(patch, patch).astype(np.float32)
    return PairSample(patch_a, patch_b, offsets.astype(np.float32), tier, pair_id)


def _homography_from_points(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """4-point solve in image coordinates via the normalized patch solver."""
    # translate so the first corner sits at the origin, then reuse solve_dlt_np
    base = src[0]
    size_x = src[1, 0] - src[0, 0] + 1
    size_y = src[3, 1] - src[0, 1] + 1
    offsets = (dst - src).reshape(8)
    h_local = geometry.solve_dlt_np(offsets, int(size_x), int(size_y))
    t = np.array([[1.0, 0.0, base[0]], [0.0, 1.0, base[1]], [0.0, 0.0, 1.0]])
    tinv = np.array([[1.0, 0.0, -base[0]], [0.0, 1.0, -base[1]], [0.0, 0.0, 1.0]])
    h = t @ h_local @ tinv
    return h / h[2, 2]


def make_dataset(images: list, patch: int, tier_counts: dict, seed: int) -> list:
    """Pairs across tiers, one per (seed, index)-seeded RNG; round-robins images."""
    samples = []
    index = 0
    for tier in TIERS:
        count = tier_counts.get(tier, 0)
        rho = tier_rho(patch, tier)
        for _ in range(count):
            rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
            img = images[index % len(images)]
            samples.append(
                generate_pair(img, patch, rho, rng, pair_id=f"{tier}-{index:05d}", tier=tier)
            )
            index += 1
    return samples


def save_dataset(samples: list, path) -> None:
    """Container (patches) + JSON index (ids, tiers, offsets) in a directory."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays = {}
    index = []
    for s in samples:
        arrays[f"{s.pair_id}.a"] = s.patch_a
        arrays[f"{s.pair_id}.b"] = s.patch_b
        index.append({
            "pair_id": s.pair_id,
            "tier": s.tier,
            "gt_offsets": [float(v) for v in s.gt_offsets],
        })
    checkpoint.save_arrays(path / "patches.abhe", arrays)
    with open(path / "index.json", "w") as fh:
        json.dump(index, fh, indent=1)


def load_dataset(path) -> list:
    path = Path(path)
    idx_file = path / "index.json"
    bin_file = path / "patches.abhe"
    if not idx_file.exists() or not bin_file.exists():
        raise DataError(f"dataset directory {path} needs index.json and patches.abhe")
    try:
        with open(idx_file) as fh:
            index = json.load(fh)
        arrays = checkpoint.load_arrays(bin_file)
    except (json.JSONDecodeError, checkpoint.ContainerError) as e:
        raise DataError(f"corrupt dataset at {path}: {e}") from e
    samples = []
    for rec in index:
        pid = rec["pair_id"]
        try:
            a = arrays[f"{pid}.a"]
            b = arrays[f"{pid}.b"]
        except KeyError as e:
            raise DataError(f"index entry {pid} missing its patches") from e
        samples.append(PairSample(
            a, b, np.asarray(rec["gt_offsets"], dtype=np.float32), rec["tier"], pid
        ))
    return samples


def load_corpus_dir(path, size: int | None = None) -> list:
    """Grayscale float images from a directory of PNG/PPM files."""
    from PIL import Image

    path = Path(path)
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in (".png", ".ppm", ".pgm"))
    if not files:
        raise DataError(f"no PNG/PPM images found in {path}")
    images = []
    for f in files:
        img = Image.open(f).convert("F")
        arr = np.asarray(img, dtype=np.float32)
        if arr.max() > 1.5:
            arr = arr / 255.0
        if size is not None and arr.shape != (size, size):
            arr = _bilinear_resize(arr.astype(np.float64), size, size).astype(np.float32)
        images.append(np.clip(arr, 0.0, 1.0))
    return images
