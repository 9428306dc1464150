"""Evaluation and single-pair inference.

Evaluation reports PSNR / SSIM over the warped overlap and the mean
corner error, per difficulty tier and sample-weighted average, as JSON
(per-pair records included) and a CSV with the columns Easy, Moderate,
Hard, Average.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

from . import losses
from .data import TIERS, load_dataset
from .geometry import solve_dlt_np
from .model import Model
from .train import batch_arrays, load_checkpoint

METRICS = ("psnr_db", "ssim", "corner_err_px")


def evaluate_samples(model: Model, samples, batch_size: int = 8,
                     include_identity: bool = False) -> list:
    """Per-pair metric records {pair_id, tier, psnr_db, ssim, corner_err_px}."""
    patch = model.config.patch
    records = []
    for start in range(0, len(samples), batch_size):
        chunk = list(range(start, min(start + batch_size, len(samples))))
        ia, ib, gt = batch_arrays(samples, chunk)
        pred = model.predict_offsets(ia[:, :, :, 0], ib[:, :, :, 0])
        for j, idx in enumerate(chunk):
            s = samples[idx]
            h = solve_dlt_np(pred[j].astype(np.float64), patch, patch)
            rec = {
                "pair_id": s.pair_id,
                "tier": s.tier,
                "psnr_db": losses.psnr(s.patch_a, s.patch_b, h),
                "ssim": losses.ssim(s.patch_a, s.patch_b, h),
                "corner_err_px": losses.corner_error(pred[j], s.gt_offsets),
            }
            if include_identity:
                eye = np.eye(3)
                rec["identity_psnr_db"] = losses.psnr(s.patch_a, s.patch_b, eye)
                rec["identity_corner_err_px"] = losses.corner_error(
                    np.zeros(8), s.gt_offsets
                )
            records.append(rec)
    return records


def aggregate(records: list) -> dict:
    """Tier table + sample-weighted average; empty tiers are omitted."""
    tiers = {}
    for tier in TIERS:
        rows = [r for r in records if r["tier"] == tier]
        if not rows:
            print(f"warning: tier {tier!r} has no samples; omitted", file=sys.stderr)
            continue
        tiers[tier] = {m: float(np.mean([r[m] for r in rows])) for m in METRICS}
        tiers[tier]["count"] = len(rows)
    average = {m: float(np.mean([r[m] for r in records])) for m in METRICS}
    average["count"] = len(records)
    return {"tiers": tiers, "average": average}


def write_report(records: list, out_json, out_csv=None) -> dict:
    summary = aggregate(records)
    report = {"pairs": records, **summary}
    out_json = Path(out_json)
    out_json.parent.mkdir(parents=True, exist_ok=True)
    out_json.write_text(json.dumps(report, indent=1))
    if out_csv is None:
        out_csv = out_json.with_suffix(".csv")
    with open(out_csv, "w") as fh:
        fh.write("metric,Easy,Moderate,Hard,Average\n")
        for m in METRICS:
            cells = [
                f"{summary['tiers'][t][m]:.4f}" if t in summary["tiers"] else ""
                for t in TIERS
            ]
            fh.write(f"{m},{','.join(cells)},{summary['average'][m]:.4f}\n")
    return report


def evaluate(ckpt_path, data_path, out_json, batch_size: int | None = None) -> dict:
    model, cfg, _, _ = load_checkpoint(ckpt_path)
    samples = load_dataset(data_path)
    records = evaluate_samples(model, samples, batch_size or cfg.batch_size)
    return write_report(records, out_json)


def infer(ckpt_path, img_a: np.ndarray, img_b: np.ndarray, out_dir=None):
    """Estimate H for one pair; returns (H, offsets) and writes overlays."""
    from PIL import Image

    from .tensor import Tensor
    from . import geometry

    model, cfg, _, _ = load_checkpoint(ckpt_path)
    patch = model.config.patch
    if img_a.shape != (patch, patch) or img_b.shape != (patch, patch):
        raise ValueError(
            f"images must be {patch}x{patch} per the checkpoint config, "
            f"got {img_a.shape} and {img_b.shape}"
        )
    pred = model.predict_offsets(img_a, img_b)[0]
    h = solve_dlt_np(pred.astype(np.float64), patch, patch)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        warped = geometry.warp(
            Tensor(img_b[None, :, :, None].astype(np.float32)),
            Tensor(h.astype(np.float32)),
        ).data[0, :, :, 0]
        diff = np.abs(img_a - warped)
        for name, arr in (("warped_b.png", warped), ("absdiff.png", diff)):
            Image.fromarray(
                np.clip(arr * 255.0, 0, 255).astype(np.uint8)
            ).save(out_dir / name)
    return h, pred
