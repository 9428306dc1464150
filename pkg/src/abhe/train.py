"""Training loop: batching, losses, Adam with exponential lr decay, logging.

Per iteration: forward both streams, cross non-local pre-alignment,
cascaded correlation/attention/regression, losses, backward, one Adam
step at lr0 * rate^(step/steps). A CSV log records the loss terms, the
gradient norm (so vanishing gradients are observable on long runs), and
the mean corner error on a fixed probe batch. A NaN loss aborts with
the offending batch's pair ids.

Everything is seeded: batch order, model init, and data generation, so
a fixed seed reproduces the loss trajectory bit-identically.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from . import losses
from .checkpoint import load_arrays, save_arrays
from .config import RunConfig
from .data import load_dataset
from .model import Model, _to_batch
from .optim import Adam
from .tensor import Tape, Tensor


class NumericalError(ArithmeticError):
    """Training produced a NaN/Inf loss."""


def batch_arrays(samples, indices):
    ia = np.stack([samples[i].patch_a for i in indices])[:, :, :, None]
    ib = np.stack([samples[i].patch_b for i in indices])[:, :, :, None]
    gt = np.stack([samples[i].gt_offsets for i in indices])
    return ia, ib, gt


def probe_corner_error(model: Model, samples, indices, batch_size: int) -> float:
    errs = []
    for start in range(0, len(indices), batch_size):
        chunk = indices[start:start + batch_size]
        ia, ib, gt = batch_arrays(samples, chunk)
        pred = model.predict_offsets(ia[:, :, :, 0], ib[:, :, :, 0])
        errs.extend(
            losses.corner_error(pred[j], gt[j]) for j in range(len(chunk))
        )
    return float(np.mean(errs))


def save_checkpoint(path, model: Model, cfg: RunConfig, step: int,
                    optimizer: Adam | None = None) -> None:
    arrays = model.state_arrays()
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
    save_arrays(path, arrays)
    meta = {"config": cfg.to_dict(), "step": step}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=1))


def load_checkpoint(path):
    """(Model, RunConfig, step, raw arrays) from a checkpoint file."""
    from .config import RunConfig, apply_setting

    arrays = load_arrays(path)
    meta_path = Path(str(path) + ".json")
    cfg = RunConfig()
    step = 0
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        for k, v in meta.get("config", {}).items():
            apply_setting(cfg, k, v)
        step = int(meta.get("step", 0))
    model = Model(cfg.model_config(), seed=cfg.seed)
    model.load_state_arrays(arrays)
    return model, cfg, step, arrays


def train(cfg: RunConfig, log_fn=print):
    """Run the configured training; returns the final checkpoint path."""
    cfg.validate()
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = load_dataset(cfg.data)
    n = len(samples)
    if n == 0:
        from .data import DataError

        raise DataError(f"dataset at {cfg.data} is empty")
    model = Model(cfg.model_config(), seed=cfg.seed)
    optimizer = Adam(model.params)
    probe = list(range(min(cfg.probe_size, n)))
    order_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
    weights = cfg.loss_weights()

    log_path = out_dir / "train_log.csv"
    log_file = open(log_path, "w")
    log_file.write("step,loss_pixel,loss_content,loss_total,grad_norm,lr,probe_corner_err\n")

    perm = []
    cursor = 0
    start_time = time.perf_counter()
    final_path = out_dir / "final.abhe"
    try:
        for step in range(cfg.iterations):
            if cursor + cfg.batch_size > len(perm):
                perm = list(order_rng.permutation(n))
                cursor = 0
            indices = perm[cursor:cursor + cfg.batch_size]
            cursor += cfg.batch_size
            ia_np, ib_np, _ = batch_arrays(samples, indices)
            optimizer.zero_grad()
            with Tape() as tape:
                ia = Tensor(ia_np)
                ib = Tensor(ib_np)
                result = model.forward(ia, ib)
                # homographies fine-to-coarse [H1,H2,H3] pair with (w1,w2,w3)
                l_pixel = losses.pixel_loss(ia, ib, result.homographies[::-1], weights)
                l_content = losses.content_loss(result.za, result.zb, result.h3_feature)
                l_total = losses.total_loss(l_content, l_pixel, cfg.lambda_c, cfg.lambda_p)
                loss_val = l_total.item()
                if not np.isfinite(loss_val):
                    dump = {
                        "step": step,
                        "batch_pair_ids": [samples[i].pair_id for i in indices],
                        "loss_pixel": l_pixel.item(),
                        "loss_content": l_content.item(),
                    }
                    (out_dir / "nan_dump.json").write_text(json.dumps(dump, indent=1))
                    raise NumericalError(
                        f"non-finite loss at step {step}; offending batch ids "
                        f"{dump['batch_pair_ids']} (dump in {out_dir / 'nan_dump.json'})"
                    )
                tape.backward(l_total)
            lr = cfg.learning_rate(step)
            grad_sq = 0.0
            for p in model.params.values():
                if p.grad is not None:
                    grad_sq += float((p.grad.astype(np.float64) ** 2).sum())
            optimizer.step(lr)
            if step % cfg.log_every == 0 or step == cfg.iterations - 1:
                probe_err = probe_corner_error(model, samples, probe, cfg.batch_size)
                log_file.write(
                    f"{step},{l_pixel.item():.6f},{l_content.item():.6f},{loss_val:.6f},"
                    f"{np.sqrt(grad_sq):.6f},{lr:.8g},{probe_err:.6f}\n"
                )
                log_file.flush()
                if log_fn is not None:
                    elapsed = time.perf_counter() - start_time
                    log_fn(
                        f"step {step:6d}  loss {loss_val:9.4f}  probe_err {probe_err:7.3f}px  "
                        f"lr {lr:.2e}  [{elapsed:.0f}s]"
                    )
            if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(out_dir / f"step{step + 1:06d}.abhe", model, cfg,
                                step + 1, optimizer)
    finally:
        log_file.close()
    save_checkpoint(final_path, model, cfg, cfg.iterations, optimizer)
    return final_path
