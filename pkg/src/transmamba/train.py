"""AdamW training loop with warm + cosine schedule, plus the eval harness.

Every stochastic choice (batch composition, patch location, flips) comes
from one seeded stream, so a (seed, config) pair reproduces bit-identical
parameters; parameters are re-rounded to float32 after each update to keep
checkpoints lossless.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data import RainPair, flip_augment, load_dataset, random_patch
from .losses import LossWeights, psnr, ssim, total_loss
from .module import quantize32
from .network import TransMamba, save_checkpoint
from .rng import Rng
from .tensor import stack


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int):
        super().__init__(f"loss became non-finite at iteration {iteration}")
        self.iteration = iteration


def lr_at(t: int, cfg: RunConfig) -> float:
    """Constant lr0 through warm_iters, then cosine decay to lr_min."""
    if t <= cfg.warm_iters:
        return cfg.lr0
    span = cfg.total_iters - cfg.warm_iters
    progress = (t - cfg.warm_iters) / span
    return cfg.lr_min + 0.5 * (cfg.lr0 - cfg.lr_min) * (1.0 + math.cos(math.pi * progress))


def adamw_step(theta: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
               t: int, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
               weight_decay: float = 1e-4):
    """One decoupled-weight-decay Adam update; returns (theta, m, v)."""
    b1, b2 = betas
    m = b1 * m + (1.0 - b1) * grad
    v = b2 * v + (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    theta = theta - lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * theta)
    return theta, m, v


class AdamW:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def step(self, model: TransMamba, lr: float, t: int):
        for name, p in model.named_parameters():
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            m, v = self.moments.get(name, (np.zeros_like(p.data), np.zeros_like(p.data)))
            theta, m, v = adamw_step(p.data, grad, m, v, t, lr,
                                     (self.cfg.beta1, self.cfg.beta2),
                                     self.cfg.eps, self.cfg.weight_decay)
            self.moments[name] = (m, v)
            p.data = quantize32(theta)


@dataclass
class TrainResult:
    model: TransMamba
    history: list  # (iteration, loss, lr)
    train_pairs: list
    val_pairs: list


def split_dataset(pairs: list[RainPair], holdout: int):
    if holdout <= 0 or holdout >= len(pairs):
        return pairs, []
    return pairs[:-holdout], pairs[-holdout:]


def train(cfg: RunConfig, pairs: list[RainPair] | None = None,
          log_fn=None) -> TrainResult:
    """Run the full loop; returns the trained model and the loss history."""
    if pairs is None:
        pairs = load_dataset(cfg.data_root)
    if not pairs:
        raise RuntimeError(f"no training pairs found under {cfg.data_root!r}")
    train_pairs, val_pairs = split_dataset(pairs, cfg.holdout)

    model = TransMamba(cfg.model, seed=cfg.seed)
    opt = AdamW(cfg)
    weights = LossWeights(cfg.alpha, cfg.coherence_per_channel)
    sampler = Rng(cfg.seed).spawn(0xDA7A)
    history = []
    log_file = open(cfg.log_path, "w") if cfg.log_path else None
    try:
        for t in range(1, cfg.total_iters + 1):
            lr = lr_at(t, cfg)
            patch, batch = cfg.stage_at(t)
            crops = []
            for _ in range(batch):
                pair = train_pairs[sampler.randint(0, len(train_pairs))]
                crops.append(flip_augment(random_patch(pair, patch, sampler), sampler))
            x = stack([c.rainy for c in crops], axis=0)
            x.requires_grad = False
            y = stack([c.clean for c in crops], axis=0)

            pred = model(x)
            loss = total_loss(pred, y, weights)
            loss_val = loss.item()
            if not math.isfinite(loss_val):
                raise TrainingDiverged(t)
            model.zero_grad()
            loss.backward()
            opt.step(model, lr, t)

            history.append((t, loss_val, lr))
            if log_file:
                log_file.write(json.dumps({"iter": t, "loss": loss_val, "lr": lr}) + "\n")
            if log_fn:
                log_fn(t, loss_val, lr)
            if cfg.checkpoint_interval and t % cfg.checkpoint_interval == 0:
                save_checkpoint(cfg.checkpoint_path, model)
            if cfg.eval_interval and val_pairs and t % cfg.eval_interval == 0 and log_fn:
                report = evaluate(model, val_pairs)
                log_fn(t, report["mean_psnr"], lr, "eval")
    finally:
        if log_file:
            log_file.close()
    if cfg.checkpoint_path:
        save_checkpoint(cfg.checkpoint_path, model)
    return TrainResult(model, history, train_pairs, val_pairs)


def evaluate(model: TransMamba, pairs: list[RainPair]) -> dict:
    """Derain every pair and aggregate PSNR/SSIM."""
    if not pairs:
        raise RuntimeError("evaluate: empty dataset")
    rows = []
    for pair in pairs:
        out = model.derain(pair.rainy)
        rows.append({
            "id": pair.id,
            "psnr": psnr(out, pair.clean),
            "ssim": ssim(out, pair.clean),
            "input_psnr": psnr(pair.rainy, pair.clean),
        })
    return {
        "mean_psnr": float(np.mean([r["psnr"] for r in rows])),
        "mean_ssim": float(np.mean([r["ssim"] for r in rows])),
        "mean_input_psnr": float(np.mean([r["input_psnr"] for r in rows])),
        "images": rows,
    }


def write_report(report: dict, text_path):
    """Plain-text table plus a JSON-lines twin next to it."""
    text_path = Path(text_path)
    lines = [f"{'image':<12} {'psnr':>8} {'ssim':>8} {'input_psnr':>11}"]
    for row in report["images"]:
        lines.append(f"{row['id']:<12} {row['psnr']:>8.3f} {row['ssim']:>8.4f} {row['input_psnr']:>11.3f}")
    lines.append(f"{'mean':<12} {report['mean_psnr']:>8.3f} {report['mean_ssim']:>8.4f} "
                 f"{report['mean_input_psnr']:>11.3f}")
    text_path.write_text("\n".join(lines) + "\n")
    jsonl_path = text_path.with_suffix(text_path.suffix + ".jsonl")
    with open(jsonl_path, "w") as fh:
        for row in report["images"]:
            fh.write(json.dumps(row) + "\n")
        fh.write(json.dumps({"id": "mean", "psnr": report["mean_psnr"],
                             "ssim": report["mean_ssim"],
                             "input_psnr": report["mean_input_psnr"]}) + "\n")
    return jsonl_path
