"""SGD training loop with reproducible, resumable step streams.

Every training step draws its randomness from a stream seeded by
(run seed, step index), so a resumed run continues bit-exactly where an
unbroken run would be; optimizer velocity is checkpointed whenever
momentum is active.
"""

from __future__ import annotations

import os

import numpy as np

from .backbone import (
    BackboneParams,
    backbone_from_named,
    init_backbone,
    load_backbone,
    named_params,
    save_backbone,
    zip_map_params,
)
from .config import RunConfig
from .diffusion import make_schedule, train_step
from .masking import MaskSpec, continuous_mask, random_mask


class NanLossError(ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int):
        super().__init__(f"non-finite loss at training step {step}")
        self.step = step


def _step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, step]))


def _step_mask(cfg: RunConfig, b: int, rng: np.random.Generator) -> np.ndarray:
    if cfg.mask_kind == "random":
        return random_mask(b, cfg.channels, cfg.t_len, cfg.mask_ratio, rng)
    return continuous_mask(
        b, cfg.channels, cfg.t_len, cfg.drop_length, cfg.drop_channels, rng, cfg.shared_window
    )


def init_from_config(cfg: RunConfig) -> BackboneParams:
    return init_backbone(
        np.random.default_rng(cfg.seed),
        channels=cfg.channels,
        width=cfg.width,
        depth=cfg.depth,
        kernel_sizes=tuple(cfg.rfa_kernels),
        head_experts=cfg.head_experts,
        d_emb=cfg.d_emb,
        gate_mode=cfg.gate_mode,
    )


def train(cfg: RunConfig, data: np.ndarray, out_dir, resume_from=None):
    """Train on a [n, C, Tlen] dataset; writes checkpoint.ckp1 and
    loss_curve.csv under ``out_dir``. Returns (params, losses).
    """
    cfg.check()
    n = data.shape[0]
    if data.shape[1:] != (cfg.channels, cfg.t_len):
        raise ValueError(
            f"dataset shape {data.shape} does not match config "
            f"(channels={cfg.channels}, t_len={cfg.t_len})"
        )
    sched = make_schedule(cfg.steps, cfg.beta_start, cfg.beta_end)

    start_step = 0
    velocity = None
    if resume_from is None:
        params = init_from_config(cfg)
    else:
        params, aux = load_backbone(resume_from, gate_mode=cfg.gate_mode)
        start_step = int(aux.get("meta.step", np.asarray(0.0)))
        if cfg.momentum > 0.0:
            vel_named = {
                k[len("opt.v.") :]: v for k, v in aux.items() if k.startswith("opt.v.")
            }
            if vel_named:
                velocity = backbone_from_named(vel_named, gate_mode=cfg.gate_mode)
    if velocity is None and cfg.momentum > 0.0:
        velocity = zip_map_params(lambda p, _: np.zeros_like(p), params, params)

    losses = []
    for step in range(start_step, cfg.train_steps):
        rng = _step_rng(cfg.seed, step)
        idx = rng.choice(n, size=cfg.batch, replace=cfg.batch > n)
        batch = data[idx]
        mask = _step_mask(cfg, len(idx), rng)
        loss, grads = train_step(params, batch, mask, sched, rng)
        if not np.isfinite(loss):
            raise NanLossError(step)
        if cfg.momentum > 0.0:
            velocity = zip_map_params(lambda v, g: cfg.momentum * v + g, velocity, grads)
            params = zip_map_params(lambda p, v: p - cfg.lr * v, params, velocity)
        else:
            params = zip_map_params(lambda p, g: p - cfg.lr * g, params, grads)
        losses.append((step, loss))

    os.makedirs(out_dir, exist_ok=True)
    extra = {"meta.step": np.asarray(float(cfg.train_steps))}
    if cfg.momentum > 0.0:
        extra.update({f"opt.v.{name}": v for name, v in named_params(velocity)})
    save_backbone(os.path.join(out_dir, "checkpoint.ckp1"), params, extra=extra)
    write_loss_curve(os.path.join(out_dir, "loss_curve.csv"), losses)
    return params, losses


def write_loss_curve(path, losses) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,loss\n")
        for step, loss in losses:
            fh.write(f"{step},{loss!r}\n")


def training_mask_spec(cfg: RunConfig, seed: int | None = None) -> MaskSpec:
    return MaskSpec(
        kind=cfg.mask_kind,
        ratio=cfg.mask_ratio,
        drop_length=cfg.drop_length,
        drop_channels=cfg.drop_channels,
        seed=cfg.seed if seed is None else seed,
        shared_window=cfg.shared_window,
    )
