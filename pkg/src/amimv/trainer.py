"""Optimizers, learning-rate schedules, and the pretraining loop.

The loop follows the momentum-pair recipe: encode the normalized anchor
and augmented counterpart views with the query encoder, EMA-update the
key encoder and encode the remaining two views under no-grad, take the
fused contrastive loss, backpropagate, and step SGD under a
warmup-then-cosine schedule. A single-image two-augmentation baseline
mode reuses the same machinery with the plain contrastive loss.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import loss as losses
from . import model as M
from . import tensor as T
from .datasets import ImageDataset, resolve_dataset
from .errors import ContractError, NumericError, ValidationError
from .fsutil import atomic_write_text
from .views import AMIMVBatch, AugmentConfig, RngStream, augment_view, build_amimv_batch
from .tensor import Tensor

REFERENCE_BATCH = 256
REFERENCE_BASE_LR = 0.75


# ---------------------------------------------------------------------------
# learning-rate schedule


@dataclass
class Schedule:
    base_lr: float
    total_steps: int
    warmup_fraction: float = 0.1
    warmup_start: float = 1e-4

    @property
    def warmup_steps(self) -> int:
        return math.ceil(self.warmup_fraction * self.total_steps)


def base_lr_for_batch(batch_size: int) -> float:
    return REFERENCE_BASE_LR * batch_size / REFERENCE_BATCH


def lr_at(step: int, schedule: Schedule) -> float:
    """Linear warmup from warmup_start to base_lr, then cosine to zero."""
    if not 0 <= step <= schedule.total_steps:
        raise ContractError(f"step {step} outside [0, {schedule.total_steps}]")
    w = schedule.warmup_steps
    if step < w:
        frac = step / w
        return schedule.warmup_start + (schedule.base_lr - schedule.warmup_start) * frac
    span = schedule.total_steps - w
    u = (step - w) / span if span > 0 else 1.0
    return schedule.base_lr * 0.5 * (1.0 + math.cos(math.pi * u))


# ---------------------------------------------------------------------------
# optimizers


@dataclass
class OptimState:
    kind: str  # sgd_momentum | adamw
    momentum: float = 0.9
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    buffers: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    def _buf(self, name: str, kind: str, like: np.ndarray) -> np.ndarray:
        slot = self.buffers.setdefault(name, {})
        if kind not in slot:
            slot[kind] = np.zeros_like(like)
        return slot[kind]


def sgd_step(params: dict[str, Tensor], state: OptimState, lr: float) -> None:
    """v <- mu*v + g; p <- p - lr*(v + wd*p), decoupled weight decay."""
    for name, p in params.items():
        if p.grad is None:
            continue
        v = state._buf(name, "v", p.data)
        v *= state.momentum
        v += p.grad
        p.data = (p.data - lr * (v + state.weight_decay * p.data)).astype(p.dtype)
        p.grad = None
    state.t += 1


def adamw_step(params: dict[str, Tensor], state: OptimState, lr: float) -> None:
    """Adam moments with bias correction, decoupled weight decay."""
    b1, b2 = state.betas
    state.t += 1
    t = state.t
    for name, p in params.items():
        if p.grad is None:
            continue
        m = state._buf(name, "m", p.data)
        v = state._buf(name, "v", p.data)
        m *= b1
        m += (1 - b1) * p.grad
        v *= b2
        v += (1 - b2) * p.grad * p.grad
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        p.data = (
            p.data - lr * mhat / (np.sqrt(vhat) + state.eps) - lr * state.weight_decay * p.data
        ).astype(p.dtype)
        p.grad = None


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    dataset: str = "synthetic:C=4,counts=700:70:70:70,size=28"
    out_dir: str = "run"
    mode: str = "amimv"  # amimv | simclr_baseline
    epochs: int = 2
    batch_size: int = 64
    seed: int = 0
    arch: str = "tiny"
    ema_momentum: float = 0.99
    ema_placement: str = "before"  # relative to the query optimizer step
    tau: float = 0.2
    fusion: str = "mean_norm"
    view_size: int = 0  # 0: use the dataset's native size
    base_lr: float = 0.0  # 0: scale the reference rate by batch size
    warmup_fraction: float = 0.1
    warmup_start: float = 1e-4
    sgd_momentum: float = 0.9
    weight_decay: float = 1e-4
    standardize_augmented: bool = True
    crop_scale: tuple[float, float] = (0.2, 1.0)
    blur_probability: float = 1.0
    snapshot_epochs: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in ("amimv", "simclr_baseline"):
            raise ValidationError(f"unknown mode {self.mode!r}")
        if self.ema_placement not in ("before", "after"):
            raise ValidationError(f"ema_placement must be before/after, got {self.ema_placement!r}")
        if self.mode == "amimv" and self.batch_size < 2:
            raise ValidationError("amimv mode needs batch_size >= 2")


_TUPLE_FIELDS = {"crop_scale"}


def config_from_dict(data: dict, overrides: dict[str, str] | None = None) -> RunConfig:
    """Build a RunConfig from JSON data plus dotted-key CLI overrides."""
    valid = {f.name: f.type for f in RunConfig.__dataclass_fields__.values()}
    merged = dict(data)
    for key, raw in (overrides or {}).items():
        merged[key] = raw
    unknown = [k for k in merged if k not in valid]
    if unknown:
        raise ValidationError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    defaults = RunConfig()
    coerced = {}
    for key, value in merged.items():
        target = getattr(defaults, key)
        if isinstance(value, str) and not isinstance(target, str):
            if isinstance(target, bool):
                value = value.lower() in ("1", "true", "yes")
            elif isinstance(target, int):
                value = int(value)
            elif isinstance(target, float):
                value = float(value)
            elif key in _TUPLE_FIELDS:
                value = tuple(float(x) for x in value.split(":"))
            elif isinstance(target, list):
                value = [int(x) for x in value.split(":")] if value else []
        if key in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(value)
        coerced[key] = value
    return RunConfig(**coerced)


def resolve_view_size(config: RunConfig, dataset: ImageDataset) -> int:
    if config.view_size:
        return config.view_size
    size = dataset.image_size
    divisor = 4 if config.arch == "tiny" else 16
    if size % divisor == 0:
        return size
    return 64  # the published recipe's resize target


def augment_config_for(config: RunConfig, view_size: int) -> AugmentConfig:
    return AugmentConfig(
        crop_output=view_size,
        crop_scale=tuple(config.crop_scale),
        blur_probability=config.blur_probability,
        standardize_augmented=config.standardize_augmented,
    )


# ---------------------------------------------------------------------------
# pretraining loop


@dataclass
class TrainResult:
    out_dir: str
    epoch_losses: list[float]
    pair: M.EncoderPair


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n - batch_size + 1, batch_size):
        yield order[start : start + batch_size]


def _write_log(out_dir: str, rows: list[tuple[int, float, float]]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["epoch", "mean_loss", "lr"])
    for epoch, mean_loss, lr in rows:
        writer.writerow([epoch, f"{mean_loss:.8f}", f"{lr:.8f}"])
    atomic_write_text(os.path.join(out_dir, "log.csv"), buf.getvalue())


def pretrain(config: RunConfig, dataset: ImageDataset | None = None) -> TrainResult:
    """Run the full pretraining loop; writes log.csv, checkpoint, run.json."""
    if dataset is None:
        dataset = resolve_dataset(config.dataset, seed=config.seed)
    view_size = resolve_view_size(config, dataset)
    aug_cfg = augment_config_for(config, view_size)
    enc_cfg = M.EncoderConfig(
        arch=config.arch, input_channels=dataset.channels, input_size=view_size
    )
    pair = M.init_pair(enc_cfg, seed=config.seed, momentum=config.ema_momentum)
    loss_cfg = losses.LossConfig(tau=config.tau, fusion=config.fusion)
    opt = OptimState(
        kind="sgd_momentum", momentum=config.sgd_momentum, weight_decay=config.weight_decay
    )
    stream = RngStream(config.seed)
    images, _ = dataset.splits["train"]
    steps_per_epoch = images.shape[0] // config.batch_size
    if steps_per_epoch == 0:
        raise ValidationError(
            f"train split of {images.shape[0]} images is smaller than batch_size {config.batch_size}"
        )
    schedule = Schedule(
        base_lr=config.base_lr or base_lr_for_batch(config.batch_size),
        total_steps=config.epochs * steps_per_epoch,
        warmup_fraction=config.warmup_fraction,
        warmup_start=config.warmup_start,
    )

    os.makedirs(config.out_dir, exist_ok=True)
    atomic_write_text(
        os.path.join(config.out_dir, "run.json"),
        json.dumps(asdict(config) | {"view_size": view_size}, indent=2),
    )

    log_rows: list[tuple[int, float, float]] = []
    epoch_losses: list[float] = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        shuffle_rng = stream.generator(epoch, -2, 0, 0)
        batch_losses = []
        lr = 0.0
        for batch_index, idx in enumerate(_epoch_batches(images.shape[0], config.batch_size, shuffle_rng)):
            lr = lr_at(step, schedule)
            loss_value = _train_step(
                config, pair, loss_cfg, aug_cfg, stream, dataset.channel_stats,
                images[idx], epoch, batch_index, opt, lr,
            )
            if not math.isfinite(loss_value):
                raise NumericError(
                    f"non-finite loss {loss_value} at epoch {epoch}, step {step}"
                )
            batch_losses.append(loss_value)
            step += 1
        mean_loss = float(np.mean(batch_losses))
        epoch_losses.append(mean_loss)
        log_rows.append((epoch, mean_loss, lr))
        if epoch in config.snapshot_epochs:
            pair.step = step
            M.save_checkpoint(pair, os.path.join(config.out_dir, f"epoch_{epoch}"))

    pair.step = step
    M.save_checkpoint(pair, config.out_dir)
    _write_log(config.out_dir, log_rows)
    return TrainResult(out_dir=config.out_dir, epoch_losses=epoch_losses, pair=pair)


def _train_step(
    config: RunConfig,
    pair: M.EncoderPair,
    loss_cfg: losses.LossConfig,
    aug_cfg: AugmentConfig,
    stream: RngStream,
    stats: tuple,
    batch_images: np.ndarray,
    epoch: int,
    batch_index: int,
    opt: OptimState,
    lr: float,
) -> float:
    if config.mode == "amimv":
        batch = build_amimv_batch(batch_images, stats, aug_cfg, stream, epoch, batch_index)
        with T.Tape() as tape:
            _, z1n = M.encode(pair.q_params, batch.v1n, pair.config)
            _, z2a = M.encode(pair.q_params, batch.v2a, pair.config)
            with T.no_grad():
                if config.ema_placement == "before":
                    M.ema_update(pair)
                _, z1a = M.encode(pair.k_params, batch.v1a, pair.config)
                _, z2n = M.encode(pair.k_params, batch.v2n, pair.config)
            loss = losses.amimv_loss(z1n, z2a, z1a, z2n, loss_cfg)
        T.backward(loss, tape)
        sgd_step(pair.q_params, opt, lr)
        if config.ema_placement == "after":
            M.ema_update(pair)
    else:
        va = _augment_batch(batch_images, stats, aug_cfg, stream, epoch, batch_index, branch=1)
        vb = _augment_batch(batch_images, stats, aug_cfg, stream, epoch, batch_index, branch=2)
        with T.Tape() as tape:
            _, za = M.encode(pair.q_params, va, pair.config)
            _, zb = M.encode(pair.q_params, vb, pair.config)
            loss = losses.nt_xent(za, zb, loss_cfg.tau)
        T.backward(loss, tape)
        sgd_step(pair.q_params, opt, lr)
    return loss.item()


def _augment_batch(images, stats, aug_cfg, stream, epoch, batch_index, branch) -> Tensor:
    views = [
        augment_view(images[i], stats, aug_cfg, stream.generator(epoch, batch_index, i, branch))
        for i in range(images.shape[0])
    ]
    return Tensor(np.stack([v.data for v in views]), dtype=np.float32)
