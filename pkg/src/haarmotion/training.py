"""Losses, the Adam optimizer with its step schedule, flip/reverse
augmentation, and the training loop.

The loss is the mean per-joint Euclidean distance between predicted and true
frames (l_re) plus the same distance on per-frame velocities inside the
prediction window (l_v).  Its gradient with respect to the prediction is the
stack of unit difference vectors, derived by hand and attached to the graph
as a single node so the optimizer sees exact derivatives.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import datametrics
from . import model as model_mod

METRICS_NAME = "metrics.log"
METRICS_HEADER = "# iteration\tlr\ttotal\tl_re\tl_v"


class TrainingAborted(Exception):
    """Raised when the loop hits a non-finite loss or gradient."""


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    l_re: float
    l_v: float
    velocity_degenerate: bool = False  # horizon < 2 frames: no velocity term


@dataclass(frozen=True)
class Schedule:
    base_lr: float = 3e-4
    drop_lr: float = 6e-5
    drop_at: int = 30000
    decay: float = 0.85
    decay_every: int = 3000
    total: int = 80000


DEFAULT_SCHEDULE = Schedule()


@dataclass(frozen=True)
class AugmentConfig:
    flip_prob: float = 0.5
    reverse_prob: float = 0.5
    flip_axis: int = 1  # lateral coordinate of each joint triple

    def __post_init__(self):
        if not (0.0 <= self.flip_prob <= 1.0 and 0.0 <= self.reverse_prob <= 1.0):
            raise ValueError("augmentation probabilities must lie in [0, 1]")
        if self.flip_axis not in (0, 1, 2):
            raise ValueError(f"flip_axis must be 0, 1 or 2, got {self.flip_axis}")


@dataclass(frozen=True)
class TrainSettings:
    model: model_mod.ModelConfig
    iterations: int = 80000
    batch_size: int = 256
    augment: AugmentConfig = AugmentConfig()
    schedule: Schedule = DEFAULT_SCHEDULE
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 1000


# ------------------------------------------------------------------- loss


def _unit_distances(diff: np.ndarray):
    """(..., K, 3) difference vectors -> (norms, unit vectors or zero)."""
    norms = np.sqrt((diff * diff).sum(axis=-1))
    units = np.zeros_like(diff)
    np.divide(diff, norms[..., None], out=units, where=norms[..., None] > 0)
    return norms, units


def _loss_pieces(pred: np.ndarray, target: np.ndarray):
    """Batched loss values and d(total)/d(pred) on (B, dt, K, 3) stacks."""
    norms, units = _unit_distances(pred - target)
    l_re = float(norms.mean())
    grad = units / norms.size

    dt = pred.shape[1]
    if dt >= 2:
        vdiff = (pred[:, 1:] - pred[:, :-1]) - (target[:, 1:] - target[:, :-1])
        vnorms, vunits = _unit_distances(vdiff)
        l_v = float(vnorms.mean())
        gv = vunits / vnorms.size
        grad[:, 1:] += gv
        grad[:, :-1] -= gv
        degenerate = False
    else:
        l_v = 0.0
        degenerate = True
    return l_re, l_v, degenerate, grad


def loss(pred: np.ndarray, target: np.ndarray) -> LossBreakdown:
    """Loss breakdown on one dt x C prediction/target pair (C = 3K)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if pred.shape[1] % 3:
        raise ValueError("channel count must be divisible by 3")
    dt, c = pred.shape
    l_re, l_v, degenerate, _ = _loss_pieces(
        pred.reshape(1, dt, c // 3, 3), target.reshape(1, dt, c // 3, 3)
    )
    return LossBreakdown(l_re + l_v, l_re, l_v, degenerate)


def loss_value(pred: ad.Value, target: np.ndarray, batch: int = 1):
    """Differentiable total loss over a (batch*dt) x C prediction Value.

    Returns (1x1 loss Value wired into the graph, LossBreakdown).  The
    backward closure multiplies the hand-derived gradient by the seed.
    """
    rows, c = pred.data.shape
    if rows % batch or c % 3:
        raise ValueError(f"bad prediction shape {pred.data.shape} for batch {batch}")
    dt = rows // batch
    p4 = pred.data.reshape(batch, dt, c // 3, 3)
    t4 = np.asarray(target, dtype=np.float64).reshape(batch, dt, c // 3, 3)
    l_re, l_v, degenerate, grad4 = _loss_pieces(p4, t4)
    grad = grad4.reshape(rows, c)
    node = ad.Value(
        [[l_re + l_v]], _parents=(pred,), _backward=lambda g: (g[0, 0] * grad,)
    )
    return node, LossBreakdown(l_re + l_v, l_re, l_v, degenerate)


# --------------------------------------------------------------- schedule


def lr_at(iteration: int, schedule: Schedule = DEFAULT_SCHEDULE) -> float:
    if not 0 <= iteration < schedule.total:
        raise ValueError(f"iteration {iteration} outside [0, {schedule.total})")
    if iteration < schedule.drop_at:
        return schedule.base_lr
    steps = (iteration - schedule.drop_at) // schedule.decay_every
    return schedule.drop_lr * schedule.decay**steps


# ------------------------------------------------------------------- adam


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: list) -> AdamState:
    return AdamState(
        m=[np.zeros_like(p.data) for p in params],
        v=[np.zeros_like(p.data) for p in params],
    )


def adam_step(params: list, grads: list, state: AdamState, lr: float) -> None:
    """One in-place Adam update with bias correction."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and state are not aligned")
    for i, g in enumerate(grads):
        if not np.isfinite(g).all():
            raise TrainingAborted(f"non-finite gradient in parameter {i}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ----------------------------------------------------------- augmentation


def augment(
    inputs: np.ndarray, target: np.ndarray, rng, config: AugmentConfig = AugmentConfig()
):
    """Coin-flip lateral mirror and time reversal, applied jointly to the
    input window and its target so the pair stays a contiguous motion."""
    inputs = np.array(inputs, dtype=np.float64)
    target = np.array(target, dtype=np.float64)
    t = inputs.shape[0]
    window = np.concatenate((inputs, target), axis=0)
    if rng.random() < config.flip_prob:
        frames, c = window.shape
        window = window.reshape(frames, c // 3, 3)
        window[:, :, config.flip_axis] *= -1.0
        window = window.reshape(frames, c)
    if rng.random() < config.reverse_prob:
        window = window[::-1]
    return window[:t].copy(), window[t:].copy()


# ------------------------------------------------------------------- loop


@dataclass
class MetricsRow:
    iteration: int
    lr: float
    total: float
    l_re: float
    l_v: float

    def format(self) -> str:
        return (
            f"{self.iteration}\t{self.lr:.12e}\t{self.total:.12e}"
            f"\t{self.l_re:.12e}\t{self.l_v:.12e}"
        )


@dataclass
class TrainResult:
    net: object
    history: list
    final_checkpoint: str


def train(clips: list, settings: TrainSettings, out_dir: str) -> TrainResult:
    """Run the loop: sample batch -> augment -> forward -> loss -> backward
    -> Adam at the scheduled rate; log metrics and write checkpoints.

    Deterministic given settings (one seeded generator drives sampling and
    augmentation; the model seed lives in settings.model).  A non-finite
    loss or gradient aborts with the newest on-disk checkpoint retained.
    """
    cfg = settings.model
    window_len = cfg.frames_in + cfg.frames_out
    if not clips:
        raise ValueError("training needs at least one clip")
    if clips[0].frames.shape[1] != cfg.channels:
        raise ValueError(
            f"clips carry {clips[0].frames.shape[1]} channels, "
            f"model expects {cfg.channels}"
        )
    rng = np.random.default_rng(settings.seed)
    net = model_mod.build(cfg)
    params = net.parameters()
    state = init_adam(params)

    os.makedirs(out_dir, exist_ok=True)
    ckpt_root = os.path.join(out_dir, "checkpoints")
    metrics_path = os.path.join(out_dir, METRICS_NAME)
    history: list[MetricsRow] = []
    last_good = os.path.join(ckpt_root, "iter_00000000")
    model_mod.save_checkpoint(net, last_good, iteration=0)

    with open(metrics_path, "w", encoding="utf-8") as log:
        log.write(METRICS_HEADER + "\n")
        for it in range(settings.iterations):
            lr = lr_at(it, settings.schedule)
            batch = datametrics.draw_training_windows(
                clips, window_len, settings.batch_size, rng
            )
            for b in range(settings.batch_size):
                batch[b, : cfg.frames_in], batch[b, cfg.frames_in :] = augment(
                    batch[b, : cfg.frames_in],
                    batch[b, cfg.frames_in :],
                    rng,
                    settings.augment,
                )
            # the graph runs on centered meter-scale values; losses are
            # computed there and reported in mm (scaling a norm is exact)
            scale = model_mod.MM_PER_UNIT
            inputs = model_mod.encode_windows(batch[:, : cfg.frames_in])
            targets = batch[:, cfg.frames_in :] / scale
            last_frames = np.repeat(
                batch[:, cfg.frames_in - 1 : cfg.frames_in] / scale,
                cfg.frames_out,
                axis=1,
            ).reshape(-1, cfg.channels)

            residual = model_mod.forward_value(
                net, ad.Value(inputs), batch=settings.batch_size
            )
            absolute = ad.add(residual, ad.Value(last_frames))
            total_node, meter = loss_value(
                absolute, targets, batch=settings.batch_size
            )
            l_re, l_v = meter.l_re * scale, meter.l_v * scale
            breakdown = LossBreakdown(
                l_re + l_v, l_re, l_v, meter.velocity_degenerate
            )
            if not np.isfinite(breakdown.total):
                raise TrainingAborted(
                    f"non-finite loss at iteration {it}; "
                    f"last good checkpoint: {last_good}"
                )

            ad.zero_grads(params)
            ad.backward(total_node)
            try:
                adam_step(params, [p.grad for p in params], state, lr)
            except TrainingAborted as exc:
                raise TrainingAborted(
                    f"{exc} at iteration {it}; last good checkpoint: {last_good}"
                ) from None

            if it % settings.log_every == 0 or it == settings.iterations - 1:
                row = MetricsRow(it, lr, breakdown.total, breakdown.l_re, breakdown.l_v)
                history.append(row)
                log.write(row.format() + "\n")
                log.flush()
            done = it + 1
            if settings.checkpoint_every and done % settings.checkpoint_every == 0:
                last_good = os.path.join(ckpt_root, f"iter_{done:08d}")
                model_mod.save_checkpoint(net, last_good, iteration=done)

    final = os.path.join(ckpt_root, "final")
    model_mod.save_checkpoint(net, final, iteration=settings.iterations)
    return TrainResult(net=net, history=history, final_checkpoint=final)
