"""Desk-scale self-supervised pretraining: schedule, AdamW, loop, checkpoints."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from . import tensor as T
from .config import dataclass_items, format_value
from .data import synth_pair
from .masking import mask_batch
from .model import ModelConfig, Params, forward, init_params, loss_total, targets_from_batch
from .rng import derive_seed
from .serialize import read_checkpoint, write_checkpoint
from .spectral import make_plan
from .tensor import Tensor

logger = logging.getLogger(__name__)

CSV_HEADER = ("step", "lr", "l_total", "l_con", "l_spa", "l_fre")


class NonFiniteGradient(FloatingPointError):
    pass


class Diverged(RuntimeError):
    pass


@dataclass
class ScheduleConfig:
    base_lr: float = 2e-4
    warmup_start_lr: float = 1e-6
    warmup_epochs: float = 10
    min_lr: float = 1e-5
    total_epochs: float = 200
    anneal: str = "cosine"

    def __post_init__(self):
        if not self.warmup_start_lr <= self.min_lr <= self.base_lr:
            raise ValueError("need warmup_start_lr <= min_lr <= base_lr")
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ValueError("need 0 <= warmup_epochs < total_epochs")


def lr_at(schedule: ScheduleConfig, epoch: float) -> float:
    """Linear warmup to ``base_lr``, then cosine annealing to ``min_lr``."""
    s = schedule
    if not 0 <= epoch <= s.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {s.total_epochs}]")
    if epoch <= s.warmup_epochs:
        frac = epoch / s.warmup_epochs if s.warmup_epochs else 1.0
        return s.warmup_start_lr + (s.base_lr - s.warmup_start_lr) * frac
    progress = (epoch - s.warmup_epochs) / (s.total_epochs - s.warmup_epochs)
    return s.min_lr + 0.5 * (s.base_lr - s.min_lr) * (1.0 + math.cos(math.pi * progress))


@dataclass
class TrainConfig:
    batch_size: int = 8
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    checkpoint_every: int = 0
    mask_counted: str = "high"


@dataclass
class TrainState:
    params: Params
    adam_m: Dict[str, np.ndarray]
    adam_v: Dict[str, np.ndarray]
    step: int = 0
    epoch: float = 0.0
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    loss_history: List[Tuple[float, ...]] = field(default_factory=list)

    @classmethod
    def fresh(cls, params: Params, schedule: ScheduleConfig) -> "TrainState":
        return cls(
            params=params,
            adam_m={k: np.zeros_like(v.data) for k, v in params.items()},
            adam_v={k: np.zeros_like(v.data) for k, v in params.items()},
            schedule=schedule,
        )


def adamw_step(state: TrainState, grads: Mapping[str, np.ndarray], lr: float,
               betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.05) -> TrainState:
    """Decoupled-weight-decay Adam update; returns a new state with ``step + 1``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for parameter {name!r}")
    b1, b2 = betas
    t = state.step + 1
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for name, p in state.params.items():
        g = grads[name]
        dt = p.dtype.type
        m = dt(b1) * state.adam_m[name] + dt(1 - b1) * g
        v = dt(b2) * state.adam_v[name] + dt(1 - b2) * g * g
        m_hat = m / dt(bc1)
        v_hat = v / dt(bc2)
        data = p.data * dt(1.0 - lr * weight_decay) - dt(lr) * m_hat / (np.sqrt(v_hat) + dt(eps))
        new_params[name] = Tensor(data, requires_grad=True, name=name)
        new_m[name], new_v[name] = m, v
    return replace(state, params=new_params, adam_m=new_m, adam_v=new_v, step=t)


def make_batch(cfg: ModelConfig, seed: int, step: int, batch_size: int, mask_counted: str = "high"):
    """Synthesize and mask the batch for ``step``; a pure function of (seed, step)."""
    H, W = cfg.image_size
    if H != W:
        raise ValueError("synthetic data requires square images")
    pairs = [synth_pair(derive_seed(seed, 1, step, i), H, dtype=cfg.dtype) for i in range(batch_size)]
    plan = make_plan(H, W)
    comps = mask_batch(plan, pairs, derive_seed(seed, 2, step), counted=mask_counted)
    originals = {
        "opt": Tensor(np.stack([p[0].data for p in pairs])),
        "sar": Tensor(np.stack([p[1].data for p in pairs])),
    }
    return comps, originals


def train_step(cfg: ModelConfig, state: TrainState, seed: int, total_steps: int, tcfg: TrainConfig):
    """One optimisation step; returns ``(new_state, history_row)``."""
    step = state.step
    epoch = step * state.schedule.total_epochs / total_steps
    lr = lr_at(state.schedule, epoch)
    comps, originals = make_batch(cfg, seed, step, tcfg.batch_size, tcfg.mask_counted)
    targets = targets_from_batch(comps, originals)
    out = forward(cfg, state.params, targets.components)
    loss, parts = loss_total(out, targets, cfg.toggles)
    if not np.isfinite(parts["l_total"]):
        raise Diverged(f"loss became non-finite at step {step}")
    grads = T.backward(loss, state.params)
    new = adamw_step(state, grads, lr, (tcfg.beta1, tcfg.beta2), tcfg.eps, tcfg.weight_decay)
    new.epoch = (step + 1) * state.schedule.total_epochs / total_steps
    row = (step, lr, parts["l_total"], parts["l_con"], parts["l_spa"], parts["l_fre"])
    new.loss_history = state.loss_history + [row]
    return new, row


def pretrain(cfg: ModelConfig, schedule: Optional[ScheduleConfig] = None, steps: int = 200, seed: int = 42,
             tcfg: Optional[TrainConfig] = None, out_dir: Optional[str] = None,
             resume: Optional[TrainState] = None, stop_at: Optional[int] = None,
             on_step: Optional[Callable] = None) -> TrainState:
    """Run the pretraining loop for ``steps`` total steps.

    ``resume`` continues a saved state; ``stop_at`` halts early (for
    checkpoint tests) without changing the schedule, which is always laid
    out over ``steps``.
    """
    schedule = schedule or ScheduleConfig()
    tcfg = tcfg or TrainConfig()
    state = resume or TrainState.fresh(init_params(cfg, seed), schedule)
    end = steps if stop_at is None else min(stop_at, steps)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    writer = None
    fh = None
    if out_dir:
        fh = open(os.path.join(out_dir, "metrics.csv"), "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for row in state.loss_history:
            writer.writerow(_fmt_row(row))
    try:
        while state.step < end:
            state, row = train_step(cfg, state, seed, steps, tcfg)
            logger.info("step %d lr %.3g loss %.5f (con %.4f spa %.4f fre %.4f)", *row)
            if writer:
                writer.writerow(_fmt_row(row))
            if on_step:
                on_step(state, row)
            if out_dir and tcfg.checkpoint_every and state.step % tcfg.checkpoint_every == 0:
                save_checkpoint(os.path.join(out_dir, "checkpoint.rsvc"), cfg, state, seed, steps, tcfg)
    finally:
        if fh:
            fh.close()
    if out_dir:
        save_checkpoint(os.path.join(out_dir, "checkpoint.rsvc"), cfg, state, seed, steps, tcfg)
    return state


def _fmt_row(row) -> List[str]:
    return [str(row[0])] + [repr(float(x)) for x in row[1:]]


def save_checkpoint(path, cfg: ModelConfig, state: TrainState, seed: int, steps: int,
                    tcfg: Optional[TrainConfig] = None) -> None:
    header = {f"model.{k}": v for k, v in dataclass_items(cfg).items()}
    header.update({f"schedule.{k}": v for k, v in dataclass_items(state.schedule).items()})
    header.update({f"train.{k}": v for k, v in dataclass_items(tcfg or TrainConfig()).items()})
    header.update(step=state.step, epoch=format_value(float(state.epoch)), seed=seed, steps=steps)
    tensors = {}
    for name, p in state.params.items():
        tensors[f"param/{name}"] = p.data
        tensors[f"adam_m/{name}"] = state.adam_m[name]
        tensors[f"adam_v/{name}"] = state.adam_v[name]
    hist = np.array(state.loss_history, dtype=np.float64).reshape(-1, len(CSV_HEADER))
    tensors["loss_history"] = hist
    write_checkpoint(path, header, tensors)


def load_checkpoint(path):
    """Returns ``(cfg, state, seed, steps, train_config)``."""
    from .config import MODEL_KEYS, SCHEDULE_KEYS, TRAIN_KEYS

    header, tensors = read_checkpoint(path)
    model_kw = {k[6:]: MODEL_KEYS[k[6:]](v) for k, v in header.items() if k.startswith("model.")}
    sched_kw = {k[9:]: (SCHEDULE_KEYS[k[9:]](v) if k[9:] in SCHEDULE_KEYS else v)
                for k, v in header.items() if k.startswith("schedule.")}
    train_kw = {k[6:]: TRAIN_KEYS[k[6:]](v) for k, v in header.items() if k.startswith("train.")}
    cfg = ModelConfig(**model_kw)
    schedule = ScheduleConfig(**sched_kw)
    params = {k[6:]: Tensor(v, requires_grad=True, name=k[6:]) for k, v in tensors.items() if k.startswith("param/")}
    state = TrainState(
        params=params,
        adam_m={k[7:]: v.copy() for k, v in tensors.items() if k.startswith("adam_m/")},
        adam_v={k[7:]: v.copy() for k, v in tensors.items() if k.startswith("adam_v/")},
        step=int(header["step"]),
        epoch=float(header["epoch"]),
        schedule=schedule,
        loss_history=[(int(r[0]),) + tuple(float(x) for x in r[1:]) for r in tensors["loss_history"]],
    )
    return cfg, state, int(header["seed"]), int(header["steps"]), TrainConfig(**train_kw)
