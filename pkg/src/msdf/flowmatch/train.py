"""Velocity-field regression training over a set-structured dataset.

Each step draws a minibatch of (data, class) pairs, a Gaussian source per
pair, and a uniform time; the condition is replaced by the null embedding
with probability p_uncond.  The loss is the mean squared mismatch between
the model velocity and the path derivative, minimized with Adam while an
EMA shadow of the parameters tracks the trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..diffkit import tensor as tk
from ..diffkit.optim import Adam, Ema
from ..diffkit.tensor import Tape, Tensor
from .model import VelocityModel
from .path import CondOtPath, sample_path


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch: int = 4
    lr: float = 1e-4
    p_uncond: float = 0.1
    sigma: float = 1e-5
    ema_decay: float = 0.999
    seed: int = 0
    log_every: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_uncond <= 1.0:
            raise ValueError(f"p_uncond must be in [0, 1], got {self.p_uncond}")
        if self.steps < 1 or self.batch < 1:
            raise ValueError("steps and batch must be positive")


def train(dataset: list[tuple[np.ndarray, int]], model: VelocityModel,
          config: TrainConfig, history: list | None = None) -> VelocityModel:
    """Train in place; returns the model with ``ema_shadow`` attached.

    ``dataset`` holds (matrix (n, d) float32, class id) pairs sharing one
    shape; matrices are expected channel-normalized.
    """
    if not dataset:
        raise ValueError("empty dataset")
    shape = np.asarray(dataset[0][0]).shape
    for mat, cid in dataset:
        if np.asarray(mat).shape != shape:
            raise ValueError(f"dataset shapes differ: {np.asarray(mat).shape} vs {shape}")
        if not 0 <= int(cid) < model.config.num_classes:
            raise ValueError(f"class id {cid} out of range")
    if shape[1] != model.config.d:
        raise ValueError(f"dataset width {shape[1]} != model width {model.config.d}")

    path = CondOtPath(config.sigma)
    opt = Adam(model.params, lr=config.lr)
    ema = Ema(model.params, decay=config.ema_decay)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xF10A7]))

    for step in range(config.steps):
        with Tape() as tape:
            wrapped = {k: Tensor(v, requires_grad=True) for k, v in model.params.items()}
            item_losses = []
            for _ in range(config.batch):
                x1, cid = dataset[rng.integers(0, len(dataset))]
                cond = None if rng.uniform() < config.p_uncond else int(cid)
                t = float(rng.uniform())
                x0 = rng.standard_normal(shape)
                xt, target = sample_path(path, x0, np.asarray(x1, np.float64), t)
                u = model.forward(xt.astype(np.float32), t, cond, params=wrapped)
                diff = tk.add(u, Tensor(-target.astype(np.float32)))
                item_losses.append(tk.reduce_mean(tk.multiply(diff, diff)))
            total = item_losses[0]
            for extra in item_losses[1:]:
                total = tk.add(total, extra)
            loss = tk.scale(total, 1.0 / config.batch)
        value = float(loss.data)
        if history is not None:
            history.append(value)
        if not np.isfinite(value):
            raise FloatingPointError(f"training loss became {value} at step {step}")
        tape.backward(loss)
        grads = {k: w.grad for k, w in wrapped.items() if w.grad is not None}
        opt.step(grads)
        ema.update(model.params)
        if config.log_every and (step + 1) % config.log_every == 0:
            print(f"  step {step + 1}/{config.steps}  loss {value:.6f}")
    model.ema_shadow = ema.state()
    return model
