"""SGD training for the network engine.

Classifier training follows the classical recipe: momentum SGD, a
learning rate halved every fixed number of iterations, weight decay on
the fully connected layer only (never on biases or PReLU slopes), and
optional horizontal-flip / random-crop augmentation.  Everything is
deterministic given the config seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from faceverify.linalg import make_rng

__all__ = ["TrainConfig", "TrainResult", "learning_rate_at", "augment_batch", "train", "accuracy"]


@dataclass
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 1e-2
    lr_halving_interval: int = 100_000
    momentum: float = 0.9
    weight_decay_conv: float = 0.0
    weight_decay_fc: float = 5e-4
    max_iters: int = 1000
    seed: int = 0
    init_std: float = 0.01
    hflip: bool = False
    random_crop: bool = False
    crop_size: int = 100
    checkpoint_interval: int = 0  # 0 = final snapshot only
    subtract_mean: bool = True


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    iterations: int = 0
    checkpoints: list[int] = field(default_factory=list)


def learning_rate_at(cfg: TrainConfig, iteration: int) -> float:
    """Step schedule: base rate halved every lr_halving_interval iterations."""
    return cfg.learning_rate * 0.5 ** (iteration // cfg.lr_halving_interval)


def augment_batch(batch: np.ndarray, rng: np.random.Generator, cfg: TrainConfig, train: bool = True) -> np.ndarray:
    """Per-sample horizontal flip (p=0.5) and random square crop.

    The eval path center-crops and never flips, so the same config can
    preprocess both phases.  Raises if the input is smaller than the
    crop target.
    """
    out = batch
    if cfg.random_crop:
        n, h, w, _ = out.shape
        size = cfg.crop_size
        if h < size or w < size:
            raise ValueError(f"input {h}x{w} is smaller than crop size {size}")
        if train:
            oy = rng.integers(0, h - size + 1, size=n)
            ox = rng.integers(0, w - size + 1, size=n)
        else:
            oy = np.full(n, (h - size) // 2)
            ox = np.full(n, (w - size) // 2)
        cropped = np.empty((n, size, size, out.shape[3]))
        for i in range(n):
            cropped[i] = out[i, oy[i] : oy[i] + size, ox[i] : ox[i] + size, :]
        out = cropped
    if cfg.hflip and train:
        flips = rng.random(out.shape[0]) < 0.5
        out = out.copy()
        out[flips] = out[flips, :, ::-1, :]
    return out


class _MomentumSGD:
    """Classical momentum: v <- mu*v - lr*(grad + wd*w); w <- w + v."""

    def __init__(self, net, cfg: TrainConfig):
        self.cfg = cfg
        self.net = net
        self.velocities = [np.zeros_like(value) for _, _, value, _, _ in net.param_items()]

    def step(self, lr: float) -> None:
        decay = {"conv": self.cfg.weight_decay_conv, "fc": self.cfg.weight_decay_fc, "none": 0.0}
        for v, (_, _, value, grad, group) in zip(self.velocities, self.net.param_items()):
            wd = decay[group]
            g = grad + wd * value if wd else grad
            v *= self.cfg.momentum
            v -= lr * g
            value += v


def train(net, images: np.ndarray, labels: np.ndarray, cfg: TrainConfig,
          checkpoint_fn=None) -> TrainResult:
    """Run momentum SGD for cfg.max_iters iterations.

    images: (n, h, w, c) float64 in [0, 1]; labels: (n,) int class ids.
    Batches are drawn by reshuffling the dataset each epoch.  Aborts
    with RuntimeError if the loss turns non-finite.
    """
    rng = make_rng(cfg.seed)
    net.initialize(rng, cfg.init_std)
    if cfg.subtract_mean:
        net.input_mean = float(images.mean())
    optimizer = _MomentumSGD(net, cfg)
    result = TrainResult()

    n = images.shape[0]
    order = rng.permutation(n)
    cursor = 0
    for it in range(cfg.max_iters):
        if cursor + cfg.batch_size > n:
            order = rng.permutation(n)
            cursor = 0
        idx = order[cursor : cursor + cfg.batch_size]
        cursor += cfg.batch_size

        batch = augment_batch(images[idx], rng, cfg, train=True)
        loss = net.loss(batch, labels[idx], train=True, rng=rng)
        if not np.isfinite(loss):
            raise RuntimeError(f"training diverged: loss={loss} at iteration {it}")
        net.backward(labels[idx])
        optimizer.step(learning_rate_at(cfg, it))
        result.losses.append(loss)
        result.iterations = it + 1

        if checkpoint_fn and cfg.checkpoint_interval and (it + 1) % cfg.checkpoint_interval == 0:
            checkpoint_fn(net, it + 1)
            result.checkpoints.append(it + 1)
    if checkpoint_fn:
        checkpoint_fn(net, result.iterations)
        result.checkpoints.append(result.iterations)
    return result


def accuracy(net, images: np.ndarray, labels: np.ndarray, cfg: TrainConfig | None = None,
             batch_size: int = 64) -> float:
    """Top-1 accuracy in eval mode (center crop if cropping is on)."""
    hits = 0
    rng = make_rng(0)
    for start in range(0, images.shape[0], batch_size):
        batch = images[start : start + batch_size]
        if cfg is not None:
            batch = augment_batch(batch, rng, cfg, train=False)
        probs = net.forward(batch, train=False)[-1]
        hits += int((probs.argmax(axis=1) == labels[start : start + batch_size]).sum())
    return hits / images.shape[0]
