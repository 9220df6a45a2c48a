"""Training loop over the multi-scale loss, evaluation and prediction."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from . import tensor as T
from .decoder import DRNet
from .errors import ConfigError, ShapeError
from .losses import LossConfig, evaluate_metrics, total_loss
from .optim import Adam
from .rng import derive_seed, splitmix64
from .tensor import Tensor

log = logging.getLogger(__name__)

PRECISIONS = {"float32": np.float32, "float64": np.float64}


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    epochs: int = 20
    batch_size: int = 4
    seed: int = 0
    freeze_backbone: bool = False
    precision: str = "float32"

    def validate(self, path: str = "train"):
        if not self.lr >= 0:
            raise ConfigError(f"{path}.lr: must be >= 0")
        if self.weight_decay < 0:
            raise ConfigError(f"{path}.weight_decay: must be >= 0")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ConfigError(f"{path}.betas: must be two numbers in [0, 1)")
        if not self.eps > 0:
            raise ConfigError(f"{path}.eps: must be > 0")
        if self.epochs < 0:
            raise ConfigError(f"{path}.epochs: must be >= 0")
        if self.batch_size < 1:
            raise ConfigError(f"{path}.batch_size: must be >= 1")
        if self.seed < 0:
            raise ConfigError(f"{path}.seed: must be >= 0")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"{path}.precision: must be float32 or float64")
        return self

    @property
    def dtype(self):
        return PRECISIONS[self.precision]


def build_model(cfg) -> DRNet:
    """DRNet for a :class:`~drnet.config.RunConfig`, seeded by ``train.seed``."""
    return DRNet(cfg.backbone, cfg.decoder, seed=cfg.train.seed, dtype=cfg.train.dtype)


def is_frozen(cfg) -> bool:
    return bool(cfg.backbone.freeze or cfg.train.freeze_backbone)


def make_optimizer(model: DRNet, cfg) -> Adam:
    params = [p for n, p in model.named_parameters() if not (is_frozen(cfg) and n.startswith("backbone."))]
    t = cfg.train
    return Adam(params, lr=t.lr, betas=t.betas, eps=t.eps, weight_decay=t.weight_decay)


def shuffled_order(n: int, seed: int, epoch: int) -> np.ndarray:
    keys = splitmix64(derive_seed(seed, epoch), n)
    return np.argsort(keys, kind="stable")


def _flip_mask(n: int, seed: int, epoch: int) -> np.ndarray:
    return (splitmix64(derive_seed(seed, epoch, 1), n) >> np.uint64(63)).astype(bool)


def train_step(model: DRNet, rgb: np.ndarray, depth: np.ndarray, opt: Adam, loss_cfg: LossConfig):
    model.train()
    img = Tensor(rgb.astype(model.dtype))
    target = Tensor(depth.astype(model.dtype))
    pyramid = model(img)
    breakdown = total_loss(pyramid, target, loss_cfg, auxiliary=model.decoder_config.auxiliary_outputs)
    T.backward(breakdown.loss)
    opt.step()
    model.zero_grad()
    return breakdown


def train_epoch(model: DRNet, rgb: np.ndarray, depth: np.ndarray, opt: Adam, cfg, epoch: int = 0) -> Dict[str, float]:
    """One pass over shuffled mini-batches; returns mean total loss and per-term means."""
    n = len(rgb)
    if n == 0:
        raise ShapeError("train_epoch: empty dataset")
    t = cfg.train
    order = shuffled_order(n, t.seed, epoch)
    flips = _flip_mask(n, t.seed, epoch) if cfg.data.hflip else np.zeros(n, dtype=bool)
    sums = {"loss": 0.0, "depth": 0.0, "grad": 0.0, "normal": 0.0}
    batches = 0
    for start in range(0, n, t.batch_size):
        idx = order[start : start + t.batch_size]
        x, y = rgb[idx], depth[idx]
        f = flips[idx]
        if f.any():
            x, y = x.copy(), y.copy()
            x[f] = x[f][..., ::-1]
            y[f] = y[f][..., ::-1]
        b = train_step(model, x, y, opt, cfg.loss)
        sums["loss"] += b.total
        for lv in b.levels.values():
            sums["depth"] += lv.depth
            sums["grad"] += lv.grad
            sums["normal"] += lv.normal
        batches += 1
    return {k: v / batches for k, v in sums.items()}


def fit(model: DRNet, rgb: np.ndarray, depth: np.ndarray, cfg, opt: Adam = None, callback=None) -> List[Dict[str, float]]:
    opt = opt or make_optimizer(model, cfg)
    history = []
    for epoch in range(cfg.train.epochs):
        report = train_epoch(model, rgb, depth, opt, cfg, epoch)
        report["epoch"] = epoch + 1
        history.append(report)
        log.debug("epoch %d loss %.4f", epoch + 1, report["loss"])
        if callback is not None:
            callback(report)
    return history


def predict(model: DRNet, rgb: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Full-resolution depth for (N, 3, h, w) RGB, in eval mode without a tape."""
    model.eval()
    outs = []
    with T.no_grad():
        for start in range(0, len(rgb), batch_size):
            img = Tensor(rgb[start : start + batch_size].astype(model.dtype))
            outs.append(np.array(model(img).final.data))
    return np.concatenate(outs)


def evaluate(model: DRNet, rgb: np.ndarray, depth: np.ndarray, batch_size: int = 8) -> Dict[str, float]:
    return evaluate_metrics(predict(model, rgb, batch_size), depth)
