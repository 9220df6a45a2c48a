"""Per-level depth/gradient/normal loss, multi-scale supervision and metrics.

With ``F(x) = ln(x + alpha)`` and ``e = |d - g|``::

    depth  = mean F(e)
    grad   = mean F(|Sx e|) + F(|Sy e|)
    normal = mean 1 - <n_d, n_g> / (|n_d| |n_g|),   n = [-Sx, -Sy, 1]

where ``Sx``/``Sy`` are the 3x3 Sobel responses divided by 8 with replicated
borders. Each produced pyramid level is compared against the target
average-pooled to that level's size, and the weighted per-level sums are
added.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]) / 8.0
_SOBEL_Y = _SOBEL_X.T.copy()


@dataclass
class LossConfig:
    alpha: float = 0.5
    level_weights: List[float] = field(default_factory=lambda: [1.0] * 6)

    def validate(self, path: str = "loss"):
        if not isinstance(self.alpha, (int, float)) or not self.alpha > 0:
            raise ConfigError(f"{path}.alpha: must be > 0")
        if len(self.level_weights) != 6:
            raise ConfigError(f"{path}.level_weights: must list 6 weights (levels 5 .. 0)")
        return self

    def weight(self, level: int) -> float:
        # listed coarse to fine, like the pyramid
        return float(self.level_weights[5 - level])


@dataclass
class LevelTerms:
    depth: float
    grad: float
    normal: float


@dataclass
class LossBreakdown:
    levels: Dict[int, LevelTerms]
    total: float
    loss: Optional[Tensor] = field(default=None, repr=False, compare=False)

    def to_json(self) -> dict:
        return {
            "total": self.total,
            "levels": {str(k): asdict(v) for k, v in sorted(self.levels.items(), reverse=True)},
        }


def _check_pair(d: Tensor, g: Tensor, op: str):
    if d.shape != g.shape:
        raise ShapeError(f"{op}: prediction {d.shape} and target {g.shape} differ")


def sobel_gradients(x: Tensor):
    """Return ``(gx, gy)``; a unit-slope ramp along width gives ``gx == 1``."""
    if x.data.ndim != 4 or x.shape[1] != 1:
        raise ShapeError(f"sobel_gradients: expected (n, 1, h, w), got {x.shape}")
    # replicate padding defines the stencil down to 2x2 (the coarsest level of a 64x64 input)
    if x.shape[2] < 2 or x.shape[3] < 2:
        raise ShapeError(f"sobel_gradients: need h, w >= 2, got {x.shape[2]}x{x.shape[3]}")
    xp = T.pad_replicate(x, 1)
    kx = Tensor(_SOBEL_X.reshape(1, 1, 3, 3).astype(x.dtype))
    ky = Tensor(_SOBEL_Y.reshape(1, 1, 3, 3).astype(x.dtype))
    return T.conv2d(xp, kx), T.conv2d(xp, ky)


def _F(x: Tensor, alpha: float) -> Tensor:
    return T.log(T.add(x, alpha))


def depth_loss(d: Tensor, g: Tensor, alpha: float = 0.5) -> Tensor:
    _check_pair(d, g, "depth_loss")
    return T.mean(_F(T.abs(T.sub(d, g)), alpha))


def grad_loss(d: Tensor, g: Tensor, alpha: float = 0.5) -> Tensor:
    _check_pair(d, g, "grad_loss")
    gx, gy = sobel_gradients(T.abs(T.sub(d, g)))
    return T.mean(T.add(_F(T.abs(gx), alpha), _F(T.abs(gy), alpha)))


def normal_loss(d: Tensor, g: Tensor) -> Tensor:
    _check_pair(d, g, "normal_loss")
    dx, dy = sobel_gradients(d)
    with T.no_grad():
        gx, gy = sobel_gradients(g)
    dot = T.add(T.add(T.mul(dx, gx), T.mul(dy, gy)), 1.0)
    nd = T.sqrt(T.add(T.add(T.square(dx), T.square(dy)), 1.0))
    ng = T.sqrt(T.add(T.add(T.square(gx), T.square(gy)), 1.0))
    return T.mean(T.sub(1.0, T.div(dot, T.mul(nd, ng))))


def downsample_target(g: Tensor, out_h: int, out_w: int) -> Tensor:
    h, w = g.shape[2:]
    if out_h < 1 or out_w < 1 or h % out_h or w % out_w:
        raise ShapeError(f"downsample_target: {out_h}x{out_w} does not divide {h}x{w}")
    if (out_h, out_w) == (h, w):
        return g
    return T.avg_pool2d(g, h // out_h, w // out_w)


def level_loss(d: Tensor, g: Tensor, alpha: float):
    return depth_loss(d, g, alpha), grad_loss(d, g, alpha), normal_loss(d, g)


def total_loss(pyramid, g: Tensor, config: LossConfig = None, auxiliary: bool = True) -> LossBreakdown:
    """Weighted sum of per-level losses; with ``auxiliary=False`` only level 0 counts."""
    config = config or LossConfig()
    levels = sorted(pyramid.levels, reverse=True) if auxiliary else [0]
    terms = {}
    total = None
    for level in levels:
        d = pyramid.levels[level]
        target = downsample_target(g, *d.shape[2:])
        ld, lg, ln = level_loss(d, target, config.alpha)
        li = T.mul(T.add(T.add(ld, lg), ln), config.weight(level))
        total = li if total is None else T.add(total, li)
        terms[level] = LevelTerms(ld.item(), lg.item(), ln.item())
    return LossBreakdown(terms, total.item(), total)


# ---------------------------------------------------------------- metrics

DEPTH_CLAMP = (1e-3, 10.0)


def evaluate_metrics(d, g, mask=None) -> Dict[str, float]:
    """RMSE, mean |log10 d - log10 g| and delta accuracies at 1.25, 1.25^2, 1.25^3.

    ``d`` is clamped to [1e-3, 10] m first; pixels with ``g <= 0`` or outside
    ``mask`` are ignored.
    """
    d = np.asarray(d.data if isinstance(d, Tensor) else d, dtype=np.float64)
    g = np.asarray(g.data if isinstance(g, Tensor) else g, dtype=np.float64)
    if d.shape != g.shape:
        raise ShapeError(f"evaluate_metrics: prediction {d.shape} and target {g.shape} differ")
    valid = g > 0
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    if not valid.any():
        raise ShapeError("evaluate_metrics: empty validity mask")
    d = np.clip(d[valid], *DEPTH_CLAMP)
    g = g[valid]
    ratio = np.maximum(d / g, g / d)
    return {
        "rmse": float(np.sqrt(np.mean((d - g) ** 2))),
        "log10": float(np.mean(np.abs(np.log10(d) - np.log10(g)))),
        "delta1": float(np.mean(ratio < 1.25)),
        "delta2": float(np.mean(ratio < 1.25**2)),
        "delta3": float(np.mean(ratio < 1.25**3)),
    }


def aggregate_metrics(records: List[Dict[str, float]], weights: List[int]) -> Dict[str, float]:
    """Pixel-weighted combination of per-image metric records (rmse recombined in squares)."""
    w = np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    out = {}
    for k in records[0]:
        vals = np.array([r[k] for r in records])
        out[k] = float(math.sqrt(np.sum(w * vals**2))) if k == "rmse" else float(np.sum(w * vals))
    return out
