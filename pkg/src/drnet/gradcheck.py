"""Finite-difference suite over every op, the decoder blocks and the end-to-end loss.

Runs at float64. Each case reduces its op's output to a scalar through a fixed
random projection so every output coordinate contributes to the gradient.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from . import tensor as T
from .backbone import BackboneConfig, ResidualBlock
from .decoder import DRNet, DecoderConfig, correction_term, initial_depth_head, upI_step
from .losses import LossConfig, depth_loss, grad_loss, normal_loss, sobel_gradients, total_loss
from .rng import SplitMix64
from .tensor import RunningStats, Tensor, finite_diff_check

TOLERANCE = 1e-4
OP_STEP = 1e-5
# the end-to-end loss crosses thousands of relu/abs kinks; a smaller step keeps probes inside one smooth piece
END_TO_END_STEP = 1e-7


@dataclass
class CheckResult:
    name: str
    error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.error < TOLERANCE


def _leaf(rng, *shape, nudge=False):
    a = rng.standard_normal(shape)
    if nudge:
        a = np.where(np.abs(a) < 1e-2, np.sign(a) * 1e-2 + a, a)
    return Tensor(a, requires_grad=True)


def _scalar(rng, fn):
    proj = {}

    def f(x):
        out = fn(x)
        if out.size == 1:
            return T.reshape(out, (1, 1, 1, 1)) if out.data.ndim != 4 else out
        if "r" not in proj:
            proj["r"] = Tensor(rng.standard_normal(out.shape))
        return T.reshape(T.sum(T.mul(out, proj["r"])), (1, 1, 1, 1))

    return f


def _cases(seed: int) -> List[tuple]:
    rng = np.random.default_rng(seed)
    L = lambda *s, **k: _leaf(rng, *s, **k)  # noqa: E731
    cases = []

    def add(name, fn, x, indices=None):
        cases.append((name, _scalar(rng, fn), x, indices))

    # convolution
    w3, b3 = L(4, 2, 3, 3), L(4)
    add("conv2d x k3 pad1", lambda x: T.conv2d(x, w3, b3, 1, 1), L(1, 2, 5, 5))
    x5 = L(1, 2, 5, 5)
    add("conv2d weight k3", lambda w: T.conv2d(x5, w, b3, 1, 1), w3)
    add("conv2d bias", lambda b: T.conv2d(x5, w3, b, 1, 1), b3)
    add("conv2d x k3 stride2", lambda x: T.conv2d(x, w3, None, 2, 1), L(2, 2, 7, 6))
    w1 = L(3, 2, 1, 1)
    add("conv2d x k1", lambda x: T.conv2d(x, w1), L(2, 2, 4, 3))
    add("conv2d x k1 stride2", lambda x: T.conv2d(x, w1, None, 2, 0), L(1, 2, 6, 6))
    w5 = L(2, 3, 5, 5)
    add("conv2d x k5", lambda x: T.conv2d(x, w5, None, 1, 2), L(1, 3, 6, 6))
    w7 = L(2, 3, 7, 7)
    add("conv2d x k7 stride2", lambda x: T.conv2d(x, w7, None, 2, 3), L(1, 3, 8, 8))

    # batchnorm
    gam, bet = L(3), L(3)
    st = RunningStats.identity(3)
    add("batchnorm2d train x", lambda x: T.batchnorm2d(x, gam, bet, st, "train"), L(2, 3, 3, 3))
    xb = L(2, 3, 3, 3)
    add("batchnorm2d train gamma", lambda g: T.batchnorm2d(xb, g, bet, st, "train"), gam)
    add("batchnorm2d train beta", lambda b: T.batchnorm2d(xb, gam, b, st, "train"), bet)
    ste = RunningStats(rng.standard_normal(3), rng.random(3) + 0.5)
    add("batchnorm2d eval x", lambda x: T.batchnorm2d(x, gam, bet, ste, "eval"), L(2, 3, 3, 3))

    # pointwise, layout and resampling
    add("relu", T.relu, L(1, 2, 4, 4, nudge=True))
    add("maxpool2d k3 s2 p1", lambda x: T.maxpool2d(x, 3, 2, 1), L(1, 2, 6, 6))
    add("maxpool2d k2 s2", lambda x: T.maxpool2d(x, 2, 2, 0), L(1, 1, 4, 4))
    add("pixel_shuffle r2", lambda x: T.pixel_shuffle(x, 2), L(1, 8, 2, 3))
    add("pixel_shuffle r4", lambda x: T.pixel_shuffle(x, 4), L(1, 16, 2, 2))
    add("bilinear x2", lambda x: T.bilinear_upsample(x, 2), L(1, 2, 3, 4))
    add("bilinear x4", lambda x: T.bilinear_upsample(x, 4), L(2, 1, 3, 2))
    other = L(1, 3, 3, 3)
    add("concat_channels", lambda x: T.concat_channels([x, other, x]), L(1, 2, 3, 3))
    add("pad_replicate", lambda x: T.pad_replicate(x, 1), L(1, 1, 3, 4))
    add("avg_pool2d", lambda x: T.avg_pool2d(x, 2, 2), L(1, 2, 4, 4))

    # elementwise closure used by the losses
    c = L(1, 2, 3, 3)
    add("add", lambda x: T.add(x, c), L(1, 2, 3, 3))
    add("sub", lambda x: T.sub(c, x), L(1, 2, 3, 3))
    add("mul", lambda x: T.mul(x, c), L(1, 2, 3, 3))
    pos = Tensor(rng.random((1, 2, 3, 3)) + 0.5, requires_grad=True)
    add("div", lambda x: T.div(c, x), pos)
    add("abs", T.abs, L(1, 2, 3, 3, nudge=True))
    add("log", T.log, Tensor(rng.random((1, 2, 3, 3)) + 0.5, requires_grad=True))
    add("sqrt", T.sqrt, Tensor(rng.random((1, 2, 3, 3)) + 0.5, requires_grad=True))
    add("square", T.square, L(1, 2, 3, 3))
    add("mean", T.mean, L(1, 2, 3, 3))
    add("sum", T.sum, L(1, 2, 3, 3))

    # loss terms, derivatives w.r.t. the prediction
    g = Tensor(rng.random((2, 1, 6, 6)) * 3 + 1)
    add("sobel gx", lambda x: sobel_gradients(x)[0], L(1, 1, 5, 5))
    add("sobel gy", lambda x: sobel_gradients(x)[1], L(1, 1, 5, 5))
    d0 = lambda: Tensor(g.data + rng.uniform(0.1, 1.0, g.shape) * rng.choice([-1, 1], g.shape), requires_grad=True)  # noqa: E731
    add("depth_loss", lambda d: depth_loss(d, g), d0())
    add("grad_loss", lambda d: grad_loss(d, g), d0())
    add("normal_loss", lambda d: normal_loss(d, g), d0())

    # building blocks of the network
    srng = SplitMix64(seed)
    block = ResidualBlock(4, 4, 1, srng, np.float64)
    add("residual_block stride1", block, L(2, 4, 8, 8))
    block2 = ResidualBlock(4, 8, 2, srng, np.float64)
    add("residual_block stride2", block2, L(2, 4, 8, 8))
    net = DRNet(BackboneConfig(), DecoderConfig(correction_kernel=3), seed=seed, dtype=np.float64)
    dec = net.decoder
    add("initial_depth_head", lambda x: initial_depth_head(x, dec), L(2, 128, 2, 2))
    up5 = L(2, 1, 2, 2)
    add("upI_step level 4", lambda x: upI_step(4, x, up5, dec), L(2, 128, 2, 2))
    up1 = Tensor(rng.standard_normal((2, 1, 4, 4)))
    add("upI_step level 0", lambda x: upI_step(0, x, up1, dec), L(2, 16, 4, 4))
    d2, u2, i2 = L(2, 16, 4, 4), L(2, 1, 4, 4), L(2, 16, 4, 4)
    add("correction_term down", lambda x: correction_term(2, x, u2, i2, dec), d2)
    add("correction_term upII", lambda x: correction_term(2, d2, x, i2, dec), u2)
    add("correction_term upI", lambda x: correction_term(2, d2, u2, x, dec), i2)
    return [c + (OP_STEP,) for c in cases]


def _end_to_end_cases(seed: int, n_coords: int) -> List[tuple]:
    """Total loss of a default 64x64 model w.r.t. sampled input pixels and parameters."""
    rng = np.random.default_rng(seed + 1)
    net = DRNet(seed=seed, dtype=np.float64).train()
    g = Tensor(rng.random((1, 1, 64, 64)) * 5 + 1)
    loss_cfg = LossConfig()

    def f(_):
        return total_loss(net(img), g, loss_cfg).loss

    img = Tensor(rng.random((1, 3, 64, 64)), requires_grad=True)
    cases = [("end-to-end loss wrt image", f, img, rng.choice(img.size, n_coords, replace=False), END_TO_END_STEP)]
    params = dict(net.named_parameters())
    for name in ("backbone.layer0.conv.weight", "backbone.layer4.blocks.0.conv2.weight",
                 "decoder.upI.2.conv.weight", "decoder.corr.0.weight", "decoder.head5.bias"):
        p = params[name]
        idx = rng.choice(p.size, min(n_coords, p.size), replace=False)
        cases.append((f"end-to-end loss wrt {name}", f, p, idx, END_TO_END_STEP))
    return cases


def run_suite(seed: int = 0, end_to_end_coords: int = 24, log: Callable = None) -> List[CheckResult]:
    results = []
    for name, fn, x, indices, step in _cases(seed) + _end_to_end_cases(seed, end_to_end_coords):
        t0 = time.perf_counter()
        err = finite_diff_check(fn, x, step, indices)
        res = CheckResult(name, err, time.perf_counter() - t0)
        results.append(res)
        if log is not None:
            log(res)
    return results
