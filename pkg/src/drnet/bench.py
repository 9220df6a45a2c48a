"""Latency and activation-memory comparison: refinement decoder vs full-res baseline.

Both networks run over one shared backbone instance and identical inputs, in
eval mode with the tape disabled. Memory is the peak count of live activation
elements (see :class:`drnet.tensor.AllocationTracker`), not process RSS.
"""
from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, List, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import tensor as T
from .decoder import DRNet, FullResNet
from .errors import ContractError
from .nn import count_parameters
from .tensor import Tensor

_bench_lock = threading.Lock()


@dataclass
class LatencyStats:
    median_ms: float
    p10_ms: float
    p90_ms: float
    samples: List[float] = field(repr=False)

    @property
    def fps(self) -> float:
        return 1000.0 / self.median_ms


def time_forward(forward_fn: Callable, inp: Tensor, warmup: int = 2, iters: int = 10) -> LatencyStats:
    """Median/p10/p90 wall-clock latency over exactly ``iters`` timed forwards."""
    if iters < 10:
        raise ContractError(f"time_forward: iters must be >= 10, got {iters}")
    samples = []
    with T.no_grad():
        for _ in range(warmup):
            forward_fn(inp)
        for _ in range(iters):
            t0 = time.perf_counter()
            forward_fn(inp)
            samples.append((time.perf_counter() - t0) * 1000.0)
    p10, med, p90 = np.percentile(samples, [10, 50, 90])
    return LatencyStats(float(med), float(p10), float(p90), samples)


def peak_activations(forward_fn: Callable, inp: Tensor) -> int:
    """Largest number of simultaneously live activation elements during one forward."""
    with T.no_grad(), T.track_allocations() as tracker:
        out = forward_fn(inp)
        del out
    if tracker.grad_tensors:
        raise ContractError("benchmark forward allocated tensors that require grad")
    return tracker.peak


def _final(model):
    if isinstance(model, DRNet):
        return lambda x: model(x).final
    return model


def _input(rng: np.random.Generator, n: int, h: int, w: int, dtype) -> Tensor:
    return Tensor(rng.random((n, 3, h, w)).astype(dtype))


def compare_decoders(
    model: DRNet,
    resolutions: Sequence[int] = (64, 128, 224),
    batch_sizes: Sequence[int] = (1, 4, 16),
    warmup: int = 2,
    iters: int = 10,
    seed: int = 0,
    baseline: FullResNet = None,
) -> dict:
    """Run both decoders at each square resolution; returns a JSON-ready report."""
    if not _bench_lock.acquire(blocking=False):
        raise ContractError("another benchmark is already running in this process")
    try:
        with threadpool_limits(1):
            return _compare(model, baseline, resolutions, batch_sizes, warmup, iters, seed)
    finally:
        _bench_lock.release()


def _compare(model, baseline, resolutions, batch_sizes, warmup, iters, seed):
    baseline = baseline or FullResNet(model.backbone, dtype=model.dtype)
    model.eval()
    baseline.eval()
    nets = {"drnet": _final(model), "fullres": _final(baseline)}
    params = {
        "drnet": {"total": count_parameters(model), "decoder": count_parameters(model.decoder)},
        "fullres": {"total": count_parameters(model.backbone) + count_parameters(baseline.decoder),
                    "decoder": count_parameters(baseline.decoder)},
    }
    rng = np.random.default_rng(seed)
    rows = []
    for res in resolutions:
        row = {"resolution": res, "decoders": {}}
        inp = _input(rng, 1, res, res, model.dtype)
        for name, fn in nets.items():
            lat = time_forward(fn, inp, warmup, iters)
            entry = {
                "median_ms": lat.median_ms,
                "p10_ms": lat.p10_ms,
                "p90_ms": lat.p90_ms,
                "fps_bs1": lat.fps,
                "fps_by_batch": {},
                "peak_activation_elements": peak_activations(fn, inp),
                "parameters": params[name],
            }
            for bs in batch_sizes:
                if bs == 1:
                    entry["fps_by_batch"]["1"] = lat.fps
                    continue
                big = _input(rng, bs, res, res, model.dtype)
                lb = time_forward(fn, big, 1, iters)
                entry["fps_by_batch"][str(bs)] = bs * 1000.0 / lb.median_ms
            row["decoders"][name] = entry
        d, f = row["decoders"]["drnet"], row["decoders"]["fullres"]
        row["ratios"] = {
            "speedup_bs1": f["median_ms"] / d["median_ms"],
            "memory": f["peak_activation_elements"] / d["peak_activation_elements"],
        }
        rows.append(row)
    return {
        "dtype": str(np.dtype(model.dtype)),
        "batch_sizes": list(batch_sizes),
        "iters": iters,
        "warmup": warmup,
        "results": rows,
    }


def format_table(report: dict) -> str:
    head = f"{'res':>5} {'decoder':<8} {'median ms':>10} {'p10':>9} {'p90':>9} {'FPS bs1':>8} {'peak elems':>12} {'params':>9}"
    lines = [head, "-" * len(head)]
    for row in report["results"]:
        for name, e in row["decoders"].items():
            lines.append(
                f"{row['resolution']:>5} {name:<8} {e['median_ms']:>10.2f} {e['p10_ms']:>9.2f} {e['p90_ms']:>9.2f} "
                f"{e['fps_bs1']:>8.1f} {e['peak_activation_elements']:>12d} {e['parameters']['total']:>9d}"
            )
        r = row["ratios"]
        lines.append(f"{row['resolution']:>5} {'ratio':<8} speedup x{r['speedup_bs1']:.2f}   memory x{r['memory']:.2f}")
    return "\n".join(lines)


def write_report(report: dict, path):
    with open(path, "w") as f:
        json.dump(report, f, indent=2)
