"""``drnet`` command line: gen, train, eval, predict, bench, gradcheck.

Exit status is 0 on success, 2 on usage or configuration errors and 1 on
runtime failures. Results go to stdout, diagnostics to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

log = logging.getLogger("drnet")

CONFIG_ECHO = "run_config.json"


class UsageError(Exception):
    pass


def _size(text: str):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like HxW, got {text!r}") from None
    return h, w


def _int_list(text: str):
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _echo_config(cfg, directory):
    Path(directory).mkdir(parents=True, exist_ok=True)
    (Path(directory) / CONFIG_ECHO).write_text(cfg.to_json() + "\n")


def cmd_gen(args):
    from .data import generate_dataset

    h, w = args.size
    generate_dataset(args.out, args.count, h, w, args.seed, args.split)
    log.info("wrote %d scenes to %s", args.count, args.out)
    return 0


def cmd_train(args):
    from .checkpoint import checkpoint_save
    from .config import load_config
    from .data import load_dataset
    from .train import build_model, evaluate, fit, make_optimizer

    cfg = load_config(args.config)
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
        cfg.validate()
    rgb, depth = load_dataset(args.data)
    val = None
    if cfg.data.val_count:
        if cfg.data.val_count >= len(rgb):
            raise UsageError("data.val_count: must be smaller than the dataset")
        k = cfg.data.val_count
        val = (rgb[-k:], depth[-k:])
        rgb, depth = rgb[:-k], depth[:-k]
    model = build_model(cfg)
    opt = make_optimizer(model, cfg)
    out = Path(args.out)
    _echo_config(cfg, out.parent if str(out.parent) else ".")
    t0 = time.perf_counter()

    def report(r):
        log.info("epoch %d/%d  loss %.4f  (%.1fs)", r["epoch"], cfg.train.epochs, r["loss"], time.perf_counter() - t0)

    history = fit(model, rgb, depth, cfg, opt, callback=report)
    checkpoint_save(out, model, cfg, opt)
    record = {"history": history}
    if val is not None:
        record["val_metrics"] = evaluate(model, *val)
    Path(str(out) + ".history.json").write_text(json.dumps(record, indent=2))
    print(json.dumps(record["history"][-1] if history else {}, sort_keys=True))
    return 0


def cmd_eval(args):
    from . import tensor as T
    from .checkpoint import checkpoint_load
    from .data import load_dataset
    from .losses import evaluate_metrics, total_loss
    from .tensor import Tensor
    from .train import predict

    model, _, cfg = checkpoint_load(args.ckpt)
    rgb, depth = load_dataset(args.data)
    pred = predict(model, rgb)
    metrics = evaluate_metrics(pred, depth)
    model.eval()
    totals = []
    with T.no_grad():
        for start in range(0, len(rgb), 8):
            x = Tensor(rgb[start : start + 8].astype(model.dtype))
            y = Tensor(depth[start : start + 8].astype(model.dtype))
            b = total_loss(model(x), y, cfg.loss, auxiliary=cfg.decoder.auxiliary_outputs)
            totals.append((b.total, x.shape[0]))
    mean_loss = sum(t * n for t, n in totals) / len(rgb)
    record = {"checkpoint": str(args.ckpt), "data": str(args.data), "images": len(rgb),
              "metrics": metrics, "mean_total_loss": mean_loss}
    text = json.dumps(record, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_predict(args):
    from .checkpoint import checkpoint_load
    from .data import load_ppm, save_pgm16
    from .losses import DEPTH_CLAMP
    from .train import predict

    model, _, _ = checkpoint_load(args.ckpt)
    rgb = load_ppm(args.input)
    depth = predict(model, rgb)
    save_pgm16(args.output, np.clip(depth, *DEPTH_CLAMP))
    log.info("wrote %s (%dx%d)", args.output, depth.shape[3], depth.shape[2])
    return 0


def cmd_bench(args):
    from .bench import compare_decoders, format_table, write_report
    from .config import load_config
    from .train import build_model

    cfg = load_config(args.config)
    model = build_model(cfg)
    report = compare_decoders(model, args.resolutions, args.batch_sizes, args.warmup, args.iters, cfg.train.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report(report, out / "bench_report.json")
    _echo_config(cfg, out)
    print(format_table(report))
    return 0


def cmd_gradcheck(args):
    from .gradcheck import TOLERANCE, run_suite

    def show(r):
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:<60} {r.error:10.3e}  {status}", flush=True)

    results = run_suite(args.seed, log=show)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks below {TOLERANCE:g}")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drnet", description="Train, evaluate and benchmark the DRNet depth decoder at desk scale.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="render a synthetic RGB-D dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--size", type=_size, default=(64, 64))
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--split", choices=("train", "val"), default="train")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, help="override train.epochs")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="metrics of a checkpoint on a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", help="also write the JSON record here")
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="depth map for one PPM image")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--input", required=True)
    pr.add_argument("--output", required=True)
    pr.set_defaults(func=cmd_predict)

    b = sub.add_parser("bench", help="latency/memory of refinement vs full-res decoder")
    b.add_argument("--config")
    b.add_argument("--resolutions", type=_int_list, default=[64, 128, 224])
    b.add_argument("--batch-sizes", type=_int_list, default=[1, 4, 16])
    b.add_argument("--iters", type=int, default=10)
    b.add_argument("--warmup", type=int, default=2)
    b.add_argument("--out", default=".")
    b.set_defaults(func=cmd_bench)

    gc = sub.add_parser("gradcheck", help="finite-difference check of every op and the end-to-end loss")
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    from .errors import ConfigError, DRNetError

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    threads = int(os.environ.get("DRNET_THREADS", "1") or 1)
    try:
        with threadpool_limits(max(threads, 1)):
            return args.func(args)
    except (ConfigError, UsageError) as e:
        print(f"drnet: {e}", file=sys.stderr)
        return 2
    except (DRNetError, OSError, ValueError) as e:
        print(f"drnet: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
