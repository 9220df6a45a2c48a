"""Checkpoints: a DRT1 container plus a ``<path>.json`` config sidecar.

Container entries are the model parameters under their dotted names, the
batchnorm running statistics (``...running_mean`` / ``...running_var``) and,
when an optimizer is saved, ``optim.step`` and ``optim.{m,v,v_max}.<param>``.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .config import RunConfig, parse_config
from .container import load_tensors, save_tensors
from .decoder import DRNet
from .errors import CheckpointError, ConfigMismatchError, FormatError
from .nn import BatchNorm2d
from .optim import Adam, AdamState
from .train import build_model, make_optimizer

FORMAT_VERSION = 1


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def checkpoint_save(path, model: DRNet, cfg: RunConfig, optimizer: Optional[Adam] = None):
    entries = {name: p.data for name, p in model.named_parameters()}
    entries.update(dict(model.named_buffers()))
    if optimizer is not None:
        st = optimizer.state
        entries["optim.step"] = np.array([st.t], dtype=np.float32)
        for key, store in (("m", st.m), ("v", st.v), ("v_max", st.v_max)):
            for name, arr in store.items():
                entries[f"optim.{key}.{name}"] = arr
    save_tensors(path, entries)
    meta = {"format": "DRT1", "version": FORMAT_VERSION, "optimizer": optimizer is not None, "config": cfg.to_dict()}
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True))


def _read_sidecar(path) -> dict:
    side = sidecar_path(path)
    try:
        meta = json.loads(side.read_text())
    except FileNotFoundError:
        raise CheckpointError(f"{side}: config sidecar not found") from None
    except json.JSONDecodeError as e:
        raise FormatError(f"{side}: invalid JSON ({e})") from None
    if meta.get("format") != "DRT1" or meta.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{side}: unsupported checkpoint format {meta.get('format')!r} version {meta.get('version')!r}"
        )
    return meta


def checkpoint_load(path, cfg: Optional[RunConfig] = None) -> Tuple[DRNet, Optional[Adam], RunConfig]:
    """Rebuild model (and optimizer, if saved) from ``path``.

    When ``cfg`` is given, its backbone and decoder sections must match the
    sidecar, otherwise :class:`ConfigMismatchError` is raised.
    """
    meta = _read_sidecar(path)
    saved = parse_config(meta["config"])
    if cfg is not None:
        for section in ("backbone", "decoder"):
            if getattr(cfg, section) != getattr(saved, section):
                raise ConfigMismatchError(
                    f"{section} config differs from the checkpoint's: {getattr(cfg, section)} vs {getattr(saved, section)}"
                )
    else:
        cfg = saved
    tensors = load_tensors(path)
    model = build_model(cfg)

    params = dict(model.named_parameters())
    for name, p in params.items():
        if name not in tensors:
            raise CheckpointError(f"{path}: missing entry {name!r}")
        arr = tensors[name]
        if arr.shape != p.shape:
            raise CheckpointError(f"{path}: entry {name!r} has shape {arr.shape}, model expects {p.shape}")
        p.data = arr.astype(model.dtype)
    for mod_name, mod in model.named_modules():
        if isinstance(mod, BatchNorm2d):
            for key, attr in (("running_mean", "mean"), ("running_var", "var")):
                full = f"{mod_name}.{key}"
                if full not in tensors:
                    raise CheckpointError(f"{path}: missing entry {full!r}")
                setattr(mod.stats, attr, tensors[full].astype(model.dtype))

    opt = None
    if meta.get("optimizer"):
        opt = make_optimizer(model, cfg)
        if "optim.step" not in tensors:
            raise CheckpointError(f"{path}: missing entry 'optim.step'")
        st = AdamState(t=int(tensors["optim.step"][0]))
        for key, store in (("m", st.m), ("v", st.v), ("v_max", st.v_max)):
            prefix = f"optim.{key}."
            for name, arr in tensors.items():
                if name.startswith(prefix):
                    store[name[len(prefix):]] = arr.astype(model.dtype)
        opt.state = st
    return model, opt, cfg
