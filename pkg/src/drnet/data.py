"""Procedural RGB-D scenes and binary netpbm I/O.

Scenes are rendered orthographically: the image spans ``SCENE_WIDTH`` meters
horizontally, a slanted background plane sits behind 3-8 spheres and
axis-aligned boxes, and each pixel takes the nearest surface. Colour is the
object's albedo times Lambertian shading from one directional light plus a
small ambient term, quantized to 8 bits.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .errors import FormatError, HeaderError, MaxvalError, ShapeError, TruncatedError
from .rng import SplitMix64, derive_seed

DEPTH_RANGE = (0.5, 10.0)
SCENE_WIDTH = 4.0
AMBIENT = 0.2


@dataclass(frozen=True)
class Scene:
    rgb: np.ndarray  # (1, 3, h, w) in [0, 1]
    depth: np.ndarray  # (1, 1, h, w) meters
    seed: int


def _shade(normal: np.ndarray, light: np.ndarray) -> np.ndarray:
    return AMBIENT + (1.0 - AMBIENT) * np.clip(normal @ light, 0.0, None)


def synth_scene(seed: int, h: int, w: int, n_objects: Optional[int] = None) -> Scene:
    """Deterministic scene for ``seed``; ``n_objects`` overrides the random 3-8 count."""
    if h % 32 or w % 32 or h <= 0 or w <= 0:
        raise ShapeError(f"synth_scene: h and w must be positive multiples of 32, got {h}x{w}")
    rng = SplitMix64(seed)
    scale = SCENE_WIDTH / w
    X = (np.arange(w) + 0.5) * scale
    Y = (np.arange(h) + 0.5) * scale
    X, Y = np.meshgrid(X, Y)

    # light points from the surface toward the camera side (negative z)
    theta = rng.uniform(0.0, 2 * np.pi)
    tilt = rng.uniform(0.2, 0.8)
    light = np.array([np.cos(theta) * tilt, np.sin(theta) * tilt, -1.0])
    light /= np.linalg.norm(light)

    z0 = rng.uniform(5.0, 8.0)
    a = rng.uniform(-0.6, 0.6)
    b = rng.uniform(-0.6, 0.6)
    cx, cy = X.mean(), Y.mean()
    depth = z0 + a * (X - cx) + b * (Y - cy)
    plane_n = np.array([a, b, -1.0]) / np.sqrt(a * a + b * b + 1.0)
    albedo = rng.uniform(0.3, 1.0, (3,))
    shade = np.full((h, w), _shade(plane_n, light))
    rgb = albedo[:, None, None] * shade[None]

    count = rng.integers(3, 9) if n_objects is None else n_objects
    height = h * scale
    for _ in range(count):
        kind = rng.integers(0, 2)
        col = rng.uniform(0.2, 1.0, (3,))
        ox = rng.uniform(0.0, SCENE_WIDTH)
        oy = rng.uniform(0.0, height)
        oz = rng.uniform(1.0, z0 - 0.5)
        if kind == 0:
            r = rng.uniform(0.2, 0.8)
            dx, dy = X - ox, Y - oy
            inside = dx * dx + dy * dy < r * r
            dz = np.sqrt(np.clip(r * r - dx * dx - dy * dy, 0.0, None))
            z = oz - dz
            hit = inside & (z < depth)
            n = np.stack([dx, dy, -dz], axis=-1) / r
            s = _shade(n, light)
        else:
            hw, hh = rng.uniform(0.2, 0.9), rng.uniform(0.2, 0.9)
            inside = (np.abs(X - ox) < hw) & (np.abs(Y - oy) < hh)
            z = np.full((h, w), oz)
            hit = inside & (z < depth)
            s = np.full((h, w), _shade(np.array([0.0, 0.0, -1.0]), light))
        depth = np.where(hit, z, depth)
        rgb = np.where(hit[None], col[:, None, None] * s[None], rgb)

    depth = np.clip(depth, *DEPTH_RANGE)
    rgb = np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.float32) / np.float32(255.0)
    return Scene(rgb[None], depth[None, None].astype(np.float32), seed)


# ---------------------------------------------------------------- netpbm


def _read_header(buf: bytes, magic: bytes):
    """Parse ``magic width height maxval`` and return (w, h, maxval, payload offset)."""
    if not buf.startswith(magic):
        raise HeaderError(f"expected magic {magic!r}, got {buf[:2]!r}")
    pos = len(magic)
    fields = []
    while len(fields) < 3:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and buf[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise HeaderError("malformed netpbm header")
        fields.append(int(buf[start:pos]))
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise HeaderError("malformed netpbm header: missing separator before raster")
    w, h, maxval = fields
    if w <= 0 or h <= 0:
        raise HeaderError(f"invalid image size {w}x{h}")
    return w, h, maxval, pos + 1


def save_ppm(path, rgb: np.ndarray):
    """Write (1, 3, h, w) or (3, h, w) RGB in [0, 1] as binary P6 with maxval 255."""
    rgb = np.asarray(rgb)
    if rgb.ndim == 4:
        rgb = rgb[0]
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ShapeError(f"save_ppm: expected 3 channels, got shape {rgb.shape}")
    _, h, w = rgb.shape
    raster = np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(raster.tobytes())


def load_ppm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    w, h, maxval, off = _read_header(buf, b"P6")
    if maxval != 255:
        raise MaxvalError(f"{path}: expected maxval 255, got {maxval}")
    need = w * h * 3
    if len(buf) - off < need:
        raise TruncatedError(f"{path}: raster has {len(buf) - off} bytes, expected {need}")
    raster = np.frombuffer(buf, dtype=np.uint8, count=need, offset=off).reshape(h, w, 3)
    return (raster.transpose(2, 0, 1)[None].astype(np.float32) / np.float32(255.0))


def save_pgm16(path, depth: np.ndarray):
    """Write depth in meters as binary P5, maxval 65535, big-endian millimeters."""
    depth = np.asarray(depth, dtype=np.float64)
    depth = depth.reshape(depth.shape[-2:])
    h, w = depth.shape
    mm = np.clip(np.round(depth * 1000.0), 0, 65535).astype(">u2")
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n65535\n" % (w, h))
        f.write(mm.tobytes())


def load_pgm16(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    w, h, maxval, off = _read_header(buf, b"P5")
    if maxval != 65535:
        raise MaxvalError(f"{path}: expected maxval 65535, got {maxval}")
    need = w * h * 2
    if len(buf) - off < need:
        raise TruncatedError(f"{path}: raster has {len(buf) - off} bytes, expected {need}")
    mm = np.frombuffer(buf, dtype=">u2", count=w * h, offset=off).reshape(1, 1, h, w)
    return (mm.astype(np.float64) / 1000.0).astype(np.float32)


# ---------------------------------------------------------------- datasets


def generate_dataset(out_dir, count: int, h: int, w: int, seed: int, split: str = "train") -> List[dict]:
    """Render ``count`` scenes and write them plus ``manifest.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(count):
        scene = synth_scene(derive_seed(seed, i), h, w)
        rgb_name, depth_name = f"rgb_{i:05d}.ppm", f"depth_{i:05d}.pgm"
        save_ppm(out / rgb_name, scene.rgb)
        save_pgm16(out / depth_name, scene.depth)
        entries.append({"rgb": rgb_name, "depth": depth_name})
    (out / "manifest.json").write_text(json.dumps(entries, indent=1))
    meta = {"split": split, "seed": seed, "count": count, "size": [h, w]}
    (out / "dataset.json").write_text(json.dumps(meta, indent=1))
    return entries


def load_manifest(data_dir) -> List[Tuple[Path, Path]]:
    root = Path(data_dir)
    path = root / "manifest.json"
    try:
        entries = json.loads(path.read_text())
    except FileNotFoundError:
        raise FormatError(f"{path}: manifest not found") from None
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: not valid JSON ({e})") from None
    if not isinstance(entries, list) or not entries:
        raise FormatError(f"{path}: must be a non-empty JSON array")
    pairs = []
    for i, e in enumerate(entries):
        if not isinstance(e, dict) or set(e) != {"rgb", "depth"}:
            raise FormatError(f"{path}[{i}]: entries must be objects with exactly 'rgb' and 'depth'")
        pairs.append((root / e["rgb"], root / e["depth"]))
    return pairs


def load_dataset(data_dir) -> Tuple[np.ndarray, np.ndarray]:
    """All scenes of a directory as stacked (N, 3, h, w) RGB and (N, 1, h, w) depth."""
    rgbs, depths = [], []
    for rgb_path, depth_path in load_manifest(data_dir):
        rgb = load_ppm(rgb_path)
        depth = load_pgm16(depth_path)
        if rgb.shape[2:] != depth.shape[2:]:
            raise FormatError(f"{rgb_path}: size {rgb.shape[2:]} differs from its depth map {depth.shape[2:]}")
        rgbs.append(rgb)
        depths.append(depth)
    return np.concatenate(rgbs), np.concatenate(depths)


def synth_arrays(count: int, h: int, w: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """In-memory equivalent of :func:`generate_dataset` + :func:`load_dataset` (with 1 mm depth quantization)."""
    scenes = [synth_scene(derive_seed(seed, i), h, w) for i in range(count)]
    rgb = np.concatenate([s.rgb for s in scenes])
    depth = np.concatenate([np.round(s.depth.astype(np.float64) * 1000.0) / 1000.0 for s in scenes]).astype(np.float32)
    return rgb, depth
