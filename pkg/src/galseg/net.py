"""Desk-scale segmentation network with an optional GAL branch.

Layout::

    x -> conv3x3/2 -> relu -> conv3x3/2 -> relu -> conv3x3 -> relu = F   (H/4 x W/4 x 2B)
    with GAL:  fused = concat(F, gal(F))                                  (3B channels)
    without:   fused = F                                                  (2B channels)
    fused -> 1x1 conv -> relu -> bilinear x4 -> conv3x3 -> logits         (H x W x 2)

Parameters live in an ordered ``dict[str, Param]``; GAL weights use the
``gal.`` prefix. A checkpoint is a directory holding one ``<name>.galt``
file per parameter.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from galseg import autodiff as ad
from galseg import seeding
from galseg.autodiff import Param, Tensor
from galseg.formats import load_galt, save_galt
from galseg.gal import GalParams, gal_forward, gal_shapes, init_gal_params

NUM_CLASSES = 2
DOWNSAMPLE = 4


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class NetConfig:
    in_channels: int = 1
    base_channels: int = 16
    with_gal: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.base_channels < 1 or self.base_channels % 2:
            raise ValueError(f"base channels must be a positive even number, got {self.base_channels}")
        if self.in_channels < 1:
            raise ValueError(f"in_channels must be positive, got {self.in_channels}")


def param_shapes(cfg: NetConfig) -> dict[str, tuple[int, ...]]:
    b, cin = cfg.base_channels, cfg.in_channels
    fused = 3 * b if cfg.with_gal else 2 * b
    shapes = {
        "enc1.w": (3, 3, cin, b), "enc1.b": (b,),
        "enc2.w": (3, 3, b, 2 * b), "enc2.b": (2 * b,),
        "enc3.w": (3, 3, 2 * b, 2 * b), "enc3.b": (2 * b,),
    }
    if cfg.with_gal:
        shapes.update({f"gal.{k}": s for k, s in gal_shapes(2 * b).items()})
    shapes.update({
        "fuse.w": (fused, 2 * b), "fuse.b": (2 * b,),
        "dec.w": (3, 3, 2 * b, NUM_CLASSES), "dec.b": (NUM_CLASSES,),
    })
    return shapes


def init_params(cfg: NetConfig, dtype=np.float32) -> dict[str, Param]:
    """He-uniform weights, zero biases.

    Shared layers draw from the same stream whether or not GAL is present, so
    paired models start from identical encoder and decoder weights. The fusion
    layer differs in fan-in and draws from its own stream.
    """
    shapes = param_shapes(cfg)
    rng = seeding.rng_for(cfg.seed, seeding.INIT)
    params: dict[str, Param] = {}
    for name in ("enc1", "enc2", "enc3", "dec"):
        w = shapes[f"{name}.w"]
        bound = np.sqrt(6.0 / int(np.prod(w[:-1])))
        params[f"{name}.w"] = Param(rng.uniform(-bound, bound, size=w).astype(dtype), name=f"{name}.w")
        params[f"{name}.b"] = Param(np.zeros(shapes[f"{name}.b"], dtype=dtype), name=f"{name}.b")
    if cfg.with_gal:
        gp = init_gal_params(2 * cfg.base_channels, seeding.rng_for(cfg.seed, seeding.GAL_INIT), dtype)
        for k, p in gp.named().items():
            p.name = f"gal.{k}"
            params[p.name] = p
    w = shapes["fuse.w"]
    bound = np.sqrt(6.0 / w[0])
    frng = seeding.rng_for(cfg.seed, seeding.INIT, w[0])
    params["fuse.w"] = Param(frng.uniform(-bound, bound, size=w).astype(dtype), name="fuse.w")
    params["fuse.b"] = Param(np.zeros(shapes["fuse.b"], dtype=dtype), name="fuse.b")
    return {k: params[k] for k in shapes}


def gal_params_of(params: dict[str, Param]) -> GalParams:
    return GalParams(**{k[4:]: p for k, p in params.items() if k.startswith("gal.")})


def _conv(x: Tensor, params: dict[str, Param], name: str, stride: int = 1) -> Tensor:
    return ad.add_bias(ad.conv2d(x, params[f"{name}.w"], stride), params[f"{name}.b"])


def net_forward(x: Tensor, params: dict[str, Param], cfg: NetConfig,
                features: dict | None = None) -> Tensor:
    """Per-pixel two-class logits for an HxWxCin input.

    When ``features`` is a dict it receives the encoder output ``"encoder"``,
    the decoder input ``"fused"`` and, with GAL, ``"gal"``.
    """
    h, w, cin = x.shape
    if h % DOWNSAMPLE or w % DOWNSAMPLE:
        raise ValueError(f"input {h}x{w} is not divisible by {DOWNSAMPLE}")
    if cin != cfg.in_channels:
        raise ValueError(f"input has {cin} channels, network expects {cfg.in_channels}")
    f = ad.relu(_conv(x, params, "enc1", 2))
    f = ad.relu(_conv(f, params, "enc2", 2))
    f = ad.relu(_conv(f, params, "enc3"))
    fused = f
    if cfg.with_gal:
        g = gal_forward(f, gal_params_of(params))
        fused = ad.concat_channels(f, g)
        if features is not None:
            features["gal"] = g
    if features is not None:
        features["encoder"] = f
        features["fused"] = fused
    fh, fw, fc = fused.shape
    z = ad.matmul(ad.reshape(fused, (fh * fw, fc)), params["fuse.w"])
    z = ad.relu(ad.add_bias(z, params["fuse.b"]))
    z = ad.reshape(z, (fh, fw, params["fuse.w"].shape[1]))
    z = ad.bilinear_upsample(z, DOWNSAMPLE)
    return _conv(z, params, "dec")


def predict(logits) -> np.ndarray:
    """Per-pixel argmax over two classes; ties go to background."""
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return (arr[..., 1] > arr[..., 0]).astype(np.uint8)


def count_params(params: dict[str, Param]) -> int:
    return sum(p.data.size for p in params.values())


def activation_map(feature) -> np.ndarray:
    """Channel mean, min-max scaled to 0..255 with round-half-up; flat maps give zeros."""
    arr = feature.data if isinstance(feature, Tensor) else np.asarray(feature)
    m = arr.astype(np.float64).mean(axis=2)
    lo, hi = m.min(), m.max()
    if hi <= lo:
        return np.zeros(m.shape, dtype=np.uint8)
    return np.floor((m - lo) / (hi - lo) * 255 + 0.5).astype(np.uint8)


export_activation_map = activation_map


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(params: dict[str, Param], path: str | os.PathLike) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for name, p in params.items():
        save_galt(p.data, root / f"{name}.galt")


def load_checkpoint(path: str | os.PathLike, in_channels: int | None = None) -> tuple[NetConfig, dict[str, Param]]:
    """Rebuild config and parameters from a checkpoint directory.

    The config is inferred from ``enc1.w`` and the presence of GAL weights;
    every tensor is then checked against the shapes that config implies.
    """
    root = Path(path)
    if not root.is_dir():
        raise CheckpointError(f"{root}: checkpoint directory not found")
    files = {f.name[:-5]: f for f in sorted(root.glob("*.galt"))}
    if "enc1.w" not in files:
        raise CheckpointError(f"{root}: missing tensor enc1.w")
    enc1 = load_galt(files["enc1.w"])
    if enc1.ndim != 4 or enc1.shape[:2] != (3, 3):
        raise CheckpointError(f"{root}: tensor enc1.w has shape {enc1.shape}, expected 3x3xCinxB")
    cfg = NetConfig(in_channels=enc1.shape[2], base_channels=enc1.shape[3],
                    with_gal=any(k.startswith("gal.") for k in files))
    if in_channels is not None and in_channels != cfg.in_channels:
        raise CheckpointError(f"tensor enc1.w expects {cfg.in_channels} input channels, data has {in_channels}")
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name not in files:
            raise CheckpointError(f"{root}: missing tensor {name}")
        arr = load_galt(files[name])
        if arr.shape != shape:
            raise CheckpointError(f"{root}: tensor {name} has shape {arr.shape}, expected {shape}")
        params[name] = Param(arr, name=name)
    extra = set(files) - set(params)
    if extra:
        raise CheckpointError(f"{root}: unexpected tensor {sorted(extra)[0]}")
    return cfg, params
