"""Synthetic pothole samples in three modalities, plus training augmentation.

* ``tdisp``: near-constant background with elliptical depressions.
* ``disp``: background that rises linearly from top row to bottom row, with depressions.
* ``rgb``: textured asphalt, darker potholes and unlabelled dark stains.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from galseg import seeding
from galseg.formats import load_image, load_mask, read_manifest

MODALITIES = ("rgb", "disp", "tdisp")
CHANNELS = {"rgb": 3, "disp": 1, "tdisp": 1}
MIN_AXIS = 3.0


@dataclass(frozen=True)
class SegSample:
    image: np.ndarray      # H x W x Cin, float32
    label: np.ndarray      # H x W, uint8 in {0, 1}
    modality: str
    sample_id: str

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[:2] != self.label.shape:
            raise ValueError(f"{self.sample_id}: image {self.image.shape} and label {self.label.shape} disagree")
        if self.label.size and self.label.max() > 1:
            raise ValueError(f"{self.sample_id}: label must be binary")


@dataclass(frozen=True)
class Ellipse:
    cy: float
    cx: float
    ay: float
    ax: float
    theta: float

    def rho2(self, h: int, w: int) -> np.ndarray:
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        dy, dx = yy - self.cy, xx - self.cx
        c, s = math.cos(self.theta), math.sin(self.theta)
        u = c * dx + s * dy
        v = -s * dx + c * dy
        return (u / self.ax) ** 2 + (v / self.ay) ** 2

    def half_extent(self) -> tuple[float, float]:
        c, s = math.cos(self.theta), math.sin(self.theta)
        ex = math.sqrt((self.ax * c) ** 2 + (self.ay * s) ** 2)
        ey = math.sqrt((self.ax * s) ** 2 + (self.ay * c) ** 2)
        return ey, ex


def sample_ellipse(rng: np.random.Generator, h: int, w: int, max_tries: int = 1000) -> Ellipse:
    """Uniform centre and axes; draws that leave the frame are redrawn."""
    max_axis = max(MIN_AXIS, min(h, w) / 5)
    for _ in range(max_tries):
        e = Ellipse(cy=rng.uniform(0, h - 1), cx=rng.uniform(0, w - 1),
                    ay=rng.uniform(MIN_AXIS, max_axis), ax=rng.uniform(MIN_AXIS, max_axis),
                    theta=rng.uniform(0, math.pi))
        ey, ex = e.half_extent()
        if e.cy - ey >= 0 and e.cy + ey <= h - 1 and e.cx - ex >= 0 and e.cx + ex <= w - 1:
            return e
    raise ValueError(f"could not place an ellipse with axes >= {MIN_AXIS} in a {h}x{w} frame")


def _bowl(e: Ellipse, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    r2 = e.rho2(h, w)
    inside = r2 < 1
    # sharp rim then a shallow bowl
    return inside, np.where(inside, 0.4 + 0.6 * (1 - r2), 0.0)


def _smooth_texture(rng: np.random.Generator, h: int, w: int, sigma: float) -> np.ndarray:
    field = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma, mode="wrap")
    return field / (field.std() + 1e-12)


def synth_sample(modality: str, h: int, w: int, rng: np.random.Generator, sample_id: str,
                 noise: float = 0.02, potholes: int | None = None) -> SegSample:
    if modality not in MODALITIES:
        raise ValueError(f"unknown modality {modality!r}")
    n_holes = int(rng.integers(0, 4)) if potholes is None else potholes
    ellipses = [sample_ellipse(rng, h, w) for _ in range(n_holes)]
    label = np.zeros((h, w), dtype=bool)
    relief = np.zeros((h, w))
    for e in ellipses:
        inside, bowl = _bowl(e, h, w)
        label |= inside
        relief = np.maximum(relief, bowl * rng.uniform(0.15, 0.35))

    if modality == "tdisp":
        img = (0.6 - relief)[:, :, None]
    elif modality == "disp":
        ramp = np.linspace(0.25, 0.85, h)[:, None] * np.ones((1, w))
        img = (ramp - 0.6 * relief)[:, :, None]
    else:
        base = 0.45 + 0.07 * _smooth_texture(rng, h, w, 2.0)
        shade = base - 0.6 * relief
        for _ in range(int(rng.integers(1, 3))):
            inside, bowl = _bowl(sample_ellipse(rng, h, w), h, w)
            shade = shade - np.where(inside, rng.uniform(0.12, 0.25), 0.0)
        tint = np.array([1.0, 0.97, 0.92])
        img = shade[:, :, None] * tint[None, None, :]
    # values live in [0, 1], so the dynamic range is 1
    img = img + rng.normal(0.0, noise, size=img.shape)
    return SegSample(img.astype(np.float32), label.astype(np.uint8), modality, sample_id)


def synth_generate(modality: str, n: int, h: int, w: int, seed: int,
                   noise: float = 0.02, potholes: int | None = None) -> list[SegSample]:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if h % 4 or w % 4:
        raise ValueError(f"H and W must be divisible by 4, got {h}x{w}")
    return [synth_sample(modality, h, w, seeding.rng_for(seed, seeding.SYNTH, i),
                         f"{modality}-{i:04d}", noise=noise, potholes=potholes)
            for i in range(n)]


# ---------------------------------------------------------------- augmentation

@dataclass(frozen=True)
class AugParams:
    flip: bool = False
    angle_deg: float = 0.0
    shift_y: float = 0.0   # pixels
    shift_x: float = 0.0


def draw_augmentation(rng: np.random.Generator, h: int, w: int,
                      max_angle: float = 10.0, max_shift: float = 0.05) -> AugParams:
    return AugParams(flip=bool(rng.random() < 0.5),
                     angle_deg=float(rng.uniform(-max_angle, max_angle)),
                     shift_y=float(rng.uniform(-max_shift, max_shift) * h),
                     shift_x=float(rng.uniform(-max_shift, max_shift) * w))


def apply_augmentation(s: SegSample, p: AugParams) -> SegSample:
    """Horizontal flip, then rotation about the centre and translation, zero padded."""
    img, lab = s.image, s.label
    if p.flip:
        img, lab = img[:, ::-1, :], lab[:, ::-1]
    if p.angle_deg or p.shift_y or p.shift_x:
        h, w = lab.shape
        t = math.radians(p.angle_deg)
        # maps output coords to input coords
        inv = np.array([[math.cos(t), math.sin(t)], [-math.sin(t), math.cos(t)]])
        centre = np.array([(h - 1) / 2, (w - 1) / 2])
        offset = centre - inv @ (centre + np.array([p.shift_y, p.shift_x]))
        img = np.stack([ndimage.affine_transform(img[:, :, ch].astype(np.float64), inv, offset,
                                                 order=1, mode="constant", cval=0.0)
                        for ch in range(img.shape[2])], axis=2)
        lab = ndimage.affine_transform(lab, inv, offset, order=0, mode="constant", cval=0)
    return replace(s, image=np.ascontiguousarray(img, dtype=np.float32),
                   label=np.ascontiguousarray(lab, dtype=np.uint8))


def augment(s: SegSample, seed: int) -> SegSample:
    h, w = s.label.shape
    return apply_augmentation(s, draw_augmentation(np.random.default_rng(seed), h, w))


def samples_from_manifest(path) -> list[SegSample]:
    """Load every manifest entry; images may be GALT tensors or P5/P6 rasters."""
    samples = []
    for e in read_manifest(path):
        samples.append(SegSample(load_image(e.image_path), load_mask(e.label_path), e.modality, e.sample_id))
    if not samples:
        raise ValueError(f"{path}: manifest lists no samples")
    shapes = {s.image.shape for s in samples}
    if len(shapes) != 1:
        raise ValueError(f"{path}: samples have mixed shapes {sorted(shapes)}")
    return samples
