"""SGD-with-momentum training of the segmentation network."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from galseg import autodiff as ad
from galseg import seeding
from galseg.autodiff import Param, Tensor
from galseg.net import NetConfig, init_params, net_forward, predict
from galseg.synth import SegSample, apply_augmentation, draw_augmentation

log = logging.getLogger(__name__)

FULL_EPOCHS = {"rgb": 150, "disp": 100, "tdisp": 100}
DESK_EPOCHS = 30


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = DESK_EPOCHS
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 4
    base_channels: int = 16
    with_gal: bool = True
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.lr <= 0 or not 0 <= self.momentum < 1 or self.batch_size < 1:
            raise ValueError(f"invalid training config {self}")


@dataclass
class TrainResult:
    config: NetConfig
    params: dict[str, Param]
    losses: list[float] = field(default_factory=list)   # mean loss per epoch


def loss_and_grad(params: dict[str, Param], cfg: NetConfig, sample: SegSample, scale: float = 1.0) -> float:
    """Forward + backward on one sample; gradients accumulate into ``params``."""
    with ad.Tape() as tape:
        logits = net_forward(Tensor(sample.image), params, cfg)
        loss = ad.softmax_cross_entropy(logits, sample.label)
    tape.backward(loss, np.full(1, scale, dtype=loss.dtype))
    return loss.item()


def train(samples: Sequence[SegSample], tc: TrainConfig) -> TrainResult:
    if not samples:
        raise ValueError("cannot train on an empty sample list")
    cfg = NetConfig(in_channels=samples[0].image.shape[2], base_channels=tc.base_channels,
                    with_gal=tc.with_gal, seed=tc.seed)
    params = init_params(cfg)
    plist = list(params.values())
    result = TrainResult(cfg, params)
    n = len(samples)
    for epoch in range(tc.epochs):
        order = seeding.rng_for(tc.seed, seeding.ORDER, epoch).permutation(n)
        total = 0.0
        for start in range(0, n, tc.batch_size):
            batch = order[start:start + tc.batch_size]
            for j, idx in enumerate(batch):
                s = samples[idx]
                if tc.augment:
                    h, w = s.label.shape
                    rng = seeding.rng_for(tc.seed, seeding.AUGMENT, epoch, start + j)
                    s = apply_augmentation(s, draw_augmentation(rng, h, w))
                total += loss_and_grad(params, cfg, s, 1.0 / len(batch))
            ad.sgdm_step(plist, tc.lr, tc.momentum)
        result.losses.append(total / n)
        log.debug("epoch %d loss %.5f", epoch, result.losses[-1])
    return result


def model_predictor(params: dict[str, Param], cfg: NetConfig) -> Callable[[SegSample], np.ndarray]:
    def run(s: SegSample) -> np.ndarray:
        return predict(net_forward(Tensor(s.image), params, cfg))
    return run


def net_fit(tc: TrainConfig) -> Callable[[Sequence[SegSample], int], Callable[[SegSample], np.ndarray]]:
    """Adapter for :func:`galseg.metrics.kfold_run`: train a fresh model per fold."""
    def fit(train_set: Sequence[SegSample], fold: int):
        res = train(train_set, tc)
        return model_predictor(res.params, res.config)
    return fit


def oracle_fit(train_set, fold):
    """Harness self-test: a predictor that echoes the label."""
    return lambda s: s.label.copy()
