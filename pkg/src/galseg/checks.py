"""Finite-difference verification of every op and of the composed GAL layer.

Each check reduces the op output to a scalar with a fixed random projection
(a plain sum would hide transposed or permuted gradients) and hands the
result to :func:`galseg.autodiff.grad_check` in float64.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from galseg import autodiff as ad
from galseg import gal, net
from galseg.autodiff import Tensor
from galseg.gal import GalParams
from galseg.lattice import build_lattice

TOLERANCE = 1e-4
# central differences step; small enough that relu kinks are almost never straddled
SUITE_EPS = 1e-6


def _project(out: Tensor, proj: np.ndarray) -> Tensor:
    return ad.sum(ad.elementwise_mul(out, Tensor(proj)))


def _checked(fn: Callable, out_shape, rng) -> Callable:
    proj = rng.standard_normal(out_shape)
    return lambda *xs: _project(fn(*xs), proj)


def gradcheck_suite(h: int, w: int, c: int, seed: int = 0, eps: float = SUITE_EPS) -> list[tuple[str, float]]:
    """Run every check on an HxWxC problem and return ``(name, max relative error)`` pairs."""
    if c < 2 or c % 2:
        raise ValueError(f"channel count must be even, got {c}")
    if h < 2 or w < 2:
        raise ValueError(f"lattice needs H, W >= 2, got {h}x{w}")
    rng = np.random.default_rng(seed)
    co = c // 2
    n = h * w
    g = build_lattice(h, w)

    def t(*shape):
        return Tensor(rng.standard_normal(shape))

    def gal_params():
        p = gal.init_gal_params(c, rng, dtype=np.float64)
        for q in p.params():  # nonzero biases exercise their gradients
            q.data += 0.1 * rng.standard_normal(q.shape)
        return p

    def as_gal(ps) -> GalParams:
        return GalParams(*ps)

    checks: list[tuple[str, Callable, list[Tensor], tuple]] = [
        ("matmul", ad.matmul, [t(n, c), t(c, co)], (n, co)),
        ("add", ad.add, [t(h, w, c), t(h, w, c)], (h, w, c)),
        ("sub", ad.sub, [t(h, w, c), t(h, w, c)], (h, w, c)),
        ("elementwise_mul", ad.elementwise_mul, [t(h, w, c), t(h, w, c)], (h, w, c)),
        ("add_bias", ad.add_bias, [t(h, w, c), t(c)], (h, w, c)),
        ("relu", ad.relu, [t(h, w, c)], (h, w, c)),
        ("reshape", lambda x: ad.reshape(x, (n, c)), [t(h, w, c)], (n, c)),
        ("concat_channels", ad.concat_channels, [t(h, w, c), t(h, w, co)], (h, w, c + co)),
        ("gather_rows", lambda x: ad.gather_rows(x, g.senders), [t(n, c)], (4 * n, c)),
        ("mean_rows", lambda x: ad.mean_rows(x, 4), [t(4 * n, c)], (n, c)),
        ("sum", ad.sum, [t(h, w, c)], (1,)),
        ("conv2d[stride=1]", lambda x, k: ad.conv2d(x, k, 1), [t(h, w, c), t(3, 3, c, 2)], (h, w, 2)),
        ("conv2d[stride=2]", lambda x, k: ad.conv2d(x, k, 2),
         [t(h, w, c), t(3, 3, c, 2)], ((h + 1) // 2, (w + 1) // 2, 2)),
        ("bilinear_upsample", lambda x: ad.bilinear_upsample(x, 2), [t(h, w, c)], (2 * h, 2 * w, c)),
    ]
    labels = rng.integers(0, 2, size=(h, w))
    results = [(name, ad.grad_check(_checked(fn, shape, rng), inputs, eps))
               for name, fn, inputs, shape in checks]
    results.append(("softmax_cross_entropy",
                    ad.grad_check(lambda x: ad.softmax_cross_entropy(x, labels), [t(h, w, 2)], eps)))

    # GAL stages, parameters included as checked inputs
    p = gal_params()
    v = t(n, c)
    stages = [
        ("make_edge_features", lambda v_: gal.make_edge_features(v_, g), [v], (4 * n, c)),
        ("edge_update", lambda e0, v_, *ps: gal.edge_update(e0, v_, g, as_gal(ps)),
         [t(4 * n, c), v, *p.params()], (4 * n, co)),
        ("aggregate_edges", lambda r: gal.aggregate_edges(r, g), [t(4 * n, co)], (n, co)),
        ("vertex_update", lambda eb, v_, *ps: gal.vertex_update(eb, v_, as_gal(ps)),
         [t(n, co), v, *p.params()], (n, co)),
        ("modulate_and_reshape", lambda rv, re, *ps: gal.modulate_and_reshape(rv, re, h, w, as_gal(ps)),
         [t(n, co), t(4 * n, co), *p.params()], (h, w, co)),
        ("gal_forward", lambda x, *ps: gal.gal_forward(x, as_gal(ps)),
         [t(h, w, c), *p.params()], (h, w, co)),
    ]
    for name, fn, inputs, shape in stages:
        results.append((name, ad.grad_check(_checked(fn, shape, rng), inputs, eps)))

    results.append(("net_forward[8x8x1]", net_gradcheck(seed, eps)))
    return results


def net_gradcheck(seed: int = 0, eps: float = SUITE_EPS, base_channels: int = 2) -> float:
    """End-to-end check of the with-GAL network on an 8x8x1 input through the loss."""
    rng = np.random.default_rng(seed + 1)
    cfg = net.NetConfig(in_channels=1, base_channels=base_channels, with_gal=True, seed=seed)
    params = net.init_params(cfg, dtype=np.float64)
    for p in params.values():
        p.data += 0.05 * rng.standard_normal(p.shape)
    names = list(params)
    x = Tensor(rng.standard_normal((8, 8, 1)))
    labels = rng.integers(0, 2, size=(8, 8))

    def f(x_, *ps):
        logits = net.net_forward(x_, dict(zip(names, ps)), cfg)
        return ad.softmax_cross_entropy(logits, labels)

    return ad.grad_check(f, [x, *params.values()], eps)
