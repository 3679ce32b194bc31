"""Graph attention layer over a dense HxWxC feature map.

The layer turns every spatial position into a vertex, builds four incoming
edges per vertex from :mod:`galseg.lattice`, runs one edge update, a mean
aggregation and one vertex update, then multiplies the updated vertex
features by a per-position modulation projected from that position's four
updated edges. Output channels are half the input channels.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from galseg import autodiff as ad
from galseg.autodiff import Param, Tensor
from galseg.lattice import LatticeGraph, build_lattice


@dataclass
class GalParams:
    """Weights of the edge perceptron, vertex perceptron and modulation projection."""

    w_e1: Param
    b_e1: Param
    w_e2: Param
    b_e2: Param
    w_v1: Param
    b_v1: Param
    w_v2: Param
    b_v2: Param
    w_m: Param
    b_m: Param

    @property
    def channels(self) -> int:
        return self.w_e1.shape[1]

    def named(self) -> dict[str, Param]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def params(self) -> list[Param]:
        return list(self.named().values())

    def astype(self, dtype) -> "GalParams":
        return GalParams(**{k: p.astype(dtype) for k, p in self.named().items()})


def gal_shapes(channels: int) -> dict[str, tuple[int, ...]]:
    if channels < 2 or channels % 2:
        raise ValueError(f"GAL needs an even channel count, got {channels}")
    c, co = channels, channels // 2
    return {
        "w_e1": (3 * c, c), "b_e1": (c,), "w_e2": (c, co), "b_e2": (co,),
        "w_v1": (co + c, c), "b_v1": (c,), "w_v2": (c, co), "b_v2": (co,),
        "w_m": (4 * co, co), "b_m": (co,),
    }


def init_gal_params(channels: int, rng: np.random.Generator, dtype=np.float32) -> GalParams:
    """Fan-in scaled uniform weights, zero biases, and a modulation bias of one.

    Starting ``b_m`` at one makes the modulation begin near the identity.
    """
    out = {}
    for name, shape in gal_shapes(channels).items():
        if name.startswith("w"):
            bound = np.sqrt(6.0 / shape[0])
            value = rng.uniform(-bound, bound, size=shape)
        elif name == "b_m":
            value = np.ones(shape)
        else:
            value = np.zeros(shape)
        out[name] = Param(value.astype(dtype), name=name)
    return GalParams(**out)


def zero_gal_params(channels: int, dtype=np.float64) -> GalParams:
    return GalParams(**{k: Param(np.zeros(s, dtype=dtype), name=k) for k, s in gal_shapes(channels).items()})


def tie_modulation(params: GalParams) -> GalParams:
    """Force ``w_m`` to repeat one C'xC' block for all four slots (in place)."""
    co = params.w_m.shape[1]
    params.w_m.data[...] = np.tile(params.w_m.data[:co], (4, 1))
    return params


def _perceptron(x: Tensor, w1: Param, b1: Param, w2: Param, b2: Param) -> Tensor:
    hidden = ad.relu(ad.add_bias(ad.matmul(x, w1), b1))
    return ad.add_bias(ad.matmul(hidden, w2), b2)


def make_vertex_features(t: Tensor) -> Tensor:
    h, w, c = t.shape
    return ad.reshape(t, (h * w, c))


def make_edge_features(v: Tensor, g: LatticeGraph) -> Tensor:
    """Initial edge feature: sender minus receiver."""
    if v.shape[0] != g.num_vertices:
        raise ValueError(f"vertex count {v.shape[0]} does not match a {g.height}x{g.width} lattice")
    return ad.sub(ad.gather_rows(v, g.senders), ad.gather_rows(v, g.receivers))


def edge_update(e0: Tensor, v: Tensor, g: LatticeGraph, p: GalParams) -> Tensor:
    x = ad.concat_channels(e0, ad.gather_rows(v, g.receivers), ad.gather_rows(v, g.senders))
    return _perceptron(x, p.w_e1, p.b_e1, p.w_e2, p.b_e2)


def aggregate_edges(r_e: Tensor, g: LatticeGraph | None = None) -> Tensor:
    return ad.mean_rows(r_e, 4)


def vertex_update(e_bar: Tensor, v: Tensor, p: GalParams) -> Tensor:
    return _perceptron(ad.concat_channels(e_bar, v), p.w_v1, p.b_v1, p.w_v2, p.b_v2)


def modulate_and_reshape(r_v: Tensor, r_e: Tensor, height: int, width: int, p: GalParams) -> Tensor:
    n, co = r_v.shape
    grouped = ad.reshape(r_e, (n, 4 * co))  # rows 4i..4i+3 side by side, slot order
    delta_w = ad.add_bias(ad.matmul(grouped, p.w_m), p.b_m)
    return ad.reshape(ad.elementwise_mul(r_v, delta_w), (height, width, co))


def gal_forward(t: Tensor, p: GalParams) -> Tensor:
    """Refine an HxWxC map into an HxWx(C/2) map."""
    h, w, c = t.shape
    if c % 2:
        raise ValueError(f"GAL needs an even channel count, got {c}")
    if c != p.channels:
        raise ValueError(f"input has {c} channels but GAL parameters expect {p.channels}")
    g = build_lattice(h, w)
    v = make_vertex_features(t)
    e0 = make_edge_features(v, g)
    r_e = edge_update(e0, v, g, p)
    r_v = vertex_update(aggregate_edges(r_e, g), v, p)
    return modulate_and_reshape(r_v, r_e, h, w, p)
