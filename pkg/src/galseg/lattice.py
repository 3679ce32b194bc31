"""Fixed four-neighbour lattice over an HxW grid.

Vertex ``i = row * W + col``. Every vertex receives exactly four edges, in
slot order up, down, left, right; edge ``k = 4 * i + slot``.

Out-of-bounds neighbours are substituted:

* on a boundary (non-corner) vertex the missing slot points at the vertex itself;
* on a corner vertex each missing slot wraps around its own axis, which lands
  on another corner, e.g. for (0, 0): up -> (H-1, 0), left -> (0, W-1).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

UP, DOWN, LEFT, RIGHT = range(4)
SLOTS = ("up", "down", "left", "right")
_OFFSETS = ((-1, 0), (1, 0), (0, -1), (0, 1))


class LatticeError(ValueError):
    pass


@dataclass(frozen=True)
class LatticeGraph:
    height: int
    width: int
    senders: np.ndarray
    receivers: np.ndarray

    @property
    def num_vertices(self) -> int:
        return self.height * self.width

    @property
    def num_edges(self) -> int:
        return 4 * self.height * self.width

    def is_corner(self, i: int) -> bool:
        r, c = divmod(i, self.width)
        return r in (0, self.height - 1) and c in (0, self.width - 1)

    def is_boundary(self, i: int) -> bool:
        r, c = divmod(i, self.width)
        edge = r in (0, self.height - 1) or c in (0, self.width - 1)
        return edge and not self.is_corner(i)

    def neighbours(self, i: int) -> np.ndarray:
        return self.senders[4 * i:4 * i + 4]


@lru_cache(maxsize=64)
def build_lattice(height: int, width: int) -> LatticeGraph:
    if height < 2 or width < 2:
        raise LatticeError(f"lattice needs H >= 2 and W >= 2, got {height}x{width}")
    rows, cols = np.divmod(np.arange(height * width), width)
    corner = np.isin(rows, (0, height - 1)) & np.isin(cols, (0, width - 1))
    senders = np.empty((height * width, 4), dtype=np.int64)
    for slot, (dr, dc) in enumerate(_OFFSETS):
        nr, nc = rows + dr, cols + dc
        outside = (nr < 0) | (nr >= height) | (nc < 0) | (nc >= width)
        wr, wc = nr % height, nc % width
        sr = np.where(outside & ~corner, rows, np.where(outside, wr, nr))
        sc = np.where(outside & ~corner, cols, np.where(outside, wc, nc))
        senders[:, slot] = sr * width + sc
    senders = senders.reshape(-1)
    receivers = np.repeat(np.arange(height * width, dtype=np.int64), 4)
    senders.setflags(write=False)
    receivers.setflags(write=False)
    return LatticeGraph(height, width, senders, receivers)


def validate(g: LatticeGraph) -> str | None:
    """Return ``None`` when ``g`` is well formed, else a message naming the first bad edge."""
    h, w = g.height, g.width
    n = h * w
    if len(g.senders) != 4 * n or len(g.receivers) != 4 * n:
        return f"edge arrays have lengths {len(g.senders)}/{len(g.receivers)}, expected {4 * n}"
    for k in range(4 * n):
        i, slot = divmod(k, 4)
        if g.receivers[k] != i:
            return f"edge {k}: receiver {g.receivers[k]} != {i}"
        s = int(g.senders[k])
        if not 0 <= s < n:
            return f"edge {k}: sender {s} is not a vertex id"
        r, c = divmod(i, w)
        dr, dc = _OFFSETS[slot]
        nr, nc = r + dr, c + dc
        inside = 0 <= nr < h and 0 <= nc < w
        if inside:
            if s != nr * w + nc:
                return f"edge {k}: sender {s} is not the {SLOTS[slot]} neighbour of {i}"
        elif g.is_corner(i):
            if not g.is_corner(s) or s == i:
                return f"edge {k}: corner {i} wraps to non-corner {s}"
            if s != (nr % h) * w + (nc % w):
                return f"edge {k}: corner {i} {SLOTS[slot]} wrap lands on {s}"
        elif s != i:
            return f"edge {k}: boundary vertex {i} {SLOTS[slot]} slot should be a self-loop, got {s}"
    return None
