"""Independent reference implementations used to cross-check the library.

Nothing here imports the code under test except the plain data types.
"""

from __future__ import annotations

import functools
import itertools
import math

import numpy as np


@functools.lru_cache(maxsize=64)
def raster(b, grid: int) -> np.ndarray:
    """Boolean grid mask of the cells whose centers fall inside ``b``."""
    centers = (np.arange(grid) + 0.5) / grid
    cols = (centers >= b.x) & (centers < b.x + b.w)
    rows = (centers >= b.y) & (centers < b.y + b.h)
    mask = rows[:, None] & cols[None, :]
    mask.setflags(write=False)
    return mask


def cells(b, grid: int) -> int:
    return int(raster(b, grid).sum())


def common_cells(a, b, grid: int) -> int:
    return int((raster(a, grid) & raster(b, grid)).sum())


def overlap_ratio(boxes, grid: int) -> float:
    boxes = list(boxes)
    if len(boxes) < 2:
        return 0.0
    total = sum(cells(b, grid) for b in boxes)
    inter = sum(common_cells(a, b, grid) for a, b in itertools.combinations(boxes, 2))
    # both sides in cell units; the scale cancels
    return min(1.0, inter / total) if total else 0.0


def overlay(layout, grid: int) -> float:
    return overlap_ratio([e.bbox for e in layout.elements if not e.is_underlay], grid)


def gamma2(layout, grid: int) -> float:
    return min(1.0, max(0.0, 1.0 - overlap_ratio([e.bbox for e in layout.elements], grid)))


def underlay_loose(layout, grid: int):
    unders = [e.bbox for e in layout.elements if e.is_underlay]
    if not unders:
        return None
    others = [e.bbox for e in layout.elements if not e.is_underlay]
    scores = [max([common_cells(u, e, grid) / cells(e, grid) for e in others], default=0.0) for u in unders]
    return math.fsum(scores) / len(scores)


def underlay_strict(layout, grid: int):
    unders = [e.bbox for e in layout.elements if e.is_underlay]
    if not unders:
        return None
    others = [e.bbox for e in layout.elements if not e.is_underlay]
    hits = 0
    for u in unders:
        mu = raster(u, grid)
        if any(not (raster(e, grid) & ~mu).any() for e in others):
            hits += 1
    return hits / len(unders)


def axis_values(b):
    return {
        "left": b.x,
        "center_x": b.x + b.w / 2,
        "right": b.x + b.w,
        "top": b.y,
        "center_y": b.y + b.h / 2,
        "bottom": b.y + b.h,
    }


def alignment(layout) -> float:
    boxes = [e.bbox for e in layout.elements]
    if len(boxes) <= 1:
        return 0.0
    devs = []
    for i, bi in enumerate(boxes):
        vi = axis_values(bi)
        candidates = [
            abs(vi[axis] - axis_values(bj)[axis])
            for j, bj in enumerate(boxes)
            if j != i
            for axis in vi
        ]
        devs.append(min(candidates))
    return math.fsum(devs) / len(devs)


def cosine(a, b) -> float:
    dot = math.fsum(x * y for x, y in zip(a, b))
    na = math.sqrt(math.fsum(x * x for x in a))
    nb = math.sqrt(math.fsum(y * y for y in b))
    return dot / (na * nb)


def brute_topk(corpus: dict, query, k: int):
    """Exhaustive ranking by cosine, ties broken by id."""
    scored = [(cosine(query, v), eid) for eid, v in corpus.items()]
    scored.sort(key=lambda t: (-t[0], t[1]))
    return scored[:k]


def over(dst: int, src: int, alpha8: int) -> int:
    """Straight-alpha over for one 8-bit channel, rounded half up."""
    a = alpha8 / 255
    return math.floor((1 - a) * dst + a * src + 0.5)
