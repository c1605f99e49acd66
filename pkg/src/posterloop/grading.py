"""Grade a rendered layout, and turn a rejection into per-element corrective shifts.

Three grader scores, each in [0, 1] and higher-is-better:

* color cohesion: ``exp(-sigma)`` with sigma the mean over RGB channels of the
  population std of the elements' dominant colors;
* spacing: ``1 - sum(pairwise overlaps) / sum(areas)`` over all elements;
* visibility: ``1 - occluded / n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from typing import Sequence

import numpy as np

from .compositor import RasterImage, dominant_color
from .errors import InvalidLayout, UnknownElement
from .geometry import (
    BBox,
    Layout,
    ProtectedRegion,
    clamp_to_canvas,
    contains,
    intersection_area,
    layout_errors,
)
from .metrics import overlap_ratio
from .recommender import CostWeights, SearchBudget, local_search

OCCLUSION_THRESHOLD = 0.5
OCCLUSION_GRID = 256


@dataclass(frozen=True)
class Thresholds:
    t1: float = 0.5
    t2: float = 0.9
    t3: float = 0.8

    def __post_init__(self):
        for t in (self.t1, self.t2, self.t3):
            if not 0.0 <= t <= 1.0:
                raise ValueError("thresholds must lie in [0, 1]")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.t1, self.t2, self.t3)


class Decision(str, Enum):
    ACCEPT = "Accept"
    REJECT = "Reject"


@dataclass(frozen=True)
class GraderReport:
    gamma1: float
    gamma2: float
    gamma3: float
    thresholds: Thresholds
    passes: tuple[bool, bool, bool]
    decision: Decision

    @classmethod
    def from_gammas(cls, gammas: Sequence[float], t: Thresholds = Thresholds()) -> "GraderReport":
        g = tuple(float(v) for v in gammas)
        passes = tuple(gk >= tk for gk, tk in zip(g, t.as_tuple()))
        decision = Decision.ACCEPT if all(passes) else Decision.REJECT
        return cls(g[0], g[1], g[2], t, passes, decision)

    @property
    def gammas(self) -> tuple[float, float, float]:
        return (self.gamma1, self.gamma2, self.gamma3)

    @property
    def min_margin(self) -> float:
        """Smallest ``gamma_k - t_k``; nonnegative exactly when accepted."""
        return min(g - t for g, t in zip(self.gammas, self.thresholds.as_tuple()))

    def to_dict(self) -> dict:
        return {
            "gamma1": self.gamma1,
            "gamma2": self.gamma2,
            "gamma3": self.gamma3,
            "thresholds": list(self.thresholds.as_tuple()),
            "passes": list(self.passes),
            "decision": self.decision.value,
        }


class DeltaReason(str, Enum):
    RESOLVE_OVERLAP = "ResolveOverlap"
    SNAP_ALIGN = "SnapAlign"
    EXIT_PROTECTED_REGION = "ExitProtectedRegion"
    CLAMP_CANVAS = "ClampCanvas"


@dataclass(frozen=True)
class Delta:
    element_id: str
    dx: float
    dy: float
    dw: float
    dh: float
    reason: DeltaReason

    def apply(self, b: BBox) -> BBox:
        return clamp_to_canvas(BBox(b.x + self.dx, b.y + self.dy, b.w + self.dw, b.h + self.dh))

    def to_dict(self) -> dict:
        return {
            "element_id": self.element_id,
            "dx": self.dx,
            "dy": self.dy,
            "dw": self.dw,
            "dh": self.dh,
            "reason": self.reason.value,
        }


@dataclass(frozen=True)
class FeedbackPlan:
    deltas: tuple[Delta, ...] = ()
    uncorrectable: bool = False
    notes: tuple[str, ...] = field(default=())

    def __len__(self) -> int:
        return len(self.deltas)

    def to_dict(self) -> dict:
        return {
            "deltas": [d.to_dict() for d in self.deltas],
            "uncorrectable": self.uncorrectable,
            "notes": list(self.notes),
        }


# ---------------------------------------------------------------------------
# Scores


def gamma1(layout: Layout, composite: RasterImage) -> float:
    if len(layout) <= 1:
        return 1.0
    colors = np.array([dominant_color(composite, e.bbox) for e in layout.elements])
    sigma = float(colors.std(axis=0).mean())
    return math.exp(-sigma)


def gamma2(layout: Layout) -> float:
    if len(layout) == 0:
        return 1.0
    return min(1.0, max(0.0, 1.0 - overlap_ratio(layout.boxes)))


def _cells(lo: float, hi: float, grid: int) -> tuple[int, int]:
    # cell i is covered when its center (i + 0.5) / grid lies in [lo, hi)
    a = math.ceil(lo * grid - 0.5)
    b = math.ceil(hi * grid - 0.5)
    return max(0, min(grid, a)), max(0, min(grid, b))


def _raster(b: BBox, grid: int) -> tuple[int, int, int, int]:
    x0, x1 = _cells(b.x, b.right, grid)
    y0, y1 = _cells(b.y, b.bottom, grid)
    return x0, x1, y0, y1


def occlusion_fractions(layout: Layout, grid: int = OCCLUSION_GRID) -> list[float]:
    """Share of each box covered by the union of later non-underlay boxes.

    Underlays are never counted as occluded: sitting under other elements is
    what they are for.
    """
    rects = [_raster(e.bbox, grid) for e in layout.elements]
    out = []
    for j, el in enumerate(layout.elements):
        x0, x1, y0, y1 = rects[j]
        cells = (x1 - x0) * (y1 - y0)
        if el.is_underlay or cells == 0:
            out.append(0.0)
            continue
        mask = np.zeros((y1 - y0, x1 - x0), dtype=bool)
        for k in range(j + 1, len(layout)):
            if layout.elements[k].is_underlay:
                continue
            a0, a1, b0, b1 = rects[k]
            ix0, ix1 = max(a0, x0), min(a1, x1)
            iy0, iy1 = max(b0, y0), min(b1, y1)
            if ix1 > ix0 and iy1 > iy0:
                mask[iy0 - y0 : iy1 - y0, ix0 - x0 : ix1 - x0] = True
        out.append(int(mask.sum()) / cells)
    return out


def gamma3(layout: Layout, grid: int = OCCLUSION_GRID, theta: float = OCCLUSION_THRESHOLD) -> float:
    n = len(layout)
    if n == 0:
        return 1.0
    occluded = sum(1 for f in occlusion_fractions(layout, grid) if f > theta)
    return 1.0 - occluded / n


def grade(
    layout: Layout,
    composite: RasterImage,
    t: Thresholds = Thresholds(),
    grid: int = OCCLUSION_GRID,
) -> GraderReport:
    return GraderReport.from_gammas((gamma1(layout, composite), gamma2(layout), gamma3(layout, grid)), t)


# ---------------------------------------------------------------------------
# Feedback


def _exit_moves(b: BBox, obstacle: BBox) -> list[BBox]:
    """Boxes reached by pushing ``b`` flush against each side of ``obstacle``:
    left, right, up, down."""
    return [
        BBox(obstacle.x - b.w, b.y, b.w, b.h),
        BBox(obstacle.right, b.y, b.w, b.h),
        BBox(b.x, obstacle.y - b.h, b.w, b.h),
        BBox(b.x, obstacle.bottom, b.w, b.h),
    ]


def _supporting(b: BBox, underlays: Sequence[BBox]) -> bool:
    return any(contains(u, b) for u in underlays)


def _best_exit(
    b: BBox,
    obstacle: BBox,
    omega: BBox | None,
    others: Sequence[BBox] = (),
    underlays: Sequence[BBox] = (),
    crowd: Sequence[BBox] | None = None,
) -> BBox | None:
    """Smallest push of ``b`` clear of ``obstacle`` that stays on the canvas and
    out of ``omega``.

    Among feasible pushes, ones that create no new overlap with ``others``
    and keep ``b`` on an underlay that already held it are preferred. With
    ``crowd``, a push must also strictly cut ``b``'s summed overlap with it.
    """
    supported = _supporting(b, underlays)
    before = None if crowd is None else math.fsum(intersection_area(b, o) for o in crowd)
    best_key, best = None, None
    for order, cand in enumerate(_exit_moves(b, obstacle)):
        cand = clamp_to_canvas(cand)
        if intersection_area(cand, obstacle) > 0:
            continue
        if omega is not None and intersection_area(cand, omega) > 0:
            continue
        if before is not None and math.fsum(intersection_area(cand, o) for o in crowd) >= before:
            continue
        new_overlap = any(
            intersection_area(cand, o) > 0 and intersection_area(b, o) == 0 for o in others
        )
        loses_support = supported and not _supporting(cand, underlays)
        dist = abs(cand.x - b.x) + abs(cand.y - b.y)
        key = (new_overlap, loses_support, dist, order)
        if best_key is None or key < best_key:
            best_key, best = key, cand
    return best


def _onto_underlay(
    b: BBox, underlays: Sequence[BBox], others: Sequence[BBox], omega: BBox | None
) -> BBox | None:
    """Shortest shift that puts a box hanging off an underlay fully onto it.

    Only for boxes that partly overlap an underlay, fit inside it, and are
    not already held by another one. The shifted box must not hit ``omega``
    or any box in ``others`` it was clear of.
    """
    if _supporting(b, underlays):
        return None
    best_key, best = None, None
    for u in underlays:
        if intersection_area(b, u) <= 0 or b.w > u.w or b.h > u.h:
            continue
        x = min(max(b.x, u.x), u.right - b.w)
        y = min(max(b.y, u.y), u.bottom - b.h)
        cand = BBox(x, y, b.w, b.h)
        if omega is not None and intersection_area(cand, omega) > 0:
            continue
        if any(intersection_area(cand, o) > 0 and intersection_area(b, o) == 0 for o in others):
            continue
        key = (abs(x - b.x) + abs(y - b.y), -intersection_area(b, u))
        if best_key is None or key < best_key:
            best_key, best = key, cand
    return best


def _delta(element_id: str, old: BBox, new: BBox, reason: DeltaReason) -> Delta:
    return Delta(element_id, new.x - old.x, new.y - old.y, new.w - old.w, new.h - old.h, reason)


def feedback(
    layout: Layout,
    report: GraderReport,
    omega: ProtectedRegion | None = None,
    grid: int = OCCLUSION_GRID,
) -> FeedbackPlan:
    """Rule cascade producing at most one shift per element.

    1. boxes intruding on the protected region are pushed out of it;
    2. spacing failed: the later box of the worst-overlapping foreground
       pair is pushed clear of the earlier one;
    3. visibility failed: the same push for the most-occluded box and its
       largest occluder;
    4. only color failed: nothing geometric to fix, the plan is flagged;
    5. otherwise, if spacing passed, foreground boxes hanging partly off an
       underlay are slid fully onto it.
    """
    if report.decision is Decision.ACCEPT:
        return FeedbackPlan()
    els = layout.elements
    boxes = layout.boxes
    region = omega.region if omega is not None else None
    underlays = [e.bbox for e in els if e.is_underlay]
    fg = [i for i, e in enumerate(els) if not e.is_underlay]
    deltas: dict[int, Delta] = {}
    notes: list[str] = []

    if region is not None:
        for i, b in enumerate(boxes):
            if intersection_area(b, region) > 0:
                moved = _best_exit(b, region, None)
                if moved is None:
                    notes.append(f"{els[i].id}: cannot leave the protected region")
                    continue
                deltas[i] = _delta(els[i].id, b, moved, DeltaReason.EXIT_PROTECTED_REGION)

    def current(i: int) -> BBox:
        return deltas[i].apply(boxes[i]) if i in deltas else boxes[i]

    def push_later(i: int, j: int) -> bool:
        # j renders after i; move j clear of i
        if j in deltas:
            return False
        others = [current(k) for k in fg if k not in (i, j)]
        crowd = [current(k) for k in range(len(els)) if k != j]
        moved = _best_exit(boxes[j], current(i), region, others, underlays, crowd)
        if moved is None:
            return False
        deltas[j] = _delta(els[j].id, boxes[j], moved, DeltaReason.RESOLVE_OVERLAP)
        return True

    g1_ok, g2_ok, g3_ok = report.passes
    if not g2_ok:
        pairs = sorted(
            ((intersection_area(boxes[i], boxes[j]), i, j) for i, j in combinations(fg, 2)),
            key=lambda t: (-t[0], t[1], t[2]),
        )
        for inter, i, j in pairs:
            if inter <= 0:
                break
            if push_later(i, j):
                break
        else:
            notes.append("spacing: no foreground overlap can be pushed apart")

    if not g3_ok:
        fracs = occlusion_fractions(layout, grid)
        ranked = sorted(range(len(els)), key=lambda k: (-fracs[k], k))
        for j in ranked:
            if fracs[j] <= OCCLUSION_THRESHOLD:
                break
            occluders = [
                (intersection_area(boxes[j], boxes[k]), k)
                for k in range(j + 1, len(els))
                if not els[k].is_underlay and intersection_area(boxes[j], boxes[k]) > 0
            ]
            if not occluders:
                continue
            _, k = max(occluders, key=lambda t: (t[0], -t[1]))
            if push_later(j, k):
                break

    uncorrectable = not g1_ok and g2_ok and g3_ok
    if uncorrectable:
        notes.append("color cohesion failed; not correctable by geometry")
    elif g2_ok:
        # sliding onto an underlay adds overlap, so only once spacing passes
        for i in fg:
            if i in deltas:
                continue
            moved = _onto_underlay(current(i), underlays, [current(k) for k in fg if k != i], region)
            if moved is not None:
                deltas[i] = _delta(els[i].id, boxes[i], moved, DeltaReason.SNAP_ALIGN)

    ordered = tuple(deltas[i] for i in sorted(deltas))
    for d in ordered:
        if d.element_id not in {e.id for e in els}:
            raise UnknownElement(d.element_id)
    return FeedbackPlan(ordered, uncorrectable, tuple(notes))


def refine(
    layout: Layout,
    plan: FeedbackPlan,
    weights: CostWeights = CostWeights(),
    budget: SearchBudget = SearchBudget(),
    omega: ProtectedRegion | None = None,
) -> Layout:
    """Apply the plan's shifts, then polish with local search.

    The protected region is enforced and the polish never lowers spacing
    (gamma2) below what the shifted layout reached.
    """
    errors = layout_errors(layout)
    if errors:
        raise InvalidLayout(errors)
    boxes = list(layout.boxes)
    for d in plan.deltas:
        try:
            i = layout.index_of(d.element_id)
        except KeyError:
            raise UnknownElement(d.element_id) from None
        boxes[i] = d.apply(boxes[i])
    shifted = layout.with_boxes(boxes)
    # the polish may not give back spacing the shifts won
    floor = gamma2(shifted)
    return local_search(
        shifted, weights, budget, omega,
        admissible=lambda bx: gamma2(layout.with_boxes(bx)) >= floor,
    )

