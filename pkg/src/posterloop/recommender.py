"""Layout proposals: copy the best exemplar, then minimize a weighted layout
cost (overlap + alignment + margins) with deterministic greedy local search.

An external proposal service can stand in for the copy step; any failure
there falls back to the local path.
"""

from __future__ import annotations

import json
import logging
import math
import random
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Sequence

from .errors import EmptyRetrieval, InvalidLayout, LayoutParseError, MalformedResponse, TransportError
from .geometry import (
    EPS,
    BBox,
    Element,
    Layout,
    ProtectedRegion,
    clamp_to_canvas,
    intersection_area,
    layout_errors,
    layout_from_dict,
    layout_to_dict,
    underlays_first,
)
from .metrics import alignment, pairwise_overlap
from .retrieval import CorpusEntry

log = logging.getLogger(__name__)

DEFAULT_STEPS = (0.08, 0.04, 0.02, 0.01, 0.005)
# resized boxes stay within these multiples of their starting size
MIN_SCALE, MAX_SCALE = 0.5, 2.0


@dataclass(frozen=True)
class CostWeights:
    alpha_overlap: float = 1.0
    alpha_alignment: float = 0.5
    alpha_margins: float = 0.5
    margin: float = 0.02

    def __post_init__(self):
        alphas = (self.alpha_overlap, self.alpha_alignment, self.alpha_margins)
        if any(a < 0 for a in alphas) or not any(a > 0 for a in alphas):
            raise ValueError("weights must be nonnegative with at least one positive")
        if not 0.0 <= self.margin <= 0.25:
            raise ValueError("margin must lie in [0, 0.25]")


@dataclass(frozen=True)
class CostBreakdown:
    c_overlap: float
    c_alignment: float
    c_margins: float
    total: float


@dataclass(frozen=True)
class SearchBudget:
    max_moves: int = 6000
    rng_seed: int = 0
    step_sizes: tuple[float, ...] = DEFAULT_STEPS

    def __post_init__(self):
        steps = tuple(float(s) for s in self.step_sizes)
        object.__setattr__(self, "step_sizes", steps)
        if self.max_moves < 1:
            raise ValueError("max_moves must be positive")
        if not steps or any(s <= 0 for s in steps):
            raise ValueError("step_sizes must be nonempty and positive")
        if any(a <= b for a, b in zip(steps, steps[1:])):
            raise ValueError("step_sizes must be strictly descending")


# ---------------------------------------------------------------------------
# Cost


def _margin_violation(boxes: Sequence[BBox], fg: Sequence[bool], margin: float) -> float:
    if margin <= 0:
        return 0.0
    terms = []
    for i, j in combinations(range(len(boxes)), 2):
        if not (fg[i] and fg[j]):
            continue
        a, b = boxes[i], boxes[j]
        gx = max(b.x - a.right, a.x - b.right)
        gy = max(b.y - a.bottom, a.y - b.bottom)
        gap = max(gx, gy)
        # overlap (gap <= 0) is the overlap term's business
        if 0 < gap < margin:
            terms.append(margin - gap)
    for b in boxes:
        for dist in (b.x, b.y, 1.0 - b.right, 1.0 - b.bottom):
            if dist < margin:
                terms.append(margin - dist)
    return math.fsum(terms)


def _omega_term(boxes: Sequence[BBox], omega: ProtectedRegion | None) -> float:
    if omega is None:
        return 0.0
    r = omega.region
    return math.fsum(intersection_area(b, r) for b in boxes) / (r.w * r.h)


def cost(layout: Layout, weights: CostWeights = CostWeights(), omega: ProtectedRegion | None = None) -> CostBreakdown:
    errors = layout_errors(layout)
    if errors:
        raise InvalidLayout(errors)
    return _cost(layout, weights, omega)


def _cost(layout: Layout, weights: CostWeights, omega: ProtectedRegion | None) -> CostBreakdown:
    boxes = layout.boxes
    fg = [not e.is_underlay for e in layout.elements]
    c_o = pairwise_overlap([b for b, f in zip(boxes, fg) if f])
    c_a = alignment(layout)
    c_m = _margin_violation(boxes, fg, weights.margin) + _omega_term(boxes, omega)
    total = weights.alpha_overlap * c_o + weights.alpha_alignment * c_a + weights.alpha_margins * c_m
    return CostBreakdown(c_o, c_a, c_m, total)


class _FastCost:
    """Total cost over a mutable box list; same arithmetic as :func:`cost`."""

    def __init__(self, layout: Layout, weights: CostWeights, omega: ProtectedRegion | None):
        self.layout = layout
        self.weights = weights
        self.omega = omega

    def __call__(self, boxes: list[BBox]) -> float:
        return _cost(self.layout.with_boxes(boxes), self.weights, self.omega).total


# ---------------------------------------------------------------------------
# Proposals


def propose_initial(canvas_w: int, canvas_h: int, retrieved: Sequence[CorpusEntry]) -> Layout:
    """Copy the top exemplar's element types and normalized boxes onto the target canvas."""
    if not retrieved:
        raise EmptyRetrieval("no exemplars retrieved")
    return adopt_exemplar(canvas_w, canvas_h, retrieved[0].layout)


def adopt_exemplar(canvas_w: int, canvas_h: int, exemplar: Layout) -> Layout:
    counts: dict[str, int] = {}
    elements = []
    for el in underlays_first(exemplar.elements):
        n = counts.get(el.kind.value, 0)
        counts[el.kind.value] = n + 1
        elements.append(Element(f"{el.kind.value}-{n}", el.kind, clamp_to_canvas(el.bbox)))
    return Layout(canvas_w, canvas_h, tuple(elements))


def _axis_value(b: BBox, axis: int) -> float:
    return b.axes()[axis]


def _snap(b: BBox, axis: int, target: float) -> BBox:
    cur = _axis_value(b, axis)
    if axis < 3:
        return b.translated(dx=target - cur)
    return b.translated(dy=target - cur)


def _moves(n: int) -> list[tuple]:
    out: list[tuple] = []
    for i in range(n):
        for sign in (1.0, -1.0):
            out.append(("tx", i, sign))
            out.append(("ty", i, sign))
            out.append(("rw", i, sign))
            out.append(("rh", i, sign))
        for j in range(n):
            if j != i:
                for axis in range(6):
                    out.append(("snap", i, j, axis))
    return out


def _apply(move: tuple, boxes: list[BBox], step: float, base: list[BBox]) -> BBox | None:
    kind, i = move[0], move[1]
    b = boxes[i]
    if kind == "tx":
        return b.translated(dx=move[2] * step)
    if kind == "ty":
        return b.translated(dy=move[2] * step)
    if kind == "rw":
        w = b.w + move[2] * step
        if not MIN_SCALE * base[i].w - EPS <= w <= MAX_SCALE * base[i].w + EPS:
            return None
        return BBox(b.x, b.y, w, b.h)
    if kind == "rh":
        h = b.h + move[2] * step
        if not MIN_SCALE * base[i].h - EPS <= h <= MAX_SCALE * base[i].h + EPS:
            return None
        return BBox(b.x, b.y, b.w, h)
    j, axis = move[2], move[3]
    target = _axis_value(boxes[j], axis)
    if _axis_value(b, axis) == target:
        return None
    return _snap(b, axis, target)


def local_search(
    l0: Layout,
    weights: CostWeights = CostWeights(),
    budget: SearchBudget = SearchBudget(),
    omega: ProtectedRegion | None = None,
    admissible: Callable[[list[BBox]], bool] | None = None,
) -> Layout:
    """Greedy first-improvement descent over translate / resize / snap moves.

    Step sizes are visited largest first; the search moves to the next step
    once a full pass finds nothing better and stops after the last one, or
    when ``budget.max_moves`` candidate evaluations have been spent. Element
    count, types and ids never change. ``admissible`` can veto an otherwise
    improving box list.
    """
    errors = layout_errors(l0)
    if errors:
        raise InvalidLayout(errors)
    n = len(l0)
    if n == 0:
        return l0
    total = _FastCost(l0, weights, omega)
    rng = random.Random(budget.rng_seed)
    boxes = list(l0.boxes)
    base = list(boxes)
    region = omega.region if omega is not None else None
    current = total(boxes)
    moves = _moves(n)
    evals = 0
    for step in budget.step_sizes:
        while True:
            improved = False
            order = list(moves)
            rng.shuffle(order)
            for mv in order:
                cand = _apply(mv, boxes, step, base)
                if cand is None or not cand.is_valid():
                    continue
                i = mv[1]
                if region is not None and intersection_area(cand, region) > intersection_area(boxes[i], region):
                    continue
                if evals >= budget.max_moves:
                    return l0.with_boxes(boxes)
                evals += 1
                trial = boxes.copy()
                trial[i] = cand
                c = total(trial)
                if c < current - 1e-12 and (admissible is None or admissible(trial)):
                    boxes, current, improved = trial, c, True
            if not improved:
                break
    return l0.with_boxes(boxes)


# ---------------------------------------------------------------------------
# External proposal channel

DEFAULT_INSTRUCTIONS = (
    "Study the example layouts retrieved for this canvas. Decide how many "
    "elements the canvas needs and their types (text, logo, underlay). Return "
    "one JSON layout object with normalized [x, y, w, h] boxes, top-left origin, "
    "keeping elements aligned, separated and inside the canvas."
)


@dataclass(frozen=True)
class ProposalRequest:
    canvas_w: int
    canvas_h: int
    examples: tuple[Layout, ...]
    instructions: str = DEFAULT_INSTRUCTIONS

    def to_dict(self) -> dict:
        return {
            "canvas": {"width": self.canvas_w, "height": self.canvas_h},
            "examples": [layout_to_dict(l) for l in self.examples],
            "instructions": self.instructions,
        }


@dataclass
class Transport:
    endpoint: str
    timeout: float = 30.0
    max_concurrent: int = 4
    _slots: threading.BoundedSemaphore = field(init=False, repr=False)

    def __post_init__(self):
        self._slots = threading.BoundedSemaphore(self.max_concurrent)

    def send(self, payload: dict) -> bytes:
        body = json.dumps(payload).encode("utf-8")
        req = urllib.request.Request(
            self.endpoint,
            data=body,
            headers={"Content-Type": "application/json; charset=utf-8"},
            method="POST",
        )
        with self._slots:
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    return resp.read()
            except TimeoutError as exc:
                raise TransportError(f"timeout after {self.timeout}s") from exc
            except urllib.error.URLError as exc:
                if isinstance(exc.reason, TimeoutError):
                    raise TransportError(f"timeout after {self.timeout}s") from exc
                raise TransportError(str(exc.reason)) from exc
            except OSError as exc:
                raise TransportError(str(exc)) from exc


class CallableTransport:
    """In-process stand-in for the HTTP channel: ``fn(request_dict) -> bytes``."""

    def __init__(self, fn):
        self.fn = fn

    def send(self, payload: dict) -> bytes:
        try:
            return self.fn(payload)
        except (TransportError, MalformedResponse):
            raise
        except Exception as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from exc


@dataclass(frozen=True)
class Proposal:
    layout: Layout
    source: str  # "external" or "local"
    fallback_reason: str | None = None


def parse_response(raw: bytes, canvas_w: int, canvas_h: int) -> Layout:
    """Decode an external layout, clamp its boxes and insist it validates."""
    try:
        data = json.loads(raw.decode("utf-8"))
        layout = layout_from_dict(data)
    except (UnicodeDecodeError, json.JSONDecodeError, LayoutParseError) as exc:
        raise MalformedResponse(f"unparseable layout: {exc}") from None
    for el in layout.elements:
        b = el.bbox
        if not all(math.isfinite(v) for v in (b.x, b.y, b.w, b.h)) or b.w <= 0 or b.h <= 0:
            raise MalformedResponse(f"element {el.id!r} has a degenerate bbox {b.as_list()}")
    clamped = Layout(
        canvas_w,
        canvas_h,
        tuple(el.with_bbox(clamp_to_canvas(el.bbox)) for el in layout.elements),
    )
    errors = layout_errors(clamped)
    if errors:
        raise MalformedResponse("; ".join(str(e) for e in errors))
    return clamped


def local_proposal(
    canvas_w: int,
    canvas_h: int,
    retrieved: Sequence[CorpusEntry],
    weights: CostWeights = CostWeights(),
    budget: SearchBudget = SearchBudget(),
    omega: ProtectedRegion | None = None,
) -> Layout:
    return local_search(propose_initial(canvas_w, canvas_h, retrieved), weights, budget, omega)


def external_propose(
    req: ProposalRequest,
    transport: Transport,
    retrieved: Sequence[CorpusEntry],
    weights: CostWeights = CostWeights(),
    budget: SearchBudget = SearchBudget(),
    omega: ProtectedRegion | None = None,
) -> Proposal:
    """Ask the external service for a layout; never raises for transport or
    content problems, falling back to the local proposal instead."""
    try:
        raw = transport.send(req.to_dict())
        layout = parse_response(raw, req.canvas_w, req.canvas_h)
        return Proposal(layout, "external")
    except (TransportError, MalformedResponse) as exc:
        reason = f"{type(exc).__name__}: {exc}"
        log.warning("external recommender failed, using local search (%s)", reason)
        layout = local_proposal(req.canvas_w, req.canvas_h, retrieved, weights, budget, omega)
        return Proposal(layout, "local", reason)
