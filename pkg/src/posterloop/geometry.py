"""Layout domain types and exact rectangle geometry.

Boxes are stored in normalized canvas units with a top-left origin, so the
same layout means the same thing on a 500x700 canvas and a 1000x1400 one.
Pixel conversion only happens in the compositor.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Sequence

from .errors import LayoutParseError

EPS = 1e-9


class ElementType(str, Enum):
    TEXT = "text"
    LOGO = "logo"
    UNDERLAY = "underlay"

    @classmethod
    def parse(cls, value: str) -> "ElementType":
        try:
            return cls(str(value).lower())
        except ValueError:
            raise LayoutParseError(f"unknown element type {value!r}") from None


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    @property
    def right(self) -> float:
        return self.x + self.w

    @property
    def bottom(self) -> float:
        return self.y + self.h

    @property
    def cx(self) -> float:
        return self.x + self.w / 2

    @property
    def cy(self) -> float:
        return self.y + self.h / 2

    def translated(self, dx: float = 0.0, dy: float = 0.0) -> "BBox":
        return BBox(self.x + dx, self.y + dy, self.w, self.h)

    def axes(self) -> tuple[float, float, float, float, float, float]:
        """Left, center-x, right, top, center-y, bottom."""
        return (self.x, self.cx, self.right, self.y, self.cy, self.bottom)

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]

    def is_valid(self) -> bool:
        vals = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            return False
        return (
            self.w > 0
            and self.h > 0
            and self.x >= 0
            and self.y >= 0
            and self.right <= 1 + EPS
            and self.bottom <= 1 + EPS
        )


@dataclass(frozen=True)
class Element:
    id: str
    kind: ElementType
    bbox: BBox
    # "#rrggbb[aa]" solid fill or an image path; only the compositor reads it
    asset: str | None = None

    @property
    def is_underlay(self) -> bool:
        return self.kind is ElementType.UNDERLAY

    def with_bbox(self, bbox: BBox) -> "Element":
        return replace(self, bbox=bbox)


@dataclass(frozen=True)
class Layout:
    canvas_w: int
    canvas_h: int
    elements: tuple[Element, ...] = ()

    def __post_init__(self):
        if not isinstance(self.elements, tuple):
            object.__setattr__(self, "elements", tuple(self.elements))

    def __len__(self) -> int:
        return len(self.elements)

    @property
    def boxes(self) -> list[BBox]:
        return [e.bbox for e in self.elements]

    def index_of(self, element_id: str) -> int:
        for i, e in enumerate(self.elements):
            if e.id == element_id:
                return i
        raise KeyError(element_id)

    def element(self, element_id: str) -> Element:
        return self.elements[self.index_of(element_id)]

    def with_boxes(self, boxes: Sequence[BBox]) -> "Layout":
        if len(boxes) != len(self.elements):
            raise ValueError("box count does not match element count")
        return replace(
            self, elements=tuple(e.with_bbox(b) for e, b in zip(self.elements, boxes))
        )

    def with_canvas(self, width: int, height: int) -> "Layout":
        return replace(self, canvas_w=width, canvas_h=height)


@dataclass(frozen=True)
class ProtectedRegion:
    region: BBox


# ---------------------------------------------------------------------------
# Rectangle operations


def area(b: BBox) -> float:
    return b.w * b.h


def intersection_area(a: BBox, b: BBox) -> float:
    """Overlap area; edges closer than ``EPS`` count as touching, not overlapping."""
    ox = min(a.right, b.right) - max(a.x, b.x)
    oy = min(a.bottom, b.bottom) - max(a.y, b.y)
    if ox <= EPS or oy <= EPS:
        return 0.0
    return ox * oy


def intersects(a: BBox, b: BBox) -> bool:
    return intersection_area(a, b) > 0.0


def contains(outer: BBox, inner: BBox, tol: float = EPS) -> bool:
    """True when ``inner`` lies inside ``outer``; shared edges count as inside."""
    return (
        inner.x >= outer.x - tol
        and inner.y >= outer.y - tol
        and inner.right <= outer.right + tol
        and inner.bottom <= outer.bottom + tol
    )


def _clamp_axis(pos: float, size: float) -> tuple[float, float]:
    if size >= 1.0:
        return 0.0, 1.0
    return min(max(pos, 0.0), 1.0 - size), size


def clamp_to_canvas(b: BBox) -> BBox:
    """Translate ``b`` back onto the unit canvas, shrinking only if it cannot fit."""
    x, w = _clamp_axis(b.x, b.w)
    y, h = _clamp_axis(b.y, b.h)
    return BBox(x, y, w, h)


# ---------------------------------------------------------------------------
# Validation


@dataclass(frozen=True)
class Violation:
    element_id: str | None = None
    warning: bool = field(default=False, init=False)

    @property
    def kind(self) -> str:
        return type(self).__name__

    def __str__(self) -> str:
        if self.element_id is None:
            return self.kind
        return f"{self.kind}({self.element_id!r})"


@dataclass(frozen=True)
class DuplicateId(Violation):
    pass


@dataclass(frozen=True)
class EmptyId(Violation):
    pass


@dataclass(frozen=True)
class OutOfCanvas(Violation):
    pass


@dataclass(frozen=True)
class NonPositiveSize(Violation):
    pass


@dataclass(frozen=True)
class NonFiniteBox(Violation):
    pass


@dataclass(frozen=True)
class NonPositiveCanvas(Violation):
    pass


@dataclass(frozen=True)
class UnderlayOrder(Violation):
    """An underlay listed after a non-underlay; it would render on top."""

    warning: bool = field(default=True, init=False)


def validate_layout(layout: Layout) -> list[Violation]:
    """Return every violated invariant; warnings are included but flagged."""
    out: list[Violation] = []
    if not (isinstance(layout.canvas_w, int) and layout.canvas_w > 0) or not (
        isinstance(layout.canvas_h, int) and layout.canvas_h > 0
    ):
        out.append(NonPositiveCanvas())
    seen: set[str] = set()
    reported: set[str] = set()
    seen_foreground = False
    for el in layout.elements:
        if not el.id:
            out.append(EmptyId(el.id))
        elif el.id in seen and el.id not in reported:
            out.append(DuplicateId(el.id))
            reported.add(el.id)
        seen.add(el.id)

        b = el.bbox
        if not all(math.isfinite(v) for v in (b.x, b.y, b.w, b.h)):
            out.append(NonFiniteBox(el.id))
            continue
        if b.w <= 0 or b.h <= 0:
            out.append(NonPositiveSize(el.id))
        elif b.x < 0 or b.y < 0 or b.right > 1 + EPS or b.bottom > 1 + EPS:
            out.append(OutOfCanvas(el.id))

        if el.is_underlay and seen_foreground:
            out.append(UnderlayOrder(el.id))
        if not el.is_underlay:
            seen_foreground = True
    return out


def layout_errors(layout: Layout) -> list[Violation]:
    return [v for v in validate_layout(layout) if not v.warning]


def is_valid(layout: Layout) -> bool:
    return not layout_errors(layout)


def underlays_first(elements: Iterable[Element]) -> list[Element]:
    elements = list(elements)
    return [e for e in elements if e.is_underlay] + [e for e in elements if not e.is_underlay]


# ---------------------------------------------------------------------------
# Canonical JSON form


def layout_to_dict(layout: Layout) -> dict[str, Any]:
    return {
        "canvas": {"width": layout.canvas_w, "height": layout.canvas_h},
        "elements": [
            {
                "id": e.id,
                "type": e.kind.value,
                "bbox": e.bbox.as_list(),
                "asset": e.asset,
            }
            for e in layout.elements
        ],
    }


def layout_from_dict(data: Any) -> Layout:
    """Parse the canonical layout JSON. Structural problems raise
    :class:`LayoutParseError`; geometric ones are left to ``validate_layout``."""
    if not isinstance(data, dict):
        raise LayoutParseError("layout must be a JSON object")
    try:
        canvas = data["canvas"]
        width, height = canvas["width"], canvas["height"]
        raw_elements = data.get("elements", [])
    except (KeyError, TypeError) as exc:
        raise LayoutParseError(f"missing field: {exc}") from None
    if isinstance(width, bool) or isinstance(height, bool):
        raise LayoutParseError("canvas size must be integers")
    if isinstance(width, float) and width.is_integer():
        width = int(width)
    if isinstance(height, float) and height.is_integer():
        height = int(height)
    if not isinstance(width, int) or not isinstance(height, int):
        raise LayoutParseError("canvas size must be integers")
    if not isinstance(raw_elements, list):
        raise LayoutParseError("elements must be a list")

    elements = []
    for i, raw in enumerate(raw_elements):
        if not isinstance(raw, dict):
            raise LayoutParseError(f"element {i} is not an object")
        bbox = raw.get("bbox")
        if not isinstance(bbox, (list, tuple)) or len(bbox) != 4:
            raise LayoutParseError(f"element {i}: bbox must be [x, y, w, h]")
        try:
            coords = [float(v) for v in bbox]
        except (TypeError, ValueError):
            raise LayoutParseError(f"element {i}: bbox values must be numbers") from None
        if any(isinstance(v, bool) for v in bbox):
            raise LayoutParseError(f"element {i}: bbox values must be numbers")
        asset = raw.get("asset")
        if asset is not None and not isinstance(asset, str):
            raise LayoutParseError(f"element {i}: asset must be a string or null")
        elements.append(
            Element(
                id=str(raw.get("id", f"e{i}")),
                kind=ElementType.parse(raw.get("type", "")),
                bbox=BBox(*coords),
                asset=asset,
            )
        )
    return Layout(width, height, tuple(elements))


def load_layout(path: str | Path) -> Layout:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise LayoutParseError(f"{path}: {exc}") from None
    return layout_from_dict(data)


def dump_layout(layout: Layout, path: str | Path) -> None:
    Path(path).write_text(json.dumps(layout_to_dict(layout), indent=2) + "\n", encoding="utf-8")
