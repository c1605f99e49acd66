"""Render a layout onto its background with nearest-neighbor placement and
straight-alpha "over" blending, back to front in list order."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, MissingAsset
from .geometry import BBox, Element, ElementType, Layout

# placeholder fills for elements without an asset (glyphs are not rendered)
PLACEHOLDER_FILLS = {
    ElementType.UNDERLAY: (224, 224, 224, 255),
    ElementType.TEXT: (48, 48, 48, 255),
    ElementType.LOGO: (96, 96, 96, 255),
}

_HEX = re.compile(r"^#([0-9a-fA-F]{6}|[0-9a-fA-F]{8})$")


def round_half_away(v: float) -> int:
    return int(math.floor(v + 0.5)) if v >= 0 else -int(math.floor(-v + 0.5))


@dataclass(frozen=True, eq=False)
class RasterImage:
    """Straight (non-premultiplied) RGBA8, row-major ``(height, width, 4)``."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 4 or px.dtype != np.uint8:
            raise ValueError(f"expected HxWx4 uint8 pixels, got {px.shape} {px.dtype}")
        px = np.ascontiguousarray(px)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def filled(cls, width: int, height: int, rgba=(255, 255, 255, 255)) -> "RasterImage":
        px = np.empty((height, width, 4), dtype=np.uint8)
        px[:, :] = rgba
        return cls(px)

    @classmethod
    def from_pil(cls, im: Image.Image) -> "RasterImage":
        return cls(np.asarray(im.convert("RGBA"), dtype=np.uint8).copy())

    def to_pil(self) -> Image.Image:
        return Image.fromarray(np.array(self.pixels))

    def __eq__(self, other) -> bool:
        return isinstance(other, RasterImage) and np.array_equal(self.pixels, other.pixels)


def read_png(path: str | Path) -> RasterImage:
    try:
        with Image.open(path) as im:
            im.load()
            return RasterImage.from_pil(im)
    except FileNotFoundError:
        raise
    except (OSError, UnidentifiedImageError) as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from None


def write_png(img: RasterImage, path: str | Path) -> None:
    img.to_pil().save(path, format="PNG")


# ---------------------------------------------------------------------------
# Assets


@dataclass(frozen=True)
class SolidFill:
    rgba: tuple[int, int, int, int]


@dataclass(frozen=True)
class ImageRef:
    path: str


Asset = SolidFill | ImageRef


def parse_asset(ref: str) -> Asset:
    m = _HEX.match(ref)
    if m:
        hx = m.group(1)
        vals = [int(hx[i : i + 2], 16) for i in range(0, len(hx), 2)]
        if len(vals) == 3:
            vals.append(255)
        return SolidFill(tuple(vals))
    return ImageRef(ref)


class AssetResolver:
    """Maps an element to the raster it should draw, caching decoded files.

    Relative image paths resolve against ``base_dir``; elements without an
    asset get a per-type placeholder fill.
    """

    def __init__(self, base_dir: str | Path | None = None, placeholders=PLACEHOLDER_FILLS):
        self.base_dir = Path(base_dir) if base_dir is not None else None
        self.placeholders = dict(placeholders)
        self._cache: dict[Path, RasterImage] = {}

    def resolve(self, element: Element) -> Asset:
        if element.asset is None:
            return SolidFill(self.placeholders[element.kind])
        return parse_asset(element.asset)

    def load(self, element: Element, asset: ImageRef) -> RasterImage:
        path = Path(asset.path)
        if not path.is_absolute() and self.base_dir is not None:
            path = self.base_dir / path
        if path not in self._cache:
            if not path.is_file():
                raise MissingAsset(element.id, asset.path)
            try:
                self._cache[path] = read_png(path)
            except DecodeError as exc:
                raise DecodeError(f"element {element.id!r}: {exc}") from None
        return self._cache[path]


# ---------------------------------------------------------------------------
# Placement and blending


@dataclass(frozen=True)
class Placement:
    x: int
    y: int
    w: int
    h: int
    sx: float
    sy: float


def place(asset_size: tuple[int, int], bbox: BBox, canvas: tuple[int, int]) -> Placement:
    W, H = canvas
    w0, h0 = asset_size
    x = round_half_away(bbox.x * W)
    y = round_half_away(bbox.y * H)
    w = max(1, round_half_away(bbox.w * W))
    h = max(1, round_half_away(bbox.h * H))
    # keep the destination on the canvas
    x = min(max(x, 0), W - 1)
    y = min(max(y, 0), H - 1)
    w = min(w, W - x)
    h = min(h, H - y)
    return Placement(x, y, w, h, w / w0, h / h0)


def resize_nearest(src: RasterImage, width: int, height: int) -> np.ndarray:
    if (src.width, src.height) == (width, height):
        return src.pixels
    cols = np.minimum((np.arange(width) + 0.5) * src.width / width, src.width - 1).astype(np.intp)
    rows = np.minimum((np.arange(height) + 0.5) * src.height / height, src.height - 1).astype(np.intp)
    return src.pixels[rows[:, None], cols[None, :]]


def _blend_region(out: np.ndarray, src: np.ndarray, p: Placement) -> None:
    region = out[p.y : p.y + p.h, p.x : p.x + p.w]
    dst = region.astype(np.float64)
    s = src.astype(np.float64)
    a = s[:, :, 3:4] / 255.0
    rgb = (1.0 - a) * dst[:, :, :3] + a * s[:, :, :3]
    region[:, :, :3] = np.floor(rgb + 0.5).astype(np.uint8)
    region[:, :, 3] = np.maximum(region[:, :, 3], src[:, :, 3])


def blend_over(dst: RasterImage, src: RasterImage, placement: Placement) -> RasterImage:
    """out = (1 - a_src) * dst + a_src * src inside the placement; alpha = max."""
    scaled = resize_nearest(src, placement.w, placement.h)
    out = np.array(dst.pixels)
    _blend_region(out, scaled, placement)
    return RasterImage(out)


def _element_source(element: Element, assets: AssetResolver, dest: tuple[int, int]):
    asset = assets.resolve(element)
    if isinstance(asset, SolidFill):
        return RasterImage.filled(dest[0], dest[1], asset.rgba)
    return assets.load(element, asset)


def composite(canvas_image: RasterImage, layout: Layout, assets: AssetResolver | None = None) -> RasterImage:
    """Fold ``blend_over`` over the elements in list order, starting from the canvas."""
    assets = assets or AssetResolver()
    canvas = (canvas_image.width, canvas_image.height)
    out = np.array(canvas_image.pixels)
    for el in layout.elements:
        p0 = place((1, 1), el.bbox, canvas)
        src = _element_source(el, assets, (p0.w, p0.h))
        p = place((src.width, src.height), el.bbox, canvas)
        _blend_region(out, resize_nearest(src, p.w, p.h), p)
    return RasterImage(out)


def pixel_rect(bbox: BBox, canvas: tuple[int, int]) -> tuple[int, int, int, int]:
    p = place((1, 1), bbox, canvas)
    return p.x, p.y, p.w, p.h


def dominant_color(img: RasterImage, bbox: BBox) -> tuple[float, float, float]:
    """Per-channel mean RGB over the element's pixel rectangle, in [0, 1]."""
    x, y, w, h = pixel_rect(bbox, (img.width, img.height))
    region = img.pixels[y : y + h, x : x + w, :3].astype(np.float64)
    mean = region.reshape(-1, 3).mean(axis=0) / 255.0
    return (float(mean[0]), float(mean[1]), float(mean[2]))

