"""Seeded synthetic poster corpora: background canvases plus exemplar layouts.

Ground-truth style layouts keep every text/logo inside one large underlay
panel, pairwise disjoint and left-aligned. ``perturb_overlapping`` drags the
foreground elements into each other to make imperfect exemplars.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .compositor import RasterImage, write_png
from .geometry import BBox, Element, ElementType, Layout, clamp_to_canvas, layout_from_dict, layout_to_dict

CANVAS_W, CANVAS_H = 240, 320


def _q(v: float, grid: int = 256) -> float:
    return round(v * grid) / grid


def ground_truth_layout(rng: random.Random, canvas=(CANVAS_W, CANVAS_H), logo_inside: bool = True) -> Layout:
    """One underlay panel holding 2-3 disjoint, left-aligned foreground boxes."""
    ux = _q(rng.uniform(0.04, 0.10))
    uw = _q(rng.uniform(0.80, 0.92 - ux))
    uh = _q(rng.uniform(0.42, 0.52))
    uy = _q(rng.choice([rng.uniform(0.04, 0.08), rng.uniform(0.92 - uh - 0.04, 0.96 - uh)]))
    panel = BBox(ux, uy, uw, uh)

    pad = _q(0.04)
    left = ux + pad
    y = uy + pad
    elements = [Element("underlay-0", ElementType.UNDERLAY, panel)]
    n_text = rng.choice([2, 2, 3])
    for i in range(n_text):
        w = _q(rng.uniform(0.30, 0.45) if i == 0 else rng.uniform(0.16, 0.28))
        h = _q(rng.uniform(0.035, 0.05) if i == 0 else rng.uniform(0.022, 0.032))
        elements.append(Element(f"text-{i}", ElementType.TEXT, BBox(left, y, w, h)))
        y = _q(y + h + rng.uniform(0.03, 0.05))
    logo = BBox(left, y, _q(0.08), _q(0.05))
    if logo_inside and logo.bottom <= uy + uh - pad:
        elements.append(Element("logo-0", ElementType.LOGO, logo))
    return Layout(canvas[0], canvas[1], tuple(elements))


def perturb_overlapping(layout: Layout, rng: random.Random, strength: float = 1.0) -> Layout:
    """Pull every foreground box except the first toward its predecessor so
    consecutive boxes overlap, with a little horizontal jitter."""
    boxes = layout.boxes
    out = list(boxes)
    prev = None
    for i, el in enumerate(layout.elements):
        if el.is_underlay:
            continue
        b = boxes[i]
        if prev is not None:
            p = out[prev]
            # overlap 55-80% of the shorter height
            depth = rng.uniform(0.55, 0.8) * min(p.h, b.h) * strength
            dy = (p.bottom - depth) - b.y
            dx = rng.uniform(-0.03, 0.03) * strength
            b = clamp_to_canvas(b.translated(dx, dy))
        out[i] = b
        prev = i
    return layout.with_boxes(out)


def background(rng: random.Random, size=(CANVAS_W, CANVAS_H)) -> np.ndarray:
    """A two-tone gradient with a few soft rectangles, RGBA8."""
    w, h = size
    c0 = np.array([rng.randint(0, 255) for _ in range(3)], dtype=np.float64)
    c1 = np.array([rng.randint(0, 255) for _ in range(3)], dtype=np.float64)
    t = np.linspace(0.0, 1.0, h)[:, None, None]
    rgb = np.broadcast_to((1 - t) * c0 + t * c1, (h, w, 3)).copy()
    for _ in range(rng.randint(1, 3)):
        x0, y0 = rng.randint(0, w - 20), rng.randint(0, h - 20)
        x1, y1 = rng.randint(x0 + 10, w), rng.randint(y0 + 10, h)
        col = np.array([rng.randint(0, 255) for _ in range(3)], dtype=np.float64)
        rgb[y0:y1, x0:x1] = 0.5 * rgb[y0:y1, x0:x1] + 0.5 * col
    px = np.empty((h, w, 4), dtype=np.uint8)
    px[:, :, :3] = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
    px[:, :, 3] = 255
    return px


def jitter(px: np.ndarray, rng: random.Random, amount: int = 6) -> np.ndarray:
    noise = np.random.default_rng(rng.getrandbits(32)).integers(-amount, amount + 1, size=px.shape[:2] + (3,))
    out = px.copy()
    out[:, :, :3] = np.clip(px[:, :, :3].astype(np.int64) + noise, 0, 255).astype(np.uint8)
    return out


@dataclass
class SyntheticSuite:
    corpus_manifest: Path
    test_manifest: Path
    ground_truth: dict[str, Layout]


def write_suite(
    out_dir: str | Path,
    n_canvases: int = 20,
    seed: int = 0,
    overlapping: bool = True,
    distractors: int = 10,
) -> SyntheticSuite:
    """Write a corpus (exemplars + images) and a matching test-canvas set.

    Test canvas ``c###`` is a noisy copy of exemplar ``ex###``'s background,
    so retrieval ranks that exemplar first. With ``overlapping`` the exemplar
    layouts are perturbed so their foreground boxes overlap.
    """
    rng = random.Random(seed)
    out = Path(out_dir)
    for sub in ("images", "layouts", "canvases"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    corpus, tests, truth = [], [], {}
    for i in range(n_canvases + distractors):
        eid = f"ex{i:03d}"
        bg = background(rng)
        gt = ground_truth_layout(rng)
        exemplar = perturb_overlapping(gt, rng) if overlapping else gt
        write_png(RasterImage(bg), out / "images" / f"{eid}.png")
        (out / "layouts" / f"{eid}.json").write_text(json.dumps(layout_to_dict(exemplar), indent=1) + "\n")
        corpus.append({"id": eid, "image": f"images/{eid}.png", "layout": f"layouts/{eid}.json"})
        if i < n_canvases:
            cid = f"c{i:03d}"
            write_png(RasterImage(jitter(bg, rng)), out / "canvases" / f"{cid}.png")
            tests.append({"id": cid, "image": f"canvases/{cid}.png"})
            truth[cid] = gt
    corpus_path = out / "corpus.json"
    test_path = out / "test.json"
    corpus_path.write_text(json.dumps(corpus, indent=1) + "\n")
    test_path.write_text(json.dumps(tests, indent=1) + "\n")
    return SyntheticSuite(corpus_path, test_path, truth)


def shift_off_panel(layout: Layout, rng: random.Random, amount: float = 0.06) -> Layout:
    """Slide all foreground boxes left, past the panel's inner padding."""
    dx = -amount * rng.uniform(0.8, 1.2)
    return layout.with_boxes(
        [b if e.is_underlay else clamp_to_canvas(b.translated(dx=dx)) for e, b in zip(layout.elements, layout.boxes)]
    )


class OverlappingProposer:
    """Deterministic stand-in for an external layout recommender.

    Returns the first example from the request with its foreground order
    reversed, its foreground boxes dragged into each other and, for a seeded
    share of requests, shifted off the underlay panel. Call it through ``CallableTransport``.
    """

    def __init__(self, seed: int = 0, off_panel_rate: float = 0.5):
        self.seed = seed
        self.off_panel_rate = off_panel_rate

    def __call__(self, request: dict) -> bytes:
        example = request["examples"][0]
        digest = hashlib.sha256(
            (str(self.seed) + json.dumps(example, sort_keys=True)).encode("utf-8")
        ).digest()
        rng = random.Random(int.from_bytes(digest[:8], "big"))
        layout = layout_from_dict(example)
        # z-order slip: the largest text now renders last, on top of the rest
        under = [e for e in layout.elements if e.is_underlay]
        fg = [e for e in layout.elements if not e.is_underlay][::-1]
        layout = Layout(request["canvas"]["width"], request["canvas"]["height"], tuple(under + fg))
        layout = perturb_overlapping(layout, rng)
        if rng.random() < self.off_panel_rate:
            layout = shift_off_panel(layout, rng)
        return json.dumps(layout_to_dict(layout)).encode("utf-8")
