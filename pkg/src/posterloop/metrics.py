"""Corpus-level layout quality metrics: overlay, alignment, underlay effectiveness.

All four are order-free: permuting the element list never changes a value.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from itertools import combinations
from pathlib import Path
from typing import Mapping, Sequence

from .errors import EmptyCorpus
from .geometry import Layout, area, contains, intersection_area


@dataclass(frozen=True)
class MetricReport:
    ove: float
    ali: float
    und_l: float | None
    und_s: float | None


@dataclass(frozen=True)
class CorpusReport:
    per_layout: dict[str, MetricReport]
    ove: float
    ali: float
    und_l: float | None
    und_s: float | None
    count: int

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "mean": {"ove": self.ove, "ali": self.ali, "und_l": self.und_l, "und_s": self.und_s},
            "layouts": {k: asdict(v) for k, v in self.per_layout.items()},
        }


def pairwise_overlap(boxes) -> float:
    """Sum of pairwise intersections over the sum of areas (overlaps not subtracted).

    Unbounded: n stacked copies of one box give (n - 1) / 2.
    """
    boxes = list(boxes)
    if len(boxes) < 2:
        return 0.0
    total = math.fsum(area(b) for b in boxes)
    if total <= 0:
        return 0.0
    return math.fsum(intersection_area(a, b) for a, b in combinations(boxes, 2)) / total


def overlap_ratio(boxes) -> float:
    """:func:`pairwise_overlap` capped at 1."""
    return min(1.0, pairwise_overlap(boxes))


def overlay(layout: Layout) -> float:
    return overlap_ratio(e.bbox for e in layout.elements if not e.is_underlay)


def alignment(layout: Layout) -> float:
    """Mean over elements of the smallest axis deviation to any other element."""
    axes = [e.bbox.axes() for e in layout.elements]
    n = len(axes)
    if n <= 1:
        return 0.0
    devs = []
    for i in range(n):
        best = math.inf
        ai = axes[i]
        for j in range(n):
            if j == i:
                continue
            aj = axes[j]
            for k in range(6):
                d = abs(ai[k] - aj[k])
                if d < best:
                    best = d
        devs.append(best)
    return math.fsum(devs) / n


def underlay_loose(layout: Layout) -> float | None:
    unders = [e.bbox for e in layout.elements if e.is_underlay]
    if not unders:
        return None
    others = [e.bbox for e in layout.elements if not e.is_underlay]
    scores = []
    for u in unders:
        best = 0.0
        for e in others:
            # containment is exact; the product of clipped edges may not be
            score = 1.0 if contains(u, e) else min(1.0, intersection_area(u, e) / area(e))
            best = max(best, score)
        scores.append(best)
    return math.fsum(scores) / len(scores)


def underlay_strict(layout: Layout) -> float | None:
    unders = [e.bbox for e in layout.elements if e.is_underlay]
    if not unders:
        return None
    others = [e.bbox for e in layout.elements if not e.is_underlay]
    hits = sum(1 for u in unders if any(contains(u, e) for e in others))
    return hits / len(unders)


def evaluate_layout(layout: Layout) -> MetricReport:
    return MetricReport(
        ove=overlay(layout),
        ali=alignment(layout),
        und_l=underlay_loose(layout),
        und_s=underlay_strict(layout),
    )


def _mean(values: list[float]) -> float | None:
    return math.fsum(values) / len(values) if values else None


def evaluate_corpus(layouts: Mapping[str, Layout] | Sequence[Layout]) -> CorpusReport:
    """Score each layout and average. Underlay means skip layouts without underlays.

    A plain sequence gets zero-padded positional ids.
    """
    if not isinstance(layouts, Mapping):
        layouts = list(layouts)
        width = max(4, len(str(len(layouts))))
        layouts = {str(i).zfill(width): lay for i, lay in enumerate(layouts)}
    if not layouts:
        raise EmptyCorpus("no layouts to evaluate")

    per = {lid: evaluate_layout(layouts[lid]) for lid in sorted(layouts)}
    reports = list(per.values())
    return CorpusReport(
        per_layout=per,
        ove=_mean([r.ove for r in reports]),
        ali=_mean([r.ali for r in reports]),
        und_l=_mean([r.und_l for r in reports if r.und_l is not None]),
        und_s=_mean([r.und_s for r in reports if r.und_s is not None]),
        count=len(reports),
    )


CSV_COLUMNS = ("layout_id", "ove", "ali", "und_l", "und_s")


def _fmt(v: float | None) -> str:
    return "" if v is None else repr(float(v))


def write_report(report: CorpusReport, out_dir: str | Path, stem: str = "report") -> tuple[Path, Path]:
    """Write ``<stem>.json`` and ``<stem>.csv``; the CSV ends with a ``mean`` row."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"{stem}.json"
    csv_path = out_dir / f"{stem}.csv"
    json_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for lid, r in report.per_layout.items():
            writer.writerow([lid, _fmt(r.ove), _fmt(r.ali), _fmt(r.und_l), _fmt(r.und_s)])
        writer.writerow(["mean", _fmt(report.ove), _fmt(report.ali), _fmt(report.und_l), _fmt(report.und_s)])
    return json_path, csv_path
