"""End-to-end loop: retrieve -> propose -> (render -> grade -> feedback -> refine)*.

Also corpus ingestion from manifests and the batch experiment harness that
produces metric tables and ablation rows.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Sequence

from .compositor import AssetResolver, RasterImage, composite, read_png
from .errors import (
    DecodeError,
    EmptyCorpus,
    LayoutParseError,
    ManifestNotFound,
    ManifestParseError,
)
from .geometry import BBox, Layout, ProtectedRegion, layout_errors, layout_from_dict, layout_to_dict, load_layout
from .grading import Decision, FeedbackPlan, GraderReport, Thresholds, feedback, grade, refine
from .metrics import CorpusReport, evaluate_corpus, write_report
from .recommender import (
    DEFAULT_STEPS,
    CostBreakdown,
    CostWeights,
    ProposalRequest,
    SearchBudget,
    Transport,
    adopt_exemplar,
    cost,
    external_propose,
    local_proposal,
    local_search,
)
from .retrieval import (
    DEFAULT_K,
    BaselineEmbedder,
    CorpusEntry,
    EmbeddingProvider,
    Index,
    query_topk,
)

log = logging.getLogger(__name__)


class Mode(str, Enum):
    RECOMMENDER = "recommender"
    GRADER = "grader"
    FULL = "full"


@dataclass(frozen=True)
class ExternalConfig:
    endpoint: str
    timeout: float = 30.0
    max_concurrent: int = 4


@dataclass(frozen=True)
class PipelineConfig:
    k: int = DEFAULT_K
    weights: CostWeights = CostWeights()
    thresholds: Thresholds = Thresholds()
    max_iterations: int = 3
    omega: ProtectedRegion | None = None
    external_recommender: ExternalConfig | None = None
    rng_seed: int = 0
    occlusion_grid: int = 256
    parallelism: int = 4
    max_moves: int = 6000
    step_sizes: tuple[float, ...] = DEFAULT_STEPS
    return_best: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.parallelism < 1 or self.occlusion_grid < 1:
            raise ValueError("parallelism and occlusion_grid must be positive")

    def budget(self, salt: int = 0) -> SearchBudget:
        return SearchBudget(self.max_moves, self.rng_seed + salt, self.step_sizes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["omega"] = None if self.omega is None else self.omega.region.as_list()
        d["step_sizes"] = list(self.step_sizes)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw: dict[str, Any] = dict(data)
        if "weights" in kw:
            kw["weights"] = CostWeights(**kw["weights"])
        if "thresholds" in kw:
            t = kw["thresholds"]
            kw["thresholds"] = Thresholds(*t) if isinstance(t, (list, tuple)) else Thresholds(**t)
        if kw.get("omega") is not None:
            o = kw["omega"]
            box = BBox(*o) if isinstance(o, (list, tuple)) else BBox(**o["region"])
            kw["omega"] = ProtectedRegion(box)
        if kw.get("external_recommender") is not None:
            kw["external_recommender"] = ExternalConfig(**kw["external_recommender"])
        if "step_sizes" in kw:
            kw["step_sizes"] = tuple(kw["step_sizes"])
        return cls(**kw)


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    return PipelineConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# Trace


@dataclass
class IterationRecord:
    iteration: int
    layout: Layout
    cost: CostBreakdown
    report: GraderReport
    plan: FeedbackPlan | None
    wall_time: float

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "iteration": self.iteration,
            "layout": layout_to_dict(self.layout),
            "cost": asdict(self.cost),
            "grader": self.report.to_dict(),
            "feedback": None if self.plan is None else self.plan.to_dict(),
        }
        if include_timing:
            d["wall_time"] = self.wall_time
        return d


@dataclass
class RunTrace:
    canvas_id: str
    mode: Mode = Mode.FULL
    retrieved: list[tuple[str, float]] = field(default_factory=list)
    records: list[IterationRecord] = field(default_factory=list)
    accepted_at: int | None = None
    fallbacks: list[str] = field(default_factory=list)
    proposal_source: str = "local"

    @property
    def status(self) -> str:
        if self.accepted_at is not None:
            return f"AcceptedAtIteration({self.accepted_at})"
        return "ExhaustedIterations"

    def to_dict(self, include_timing: bool = False) -> dict:
        return {
            "canvas_id": self.canvas_id,
            "mode": self.mode.value,
            "status": self.status,
            "accepted_at": self.accepted_at,
            "proposal_source": self.proposal_source,
            "fallbacks": list(self.fallbacks),
            "retrieved": [{"id": i, "score": s} for i, s in self.retrieved],
            "iterations": [r.to_dict(include_timing) for r in self.records],
        }


@dataclass
class PipelineResult:
    layout: Layout
    image: RasterImage
    trace: RunTrace


# ---------------------------------------------------------------------------
# Ingestion


@dataclass
class IngestResult:
    entries: list[CorpusEntry]
    failures: list[tuple[str, str]]


def read_manifest(manifest_path: str | Path) -> list[dict]:
    path = Path(manifest_path)
    if not path.is_file():
        raise ManifestNotFound(str(path))
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestParseError(f"{path}: {exc}") from None
    if not isinstance(data, list) or not all(isinstance(r, dict) and "id" in r for r in data):
        raise ManifestParseError(f"{path}: expected a JSON array of objects with an 'id'")
    return data


def _resolve(base: Path, ref: str | None) -> Path | None:
    if ref is None:
        return None
    p = Path(ref)
    return p if p.is_absolute() else base / p


def load_manifest_layout(base: Path, raw: Any) -> Layout:
    if isinstance(raw, dict):
        return layout_from_dict(raw)
    if isinstance(raw, str):
        path = _resolve(base, raw)
        if not path.is_file():
            raise FileNotFoundError(f"layout file not found: {raw}")
        return load_layout(path)
    raise LayoutParseError("entry has no layout")


def ingest_corpus(
    manifest_path: str | Path,
    embedder: EmbeddingProvider | None = None,
) -> IngestResult:
    """Load every manifest entry that validates; collect the rest as failures."""
    embedder = embedder or BaselineEmbedder()
    base = Path(manifest_path).parent
    entries: list[CorpusEntry] = []
    failures: list[tuple[str, str]] = []
    seen: set[str] = set()
    for raw in read_manifest(manifest_path):
        eid = str(raw["id"])
        try:
            if eid in seen:
                raise ValueError(f"duplicate entry id {eid!r}")
            layout = load_manifest_layout(base, raw.get("layout"))
            errors = layout_errors(layout)
            if errors:
                raise ValueError("invalid layout: " + "; ".join(str(e) for e in errors))
            image_path = _resolve(base, raw.get("image"))
            if image_path is None or not image_path.is_file():
                vectors = getattr(embedder, "vectors", {})
                if eid not in vectors:
                    raise FileNotFoundError(f"image not found: {raw.get('image')}")
            emb = embedder.embed(image_path, eid)
            entries.append(CorpusEntry(eid, str(image_path) if image_path else None, layout, emb))
            seen.add(eid)
        except (OSError, ValueError, LayoutParseError, DecodeError, KeyError) as exc:
            failures.append((eid, f"{type(exc).__name__}: {exc}"))
    return IngestResult(entries, failures)


# ---------------------------------------------------------------------------
# Loop


def _propose(
    canvas: RasterImage,
    retrieved: Sequence[CorpusEntry],
    cfg: PipelineConfig,
    trace: RunTrace,
    transport: Transport | None,
) -> Layout:
    W, H = canvas.width, canvas.height
    if cfg.external_recommender is None and transport is None:
        return local_proposal(W, H, retrieved, cfg.weights, cfg.budget(), cfg.omega)
    if transport is None:
        ext = cfg.external_recommender
        assert ext is not None
        transport = Transport(ext.endpoint, ext.timeout, ext.max_concurrent)
    req = ProposalRequest(W, H, tuple(e.layout for e in retrieved))
    proposal = external_propose(req, transport, retrieved, cfg.weights, cfg.budget(), cfg.omega)
    trace.proposal_source = proposal.source
    if proposal.fallback_reason:
        trace.fallbacks.append(proposal.fallback_reason)
    return proposal.layout


def run_pipeline(
    canvas_image: RasterImage,
    index: Index,
    cfg: PipelineConfig = PipelineConfig(),
    *,
    embedder: EmbeddingProvider | None = None,
    assets: AssetResolver | None = None,
    canvas_id: str = "canvas",
    mode: Mode = Mode.FULL,
    transport: Transport | None = None,
) -> PipelineResult:
    """Generate, grade and refine a layout for one canvas.

    ``mode`` selects the ablation variant: ``RECOMMENDER`` stops after the
    first proposal, ``GRADER`` replaces feedback with re-proposal from the
    next-ranked exemplar, ``FULL`` runs the feedback loop.
    """
    embedder = embedder or BaselineEmbedder()
    assets = assets or AssetResolver()
    mode = Mode(mode)
    trace = RunTrace(canvas_id, mode)

    query = embedder.embed(canvas_image, canvas_id)
    hits = query_topk(index, query, cfg.k)
    trace.retrieved = list(hits.hits)
    retrieved = [index[i] for i in hits.ids]

    layout = _propose(canvas_image, retrieved, cfg, trace, transport)
    iterations = 1 if mode is Mode.RECOMMENDER else cfg.max_iterations
    images: list[RasterImage] = []
    for it in range(1, iterations + 1):
        started = time.perf_counter()
        image = composite(canvas_image, layout, assets)
        report = grade(layout, image, cfg.thresholds, cfg.occlusion_grid)
        breakdown = cost(layout, cfg.weights, cfg.omega)
        accepted = report.decision is Decision.ACCEPT
        last = accepted or it == iterations

        plan = None
        nxt = layout
        if not last:
            if mode is Mode.FULL:
                plan = feedback(layout, report, cfg.omega, cfg.occlusion_grid)
                nxt = refine(layout, plan, cfg.weights, cfg.budget(it), cfg.omega)
            else:
                exemplar = retrieved[it % len(retrieved)].layout
                fresh = adopt_exemplar(canvas_image.width, canvas_image.height, exemplar)
                nxt = local_search(fresh, cfg.weights, cfg.budget(it), cfg.omega)

        trace.records.append(
            IterationRecord(it, layout, breakdown, report, plan, time.perf_counter() - started)
        )
        images.append(image)
        if accepted:
            trace.accepted_at = it
            break
        if last:
            break
        layout = nxt

    pick = len(trace.records) - 1
    if trace.accepted_at is None and (cfg.return_best or mode is Mode.GRADER):
        margins = [r.report.min_margin for r in trace.records]
        pick = max(range(len(margins)), key=lambda i: (margins[i], -i))
    return PipelineResult(trace.records[pick].layout, images[pick], trace)


# ---------------------------------------------------------------------------
# Experiments


@dataclass
class ExperimentResult:
    reports: dict[Mode, CorpusReport]
    traces: dict[Mode, dict[str, RunTrace]]
    layouts: dict[Mode, dict[str, Layout]]


def read_test_manifest(manifest_path: str | Path) -> list[tuple[str, Path]]:
    base = Path(manifest_path).parent
    out = []
    for raw in read_manifest(manifest_path):
        image = raw.get("image")
        if image is None:
            raise ManifestParseError(f"test entry {raw['id']!r} has no image")
        out.append((str(raw["id"]), _resolve(base, image)))
    return out


def run_experiment(
    test_manifest: str | Path | Sequence[tuple[str, Path]],
    index: Index,
    cfg: PipelineConfig = PipelineConfig(),
    *,
    ablation: bool = False,
    embedder: EmbeddingProvider | None = None,
    assets: AssetResolver | None = None,
    transport=None,
) -> ExperimentResult:
    """Run the pipeline over every test canvas; with ``ablation`` run all three modes."""
    if isinstance(test_manifest, (str, Path)):
        tests = read_test_manifest(test_manifest)
    else:
        tests = list(test_manifest)
    if not tests:
        raise EmptyCorpus("test manifest is empty")
    tests.sort(key=lambda t: t[0])
    embedder = embedder or BaselineEmbedder()
    canvases = {tid: read_png(path) for tid, path in tests}
    modes = [Mode.RECOMMENDER, Mode.GRADER, Mode.FULL] if ablation else [Mode.FULL]
    if transport is None and cfg.external_recommender is not None:
        ext = cfg.external_recommender
        transport = Transport(ext.endpoint, ext.timeout, ext.max_concurrent)

    result = ExperimentResult({}, {}, {})
    for mode in modes:
        def one(tid: str) -> PipelineResult:
            return run_pipeline(
                canvases[tid], index, cfg,
                embedder=embedder, assets=assets or AssetResolver(),
                canvas_id=tid, mode=mode, transport=transport,
            )

        ids = [t[0] for t in tests]
        with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
            runs = dict(zip(ids, pool.map(one, ids)))
        result.layouts[mode] = {tid: runs[tid].layout for tid in ids}
        result.traces[mode] = {tid: runs[tid].trace for tid in ids}
        result.reports[mode] = evaluate_corpus(result.layouts[mode])
    return result


def _dump_json(obj: Any, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def write_traces(traces: dict[str, RunTrace], path: Path, include_timing: bool = False) -> None:
    _dump_json({tid: traces[tid].to_dict(include_timing) for tid in sorted(traces)}, path)


def write_experiment(result: ExperimentResult, cfg: PipelineConfig, out_dir: str | Path) -> Path:
    """Primary outputs (full mode) at the top level; one subdirectory per
    ablation mode plus an ``ablation.csv`` summary when more than one mode ran."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    main = Mode.FULL if Mode.FULL in result.reports else next(iter(result.reports))
    write_report(result.reports[main], out)
    write_traces(result.traces[main], out / "trace.json")
    _dump_json(cfg.to_dict(), out / "config.json")
    timings = {
        mode.value: {
            tid: [r.wall_time for r in tr.records] for tid, tr in sorted(result.traces[mode].items())
        }
        for mode in result.traces
    }
    _dump_json(timings, out / "timings.json")
    if len(result.reports) > 1:
        with open(out / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["configuration", "ove", "ali", "und_l", "und_s", "accepted"])
            for mode, rep in result.reports.items():
                accepted = sum(1 for t in result.traces[mode].values() if t.accepted_at is not None)
                w.writerow([mode.value, repr(rep.ove), repr(rep.ali), repr(rep.und_l), repr(rep.und_s), accepted])
        for mode, rep in result.reports.items():
            sub = out / mode.value
            sub.mkdir(exist_ok=True)
            write_report(rep, sub)
            write_traces(result.traces[mode], sub / "trace.json")
    return out


def with_overrides(cfg: PipelineConfig, **overrides) -> PipelineConfig:
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
