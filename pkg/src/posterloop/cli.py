"""Command-line entry point: ``posterloop <command> ...``.

Exit status is 0 on success, 1 on a fatal error and 2 when an ingest step
loaded some entries but rejected others.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .compositor import AssetResolver, composite, read_png, write_png
from .errors import PosterloopError
from .geometry import BBox, ProtectedRegion, dump_layout, layout_errors, load_layout
from .grading import Thresholds
from .metrics import evaluate_corpus, write_report
from .pipeline import (
    ExternalConfig,
    Mode,
    PipelineConfig,
    ingest_corpus,
    load_config,
    load_manifest_layout,
    read_manifest,
    run_experiment,
    run_pipeline,
    write_experiment,
    write_traces,
)
from .recommender import CallableTransport
from .retrieval import BaselineEmbedder, PrecomputedEmbedder, build_index, load_index, save_index

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="pipeline config JSON")
    g = p.add_argument_group("config overrides")
    g.add_argument("--k", type=int)
    g.add_argument("--weights", type=float, nargs=3, metavar=("A_OVERLAP", "A_ALIGN", "A_MARGIN"))
    g.add_argument("--margin", type=float)
    g.add_argument("--thresholds", type=float, nargs=3, metavar=("T1", "T2", "T3"))
    g.add_argument("--max-iterations", type=int)
    g.add_argument("--omega", type=float, nargs=4, metavar=("X", "Y", "W", "H"))
    g.add_argument("--endpoint", help="external recommender URL")
    g.add_argument("--timeout", type=float)
    g.add_argument("--max-concurrent", type=int)
    g.add_argument("--rng-seed", type=int)
    g.add_argument("--occlusion-grid", type=int)
    g.add_argument("--parallelism", type=int)
    g.add_argument("--max-moves", type=int)
    g.add_argument("--step-sizes", type=float, nargs="+")
    g.add_argument("--return-best", action="store_true", default=None)
    g.add_argument(
        "--synthetic-proposals", type=int, metavar="SEED",
        help="use the seeded overlapping stand-in instead of an external recommender",
    )


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    kw = {
        "k": args.k,
        "max_iterations": args.max_iterations,
        "rng_seed": args.rng_seed,
        "occlusion_grid": args.occlusion_grid,
        "parallelism": args.parallelism,
        "max_moves": args.max_moves,
        "return_best": args.return_best,
    }
    if args.step_sizes:
        kw["step_sizes"] = tuple(args.step_sizes)
    if args.weights or args.margin is not None:
        w = cfg.weights
        if args.weights:
            w = replace(w, alpha_overlap=args.weights[0], alpha_alignment=args.weights[1], alpha_margins=args.weights[2])
        if args.margin is not None:
            w = replace(w, margin=args.margin)
        kw["weights"] = w
    if args.thresholds:
        kw["thresholds"] = Thresholds(*args.thresholds)
    if args.omega:
        kw["omega"] = ProtectedRegion(BBox(*args.omega))
    ext = cfg.external_recommender
    if args.endpoint:
        ext = ExternalConfig(args.endpoint)
    if ext is not None:
        if args.timeout is not None:
            ext = replace(ext, timeout=args.timeout)
        if args.max_concurrent is not None:
            ext = replace(ext, max_concurrent=args.max_concurrent)
        kw["external_recommender"] = ext
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})


def _transport(args):
    if args.synthetic_proposals is None:
        return None
    from .synthetic import OverlappingProposer

    return CallableTransport(OverlappingProposer(args.synthetic_proposals))


def _embedder(path: str | None):
    if path is None:
        return BaselineEmbedder()
    return PrecomputedEmbedder.from_file(path, fallback=BaselineEmbedder())


def _report_failures(failures) -> None:
    for eid, reason in failures:
        print(f"rejected {eid}: {reason}", file=sys.stderr)


# ---------------------------------------------------------------------------


def cmd_index_build(args) -> int:
    result = ingest_corpus(args.corpus, _embedder(args.embeddings))
    _report_failures(result.failures)
    if not result.entries:
        print("no corpus entries could be loaded", file=sys.stderr)
        return EXIT_FATAL
    emb = save_index(build_index(result.entries), args.out)
    print(f"indexed {len(result.entries)} entries -> {args.out} (+ {emb.name})")
    return EXIT_PARTIAL if result.failures else EXIT_OK


def cmd_generate(args) -> int:
    cfg = _config(args)
    index = load_index(args.index)
    canvas = read_png(args.canvas)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = run_pipeline(
        canvas, index, cfg,
        embedder=_embedder(args.embeddings),
        assets=AssetResolver(args.assets),
        canvas_id=Path(args.canvas).stem,
        mode=Mode(args.mode),
        transport=_transport(args),
    )
    dump_layout(res.layout, out / "layout.json")
    write_png(res.image, out / "composite.png")
    write_traces({res.trace.canvas_id: res.trace}, out / "trace.json")
    print(f"{res.trace.canvas_id}: {res.trace.status}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    base = Path(args.layouts).parent
    layouts, failures = {}, []
    for raw in read_manifest(args.layouts):
        eid = str(raw["id"])
        try:
            layout = load_manifest_layout(base, raw.get("layout"))
            errors = layout_errors(layout)
            if errors:
                raise ValueError("invalid layout: " + "; ".join(str(e) for e in errors))
            layouts[eid] = layout
        except (OSError, ValueError, PosterloopError) as exc:
            failures.append((eid, f"{type(exc).__name__}: {exc}"))
    _report_failures(failures)
    if not layouts:
        print("no layouts could be loaded", file=sys.stderr)
        return EXIT_FATAL
    report = evaluate_corpus(layouts)
    write_report(report, args.out)
    print(f"ove={report.ove!r} ali={report.ali!r} und_l={report.und_l!r} und_s={report.und_s!r}")
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_composite(args) -> int:
    layout = load_layout(args.layout)
    errors = layout_errors(layout)
    if errors:
        print("invalid layout: " + "; ".join(str(e) for e in errors), file=sys.stderr)
        return EXIT_FATAL
    canvas = read_png(args.canvas)
    assets = AssetResolver(args.assets or Path(args.layout).parent)
    write_png(composite(canvas, layout, assets), args.out)
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _config(args)
    result = run_experiment(
        args.test, load_index(args.index), cfg,
        ablation=args.ablation,
        embedder=_embedder(args.embeddings),
        assets=AssetResolver(args.assets),
        transport=_transport(args),
    )
    write_experiment(result, cfg, args.out)
    for mode, rep in result.reports.items():
        accepted = sum(1 for t in result.traces[mode].values() if t.accepted_at is not None)
        print(
            f"{mode.value:12s} ove={rep.ove:.5f} ali={rep.ali:.5f} "
            f"und_l={rep.und_l if rep.und_l is None else round(rep.und_l, 4)} "
            f"und_s={rep.und_s if rep.und_s is None else round(rep.und_s, 4)} "
            f"accepted={accepted}/{rep.count}"
        )
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synthetic import write_suite

    suite = write_suite(args.out, args.canvases, seed=args.seed, overlapping=args.overlapping)
    print(f"corpus: {suite.corpus_manifest}\ntest:   {suite.test_manifest}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="posterloop", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    index = sub.add_parser("index", help="retrieval index operations")
    isub = index.add_subparsers(dest="index_command", required=True)
    build = isub.add_parser("build", help="ingest a corpus manifest into an index file")
    build.add_argument("--corpus", required=True)
    build.add_argument("--out", required=True)
    build.add_argument("--embeddings", help="precomputed embedding file (id<TAB>v1,v2,...)")
    build.set_defaults(func=cmd_index_build)

    gen = sub.add_parser("generate", help="generate a layout for one canvas")
    gen.add_argument("--canvas", required=True)
    gen.add_argument("--index", required=True)
    gen.add_argument("--out-dir", required=True)
    gen.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.FULL.value)
    gen.add_argument("--embeddings")
    gen.add_argument("--assets", help="directory that relative asset paths resolve against")
    _add_config_flags(gen)
    gen.set_defaults(func=cmd_generate)

    ev = sub.add_parser("evaluate", help="score a manifest of layouts")
    ev.add_argument("--layouts", required=True)
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_evaluate)

    comp = sub.add_parser("composite", help="render a layout onto a canvas")
    comp.add_argument("--layout", required=True)
    comp.add_argument("--canvas", required=True)
    comp.add_argument("--out", required=True)
    comp.add_argument("--assets")
    comp.set_defaults(func=cmd_composite)

    exp = sub.add_parser("experiment", help="run the pipeline over a test manifest")
    exp.add_argument("--test", required=True)
    exp.add_argument("--index", required=True)
    exp.add_argument("--out", required=True)
    exp.add_argument("--ablation", action="store_true")
    exp.add_argument("--embeddings")
    exp.add_argument("--assets")
    _add_config_flags(exp)
    exp.set_defaults(func=cmd_experiment)

    syn = sub.add_parser("synth", help="write a seeded synthetic corpus and test set")
    syn.add_argument("--out", required=True)
    syn.add_argument("--canvases", type=int, default=20)
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--overlapping", action="store_true", help="perturb exemplars so they overlap")
    syn.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (PosterloopError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
