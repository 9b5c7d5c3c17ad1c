"""Command-line interface: convert / build / eval / stats / synth.

Conversions write IOSPC files atomically (temp file + rename) and isolate
per-file failures: the remaining inputs still convert and the exit code is
non-zero iff anything failed. Every randomized subcommand takes --seed;
leaving it out means seed 0, and the chosen seed is printed either way.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import builder as bld
from . import evalmetrics as ev
from .geometry import GeometryError, RigidTransform, mesh_to_pointcloud
from .meshio import MeshIoError, detect_format, parse_mesh
from .pcformat import PcFormatError, write_pointcloud
from .schema import (
    DiseaseSchema,
    SchemaViolation,
    default_schema,
    default_templates,
    load_schema,
    load_templates,
)

DEFAULT_POINTS = 10_000
MESH_SUFFIXES = (".stl", ".obj", ".ply")


def _resolve_seed(args: argparse.Namespace) -> int:
    if args.seed is None:
        print("seed not specified; using seed 0")
        return 0
    return args.seed


def _load_transform(path: str) -> RigidTransform:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    try:
        return RigidTransform(
            np.asarray(payload["rotation"], dtype=np.float64),
            np.asarray(payload["translation"], dtype=np.float64),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"bad transform file {path}: {exc}") from exc


def _atomic_write(path: Path, produce) -> int:
    """Write via a temp file in the target directory, then rename."""
    tmp = path.with_name(f".{path.name}.tmp-{os.getpid()}")
    try:
        with open(tmp, "wb") as fh:
            n = produce(fh)
        os.replace(tmp, path)
        return n
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def _convert_one(job: dict) -> dict:
    """Worker: one mesh file to one IOSPC file. Returns a summary dict."""
    src = Path(job["src"])
    out = Path(job["out"])
    t0 = time.perf_counter()
    try:
        data = src.read_bytes()
        fmt = detect_format(data, str(src))
        strict = job["strict_format"]
        mesh = parse_mesh(
            data,
            fmt,
            path=str(src),
            triangulate=not strict,
            degenerate_policy="reject" if strict else "drop",
        )
        transform = None
        if job["transform_path"]:
            transform = _load_transform(job["transform_path"])
        cloud = mesh_to_pointcloud(
            mesh,
            job["points"],
            job["seed"],
            transform,
            canonicalize=job["registration"] == "pca",
            normalize=job["normalize"],
        )
        n_bytes = _atomic_write(out, lambda fh: write_pointcloud(cloud, fh))
        return {
            "src": str(src),
            "out": str(out),
            "format": fmt,
            "points": cloud.n_points,
            "bytes": n_bytes,
            "ms": (time.perf_counter() - t0) * 1000.0,
            "error": None,
        }
    except (MeshIoError, GeometryError, PcFormatError, OSError, ValueError) as exc:
        return {
            "src": str(src),
            "out": str(out),
            "ms": (time.perf_counter() - t0) * 1000.0,
            "error": f"{type(exc).__name__}: {exc}",
        }


def _collect_inputs(paths: list[str]) -> list[Path]:
    files: list[Path] = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            files.extend(
                q for q in sorted(p.rglob("*")) if q.suffix.lower() in MESH_SUFFIXES
            )
        else:
            files.append(p)
    return files


def cmd_convert(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args)
    inputs = _collect_inputs(args.inputs)
    if not inputs:
        print("no input meshes found", file=sys.stderr)
        return 1
    out_dir = Path(args.out_dir) if args.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    registration = args.registration
    transform_path = None
    if registration not in ("none", "pca"):
        transform_path = registration
    jobs = []
    for src in inputs:
        target_dir = out_dir if out_dir else src.parent
        jobs.append(
            {
                "src": str(src),
                "out": str(target_dir / (src.stem + ".iospc")),
                "points": args.points,
                "seed": seed,
                "normalize": args.normalize,
                "registration": registration,
                "transform_path": transform_path,
                "strict_format": args.strict_format,
            }
        )

    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_convert_one, jobs))
    else:
        results = [_convert_one(job) for job in jobs]

    failures = 0
    for res in results:
        if res["error"]:
            failures += 1
            print(f"FAIL {res['src']}: {res['error']}", file=sys.stderr)
        else:
            print(
                f"ok {res['src']} -> {res['out']} "
                f"({res['points']} pts, {res['bytes']} bytes, {res['ms']:.1f} ms)"
            )
    print(f"converted {len(results) - failures}/{len(results)} file(s), seed {seed}")
    return 1 if failures else 0


def _parse_fractions(text: str) -> tuple[float, float, float]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("--split needs three comma-separated numbers")
    try:
        return tuple(float(p) for p in parts)  # type: ignore[return-value]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _parse_k_override(text: str) -> tuple[str, str, int]:
    # SOURCE:STAGE=K
    try:
        left, k = text.rsplit("=", 1)
        source, stage = left.rsplit(":", 1)
        if stage not in bld.STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        return source, stage, int(k)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(
            f"bad --k-override {text!r} (expected SOURCE:STAGE=K): {exc}"
        ) from exc


def _load_schema_arg(args: argparse.Namespace) -> DiseaseSchema:
    return load_schema(args.schema) if args.schema else default_schema()


def cmd_build(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args)
    schema = _load_schema_arg(args)
    templates = load_templates(args.templates) if args.templates else default_templates()
    cases = bld.load_manifest(args.manifest, schema)
    policy = bld.SplitPolicy(
        fractions=args.split, high_quality_source=args.hq_source
    )
    qpolicy = bld.QuestionPolicy(
        default_k=args.k_default,
        overrides={(s, st): k for s, st, k in args.k_override},
    )
    result = bld.build_dataset(
        cases, schema, templates, policy, qpolicy, args.rationale_fraction, seed
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for stage in bld.STAGES:
        bld.write_samples(result.samples_by_stage[stage], out_dir / f"{stage}.jsonl")
    stats_text = json.dumps(result.stats, indent=2, sort_keys=True) + "\n"
    (out_dir / "stats.json").write_text(stats_text, encoding="utf-8")
    print(bld.format_stats_table(result.stats))
    print(f"wrote {', '.join(s + '.jsonl' for s in bld.STAGES)} and stats.json "
          f"to {out_dir} (seed {seed})")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    schema = _load_schema_arg(args)
    report, audit = ev.evaluate_run(args.predictions, args.gold, schema)
    print(ev.headline_row(report))
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    audit_path = Path(args.audit)
    audit_path.parent.mkdir(parents=True, exist_ok=True)
    with open(audit_path, "w", encoding="utf-8") as fh:
        for row in audit:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    print(f"wrote {report_path} and {audit_path}")
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    schema = _load_schema_arg(args)
    samples = []
    for path in args.datasets:
        samples.extend(bld.read_samples(path))
    cases = bld.load_manifest(args.manifest, schema) if args.manifest else []
    stats = bld.dataset_stats(samples, cases, schema)
    print(bld.format_stats_table(stats))
    if args.json:
        Path(args.json).write_text(
            json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        print(f"wrote {args.json}")
    return 0


def _parse_sources(text: str) -> dict[str, int]:
    out: dict[str, int] = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        name, _, count = part.partition("=")
        if not count:
            raise argparse.ArgumentTypeError(
                f"bad --sources entry {part!r} (expected NAME=COUNT)"
            )
        out[name.strip()] = int(count)
    if not out:
        raise argparse.ArgumentTypeError("--sources is empty")
    return out


def cmd_synth(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args)
    schema = _load_schema_arg(args)
    data = bld.synth_manifest(seed, args.cases, schema, sources=args.sources)
    Path(args.out).write_bytes(data)
    n_lines = data.count(b"\n")
    print(f"wrote {n_lines} case(s) to {args.out} (seed {seed})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ioskit",
        description="Intraoral-scan meshes to point clouds, VQA datasets, and scores.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="mesh files -> IOSPC point clouds")
    p.add_argument("inputs", nargs="+", help="mesh files or directories")
    p.add_argument("--points", type=int, default=DEFAULT_POINTS,
                   help=f"points per cloud (default {DEFAULT_POINTS})")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=None,
                   help="output directory (default: next to each input)")
    p.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=True,
                   help="unit-ball normalization (default on)")
    p.add_argument("--registration", default="pca",
                   help="'pca', 'none', or a JSON rigid-transform file")
    p.add_argument("--strict-format", action="store_true",
                   help="reject quads and degenerate faces instead of fixing them")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("build", help="case manifest -> staged VQA dataset")
    p.add_argument("manifest")
    p.add_argument("--schema", default=None, help="schema JSON (default: packaged)")
    p.add_argument("--templates", default=None,
                   help="question templates JSON (default: packaged)")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--split", type=_parse_fractions, default=(0.8, 0.1, 0.1),
                   help="stage1,stage2,test fractions (default 0.8,0.1,0.1)")
    p.add_argument("--hq-source", default=None,
                   help="source whose high-quality cases are forced into stage2")
    p.add_argument("--k-default", type=int, default=1,
                   help="questions per labeled disease (default 1)")
    p.add_argument("--k-override", type=_parse_k_override, action="append",
                   default=[], metavar="SOURCE:STAGE=K",
                   help="per-source, per-stage question count override")
    p.add_argument("--rationale-fraction", type=float, default=0.5,
                   help="fraction of stage2 samples flagged for rationales")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("eval", help="score predictions against a gold file")
    p.add_argument("predictions", help="JSONL with sample_id / generated_text")
    p.add_argument("gold", help="gold stage JSONL")
    p.add_argument("--schema", default=None)
    p.add_argument("--report", default="eval_report.json")
    p.add_argument("--audit", default="eval_audit.jsonl")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="report statistics for dataset files")
    p.add_argument("datasets", nargs="+", help="stage JSONL files")
    p.add_argument("--manifest", default=None,
                   help="case manifest for per-source accounting")
    p.add_argument("--schema", default=None)
    p.add_argument("--json", default=None, help="also write the report as JSON")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("synth", help="generate a synthetic case manifest")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--schema", default=None)
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--sources", type=_parse_sources, default=None,
                   metavar="NAME=COUNT,...", help="explicit per-source case counts")
    p.add_argument("--out", default="manifest.jsonl")
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (
        MeshIoError,
        GeometryError,
        PcFormatError,
        SchemaViolation,
        bld.BuilderError,
        ev.EvalError,
        OSError,
        ValueError,
    ) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
