"""Single entry point: generate, filter, train, eval, stats, serve, export.

Every command validates its config before any side effect, writes its outputs
only under the declared output path, and emits a run manifest sufficient to
re-run it identically. Exit codes: 0 ok, 1 validation/runtime error, 2 usage.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .analysis import (
    NoScoredSamplesError,
    mask_delta_table,
    score_histograms,
    uniqueness_report,
)
from .backends import BackendError, HttpAugmenter, MockMatcher, mock_backends
from .config import AppConfig, ConfigError, load_config
from .core import STATUS_ACCEPTED, STATUS_PASSED, ValidationError
from .evaluation import evaluate_testset, load_embeddings_file, load_eval_groups
from .filtering import filter_manifest
from .generation import run_generation
from .manifest import (
    ManifestError,
    MaskFormatError,
    group_samples,
    load_image,
    load_manifest,
    load_pairs,
    rebase_sample_paths,
    resolve_path,
    save_manifest,
)
from .review import DecisionLog, export_curated, serve
from .training import LinearDualEncoder, MixedBatchSampler, finetune


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _run_manifest_path(target) -> Path:
    target = Path(target)
    if target.suffix:  # file target
        return target.parent / (target.name + ".run-manifest.json")
    return target / "run-manifest.json"


def _write_run_manifest(target, command: str, config: AppConfig, seeds: dict,
                        inputs: dict, outputs: dict, counters: dict,
                        started_at: str) -> None:
    payload = {
        "command": command,
        "config": config.snapshot(),
        "seeds": seeds,
        "inputs": inputs,
        "outputs": outputs,
        "counters": counters,
        "tool_version": __version__,
        "started_at": started_at,
        "finished_at": _utc_now(),
    }
    _write_json(_run_manifest_path(target), payload)


def _build_backends(config: AppConfig, mode: str, dim: int, seed: int):
    backends = mock_backends(dim=dim, seed=seed)
    if mode == "mock":
        return backends
    for name, spec in config.backends.items():
        kind = spec.get("kind", "mock") if isinstance(spec, dict) else spec
        if kind == "mock":
            continue
        if name == "augmenter" and kind == "http":
            backends.augmenter = HttpAugmenter(
                endpoint=spec["endpoint"],
                max_tokens=int(spec.get("max_tokens", 256)),
                seed=seed,
                timeout=float(spec.get("timeout", 30.0)),
                retries=int(spec.get("retries", 3)),
                backoff=float(spec.get("backoff", 0.5)),
                max_in_flight=int(spec.get("max_in_flight", 4)),
            )
            continue
        raise ConfigError(f"[backends].{name}",
                          f"no adapter of kind {kind!r}; mocks cover this backend")
    return backends


# ---------------------------------------------------------------------------
# commands

def _cmd_generate(args) -> int:
    started = _utc_now()
    config = load_config(args.config,
                         overrides={"generation": {"seed": args.seed}})
    pairs = load_pairs(args.input)
    backends = _build_backends(config, args.backend,
                               dim=config.train.embedding_dim,
                               seed=config.generation.seed)
    out_dir = Path(args.out)
    jobs = args.jobs or os.cpu_count()
    result = run_generation(pairs, config.generation, backends, out_dir,
                            pairs_root=Path(args.input).parent, jobs=jobs)
    manifest_path = out_dir / "manifest.jsonl"
    save_manifest(result.samples, manifest_path)
    _write_json(out_dir / "run-report.json", result.to_report())
    _write_run_manifest(
        out_dir, "generate", config,
        seeds={"generation": config.generation.seed},
        inputs={"pairs": str(args.input)},
        outputs={"manifest": str(manifest_path), "out_dir": str(out_dir)},
        counters=result.counters, started_at=started)
    print(f"generated {result.counters['samples_generated']} samples in "
          f"{result.counters['groups_generated']} groups -> {manifest_path}")
    return 0


def _cmd_filter(args) -> int:
    started = _utc_now()
    config = load_config(args.config)
    samples = load_manifest(args.input)
    groups = group_samples(samples)
    matcher = MockMatcher(dim=config.train.embedding_dim,
                          seed=config.generation.seed)
    filtered, report = filter_manifest(groups, config.filter, matcher,
                                       manifest_path=args.input)
    flat = [s for g in filtered for s in g.samples]
    out_path = Path(args.out)
    flat = rebase_sample_paths(flat, args.input, out_path)
    save_manifest(flat, out_path)
    try:
        report["histograms"] = score_histograms(flat).as_dict()
    except NoScoredSamplesError:
        report["histograms"] = None
    report_path = Path(args.report) if args.report else \
        out_path.parent / "filter-report.json"
    _write_json(report_path, report)
    _write_run_manifest(
        out_path, "filter", config, seeds={},
        inputs={"manifest": str(args.input)},
        outputs={"manifest": str(out_path), "report": str(report_path)},
        counters={"samples": report["samples"], "passed": report["passed"],
                  "rejected": report["rejected"]},
        started_at=started)
    print(f"filtered {report['samples']} samples: {report['passed']} passed, "
          f"{report['rejected']} rejected -> {out_path}")
    return 0


def _cmd_train(args) -> int:
    started = _utc_now()
    config = load_config(args.config)
    train = config.train
    generated = [s for s in load_manifest(args.generated)
                 if s.status in (STATUS_PASSED, STATUS_ACCEPTED)]
    real = load_pairs(args.real)
    if not generated and train.mix_ratio > 0:
        raise ValidationError("generated",
                              "no passed/accepted samples in the generated manifest")
    gen_pool = [(s.caption, load_image(resolve_path(args.generated, s.image.path)))
                for s in generated]
    real_pool = [(p.caption, load_image(resolve_path(args.real, p.image.path)))
                 for p in real]
    sampler = MixedBatchSampler(gen_pool, real_pool, train.batch_size,
                                train.mix_ratio, seed=args.seed)
    encoder = LinearDualEncoder(feature_dim=train.embedding_dim,
                                embedding_dim=train.embedding_dim,
                                seed=args.seed, init_tau=train.temperature)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = finetune(encoder, sampler, train, out_dir=out_dir)
    curve_path = out_dir / "loss-curve.jsonl"
    with open(curve_path, "w", encoding="utf-8") as fh:
        for record in result.curve:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    _write_run_manifest(
        out_dir, "train", config,
        seeds={"train": args.seed},
        inputs={"generated": str(args.generated), "real": str(args.real)},
        outputs={"checkpoints": result.checkpoints, "curve": str(curve_path),
                 "optimizer": "adamw-decoupled"},
        counters={"steps": len(result.curve),
                  "batches_per_epoch": sampler.batches_per_epoch},
        started_at=started)
    if result.aborted:
        print(f"error: training diverged ({result.abort_reason}); last good "
              f"checkpoint kept", file=sys.stderr)
        return 1
    final = f"{result.final_loss:.6f}" if result.final_loss is not None else "n/a"
    print(f"trained {len(result.curve)} steps, final loss {final}, "
          f"tau {encoder.tau:.4f} -> {out_dir}")
    return 0


def _cmd_eval(args) -> int:
    started = _utc_now()
    config = load_config(args.config) if args.config else \
        load_config(None)
    groups = load_eval_groups(args.groups)
    embeddings = None
    matcher = None
    if args.embeddings:
        embeddings = load_embeddings_file(args.embeddings)
    else:
        matcher = MockMatcher(dim=args.dim, seed=args.seed)
    report = evaluate_testset(groups, matcher=matcher, embeddings=embeddings,
                              groups_path=args.groups)
    report_dir = Path(args.report)
    _write_json(report_dir / "report.json", report)
    _write_run_manifest(
        report_dir, "eval", config, seeds={"eval": args.seed},
        inputs={"groups": str(args.groups),
                "embeddings": str(args.embeddings) if args.embeddings else None},
        outputs={"report": str(report_dir / "report.json")},
        counters={"groups": report["groups"], "excluded": report["excluded"]},
        started_at=started)
    metrics = report["metrics"]
    line = ", ".join(f"{k}={v:.2f}" for k, v in metrics.items()
                     if v is not None)
    print(f"evaluated {report['groups']} groups: {line or 'no scorable groups'}")
    return 0


def _tsv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["\t".join(header)]
    lines += ["\t".join(str(cell) for cell in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _histogram_rows(hist) -> list:
    edges = hist.bin_edges
    return [(edges[i], edges[i + 1], hist.counts[i])
            for i in range(len(hist.counts))]


def _cmd_stats(args) -> int:
    started = _utc_now()
    config = load_config(None)
    samples = load_manifest(args.input)
    report_dir = Path(args.report)
    report: dict = {"samples": len(samples)}
    try:
        hists = score_histograms(samples)
        report["scores"] = hists.as_dict()
        _tsv(report_dir / "itm-variation-hist.tsv",
             ("bin_lo", "bin_hi", "count"), _histogram_rows(hists.itm_variation))
        _tsv(report_dir / "area-score-hist.tsv",
             ("bin_lo", "bin_hi", "count"), _histogram_rows(hists.area_score))
    except NoScoredSamplesError:
        report["scores"] = None
    unique = uniqueness_report(samples)
    report["uniqueness"] = unique.as_dict()
    table = mask_delta_table(samples)
    report["mask_delta"] = table.as_dict()
    _tsv(report_dir / "mask-delta.tsv",
         ("label", "samples", "median_mask_coverage_pct", "median_delta_in_mask"),
         [(r.label, r.samples, r.median_mask_coverage_pct, r.median_delta_in_mask)
          for r in table.rows])
    _write_json(report_dir / "stats-report.json", report)
    _write_run_manifest(
        report_dir, "stats", config, seeds={},
        inputs={"manifest": str(args.input)},
        outputs={"report": str(report_dir / "stats-report.json")},
        counters={"samples": len(samples)}, started_at=started)
    print(f"stats over {len(samples)} samples -> {report_dir}")
    return 0


def _cmd_serve(args) -> int:
    started = _utc_now()
    config = load_config(None)
    _write_run_manifest(
        Path(args.decisions).parent, "serve", config, seeds={},
        inputs={"manifest": str(args.manifest), "decisions": str(args.decisions)},
        outputs={"bind": f"{args.host}:{args.port}"},
        counters={}, started_at=started)
    serve(args.manifest, args.decisions, host=args.host, port=args.port,
          ui_dir=args.ui)
    return 0


def _cmd_export(args) -> int:
    started = _utc_now()
    config = load_config(None)
    samples = load_manifest(args.manifest)
    log = DecisionLog(args.decisions)
    accepted, distribution = export_curated(samples, log.decisions())
    out_path = Path(args.out)
    accepted = rebase_sample_paths(accepted, args.manifest, out_path)
    save_manifest(accepted, out_path)
    report_path = Path(args.report) if args.report else \
        out_path.parent / "export-distribution.json"
    _write_json(report_path, distribution)
    _write_run_manifest(
        out_path, "export", config, seeds={},
        inputs={"manifest": str(args.manifest), "decisions": str(args.decisions)},
        outputs={"manifest": str(out_path), "report": str(report_path)},
        counters={"accepted": len(accepted),
                  "images": distribution["images"]},
        started_at=started)
    print(f"exported {len(accepted)} accepted samples over "
          f"{distribution['images']} images -> {out_path}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="negmine",
        description="generative hard-negative mining pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="run the generation pipeline")
    p.add_argument("--config", required=True)
    p.add_argument("--input", required=True, help="source pairs manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--backend", choices=("mock", "real"), default="mock")
    p.add_argument("--seed", type=int, default=None,
                   help="overrides [generation].seed")
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("filter", help="apply the two-stage quality gate")
    p.add_argument("--config", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=_cmd_filter)

    p = sub.add_parser("train", help="contrastive finetune on mixed batches")
    p.add_argument("--config", required=True)
    p.add_argument("--generated", required=True)
    p.add_argument("--real", required=True, help="real pairs manifest")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score evaluation groups")
    p.add_argument("--groups", required=True)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--report", required=True, help="report directory")
    p.add_argument("--config", default=None)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("stats", help="dataset statistics over a manifest")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--report", required=True, help="report directory")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("serve", help="run the review service")
    p.add_argument("--manifest", required=True)
    p.add_argument("--decisions", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--ui", default=None, help="built review UI directory")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("export", help="export the curated test set")
    p.add_argument("--manifest", required=True)
    p.add_argument("--decisions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=_cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValidationError, ManifestError, MaskFormatError,
            BackendError, NoScoredSamplesError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
