"""Batch driver over directories of feature dumps.

Subcommands: metrics, correlogram, transform {normalize, mix, conv-project,
mlp-project}, correlate, synth.  Every run embeds a manifest (command,
resolved config, inputs, seeds, version) in its JSON outputs, or in a
``*.manifest.json`` sidecar for NPY/CSV outputs, so any artifact can be
reproduced byte for byte.  Outputs are written to temp files and renamed in
one pass: a failed run leaves nothing behind.

Set SSM_LOG to one of error, warn, info, debug to adjust verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import __version__
from .analysis import correlate_reports, read_scores_csv
from .feature_io import (
    load_channel_vector,
    load_mask,
    load_patch_grid,
    npy_bytes,
    save_mask,
)
from .metrics import METRIC_NAMES, MetricConfig, MetricReport, aggregate_metric, compute_metric
from .serialize import dumps, fmt_float
from .similarity import correlogram, correlogram_csv
from .synthetic import SyntheticSpec, block_mask, derive_seed, generate
from .transforms import (
    NormalizeConfig,
    conv_project,
    init_conv_weights,
    init_mlp_weights,
    load_weights,
    mix_global,
    mlp_project,
    spatial_normalize,
)

log = logging.getLogger("ssmkit")

_LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


class OutputStage:
    """Collects rendered outputs; commit writes temps then renames them all."""

    def __init__(self) -> None:
        self._items: list[tuple[Path, bytes]] = []

    def add(self, path: str | Path, data: bytes | str) -> None:
        if isinstance(data, str):
            data = data.encode()
        self._items.append((Path(path), data))

    def commit(self) -> None:
        staged: list[tuple[Path, Path]] = []
        try:
            for path, data in self._items:
                path.parent.mkdir(parents=True, exist_ok=True)
                tmp = path.parent / f".{path.name}.{os.getpid()}.tmp"
                tmp.write_bytes(data)
                staged.append((tmp, path))
            for tmp, path in staged:
                os.replace(tmp, path)
        except BaseException:
            for tmp, _ in staged:
                tmp.unlink(missing_ok=True)
            raise
        log.info("wrote %d output file(s)", len(self._items))


def run_manifest(command: str, config: dict, inputs: list[str], seeds: dict) -> dict:
    return {
        "command": command,
        "config": config,
        "inputs": inputs,
        "seeds": seeds,
        "version": __version__,
    }


def _feature_stems(features_dir: Path) -> list[str]:
    if not features_dir.is_dir():
        raise ValueError(f"{features_dir} is not a directory")
    stems = sorted(p.stem for p in features_dir.glob("*.npy"))
    if not stems:
        raise ValueError(f"no .npy files in {features_dir}")
    return stems


def _pool(jobs: int | None) -> ThreadPoolExecutor:
    return ThreadPoolExecutor(max_workers=jobs or os.cpu_count() or 1)


def cmd_metrics(args: argparse.Namespace) -> None:
    features_dir = Path(args.features_dir)
    wanted = [m.strip().lower() for m in args.metrics.split(",") if m.strip()]
    known = {m.lower() for m in METRIC_NAMES}
    for m in wanted:
        if m not in known:
            raise ValueError(f"unknown metric {m!r}, expected one of {sorted(known)}")
    if not wanted:
        raise ValueError("no metrics requested")
    if "srss" in wanted and not args.masks:
        raise ValueError("srss needs --masks pointing at the mask directory")

    stems = _feature_stems(features_dir)
    masks_dir = Path(args.masks) if args.masks else None
    encoder_id = args.encoder_id or features_dir.name
    cfg = MetricConfig(
        r_near=args.r_near,
        r_far=args.r_far,
        cds_delta_max=args.cds_delta_max,
        srss_triplets=args.srss_triplets,
        srss_seed=args.seed,
    )

    def work(stem: str) -> dict[str, float]:
        grid = load_patch_grid(features_dir / f"{stem}.npy")
        mask = None
        if masks_dir is not None and "srss" in wanted:
            mask_path = masks_dir / f"{stem}.npy"
            if not mask_path.exists():
                raise ValueError(f"no mask for image {stem!r} at {mask_path}")
            mask = load_mask(mask_path)
        return {m: compute_metric(m, grid, cfg, mask) for m in wanted}

    with _pool(args.jobs) as pool:
        per_image = dict(zip(stems, pool.map(work, stems)))

    manifest = run_manifest(
        "metrics",
        {
            "metrics": wanted,
            "encoder_id": encoder_id,
            **cfg.as_dict(),
        },
        inputs=[args.features_dir] + ([args.masks] if args.masks else []),
        seeds={"srss_seed": args.seed},
    )
    stage = OutputStage()
    out_dir = Path(args.out)
    for m in wanted:
        report = aggregate_metric(
            ((stem, per_image[stem][m]) for stem in stems),
            encoder_id=encoder_id,
            metric_name=m.upper(),
            cfg=cfg,
        )
        payload = report.to_dict()
        payload["manifest"] = manifest
        stage.add(out_dir / f"{encoder_id}.{m}.json", dumps(payload) + "\n")
    stage.commit()


def cmd_correlogram(args: argparse.Namespace) -> None:
    grid = load_patch_grid(args.feature)
    corr = correlogram(grid)
    manifest = run_manifest("correlogram", {}, inputs=[args.feature], seeds={})
    stage = OutputStage()
    stage.add(args.out, correlogram_csv(corr))
    stage.add(f"{args.out}.manifest.json", dumps(manifest) + "\n")
    stage.commit()


def _transform_inputs(path: Path) -> tuple[list[Path], bool]:
    if path.is_dir():
        files = sorted(path.glob("*.npy"))
        if not files:
            raise ValueError(f"no .npy files in {path}")
        return files, True
    return [path], False


def cmd_transform(args: argparse.Namespace) -> None:
    in_path = Path(args.input)
    files, dir_mode = _transform_inputs(in_path)
    sub = args.transform_cmd

    config: dict = {"transform": sub}
    seeds: dict = {}
    inputs = [args.input]

    if sub == "normalize":
        ncfg = NormalizeConfig(gamma=args.gamma, epsilon=args.eps, variant=args.variant)
        config.update(gamma=ncfg.gamma, eps=ncfg.epsilon, variant=ncfg.variant)
        apply = lambda grid: spatial_normalize(grid, ncfg)
    elif sub == "mix":
        vector = load_channel_vector(args.vector)
        config.update(alpha=args.alpha, vector=args.vector)
        inputs.append(args.vector)
        apply = lambda grid: mix_global(grid, vector, args.alpha)
    elif sub in ("conv-project", "mlp-project"):
        first = load_patch_grid(files[0])
        out_dim = args.out_dim or first.dim
        if args.weights:
            weights = load_weights(args.weights)
            inputs.append(args.weights)
            config.update(weights=args.weights, initialized=False, out_dim=weights.out_dim)
        else:
            if sub == "conv-project":
                weights = init_conv_weights(first.dim, out_dim, seed=args.seed)
            else:
                weights = init_mlp_weights(first.dim, out_dim, hidden=args.hidden, seed=args.seed)
            config.update(weights=None, initialized=True, out_dim=out_dim)
            seeds["init_seed"] = args.seed
        project = conv_project if sub == "conv-project" else mlp_project
        apply = lambda grid: project(grid, weights)
    else:  # pragma: no cover - argparse restricts choices
        raise ValueError(f"unknown transform {sub!r}")

    with _pool(args.jobs) as pool:
        results = list(pool.map(lambda f: apply(load_patch_grid(f)), files))

    manifest = run_manifest(f"transform {sub}", config, inputs=inputs, seeds=seeds)
    stage = OutputStage()
    out = Path(args.out)
    if dir_mode:
        for src, grid in zip(files, results):
            stage.add(out / src.name, npy_bytes(grid.data))
        stage.add(out / "manifest.json", dumps(manifest) + "\n")
    else:
        stage.add(out, npy_bytes(results[0].data))
        stage.add(f"{out}.manifest.json", dumps(manifest) + "\n")
    stage.commit()


def cmd_correlate(args: argparse.Namespace) -> None:
    reports = []
    for path in args.reports:
        payload = json.loads(Path(path).read_text())
        reports.append(MetricReport.from_dict(payload))
    scores = read_scores_csv(args.scores, score_name=args.score_name)
    result = correlate_reports(reports, scores)
    manifest = run_manifest(
        "correlate",
        {"score_name": scores.score_name},
        inputs=list(args.reports) + [args.scores],
        seeds={},
    )
    payload = result.to_dict()
    payload["manifest"] = manifest
    stage = OutputStage()
    stage.add(args.out, dumps(payload) + "\n")
    if args.emit_plot_data:
        lines = ["metric,score,encoder_id"]
        for encoder_id, metric, score in result.pairs:
            lines.append(f"{fmt_float(metric)},{fmt_float(score)},{encoder_id}")
        stage.add(args.emit_plot_data, "\n".join(lines) + "\n")
        stage.add(f"{args.emit_plot_data}.manifest.json", dumps(manifest) + "\n")
    stage.commit()


def _synth_one(stage: OutputStage, root: Path, spec: SyntheticSpec, count: int, jobs: int | None) -> None:
    child_specs = [replace(spec, seed=derive_seed(spec.seed, j)) for j in range(count)]
    with _pool(jobs) as pool:
        grids = list(pool.map(generate, child_specs))
    for j, (child, grid) in enumerate(zip(child_specs, grids)):
        stem = f"img_{j:04d}.npy"
        stage.add(root / "features" / stem, npy_bytes(grid.data))
        stage.add(root / "masks" / stem, npy_bytes(block_mask(child).bits.astype(float)))


def cmd_synth(args: argparse.Namespace) -> None:
    spec_data = json.loads(Path(args.spec).read_text())
    seed = args.seed if args.seed is not None else int(spec_data.get("seed", 0))
    count = args.count or int(spec_data.get("count", 4))
    base = dict(
        height=int(spec_data["height"]),
        width=int(spec_data["width"]),
        dim=int(spec_data["dim"]),
        overlay_norm=float(spec_data.get("overlay_norm", 0.0)),
    )
    out = Path(args.out)
    stage = OutputStage()
    levels = spec_data.get("levels")
    if levels is not None:
        for i, level in enumerate(levels):
            spec = SyntheticSpec(structure_level=float(level), seed=derive_seed(seed, i), **base)
            _synth_one(stage, out / f"level_{i:02d}", spec, count, args.jobs)
    else:
        spec = SyntheticSpec(structure_level=float(spec_data["structure_level"]), seed=seed, **base)
        _synth_one(stage, out, spec, count, args.jobs)
    manifest = run_manifest(
        "synth",
        {**base, "levels": levels, "structure_level": spec_data.get("structure_level"), "count": count},
        inputs=[args.spec],
        seeds={"seed": seed},
    )
    stage.add(out / "manifest.json", dumps(manifest) + "\n")
    stage.commit()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssm",
        description="Spatial self-similarity metrics and transforms for patch-token dumps.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("metrics", help="compute structure metrics over a feature directory")
    p.add_argument("features_dir")
    p.add_argument("--metrics", required=True, help="comma list from lds,cds,srss,rmsc")
    p.add_argument("--masks", help="mask directory (required for srss)")
    p.add_argument("--encoder-id", help="defaults to the feature directory name")
    p.add_argument("--r-near", type=int)
    p.add_argument("--r-far", type=int)
    p.add_argument("--cds-delta-max", type=int)
    p.add_argument("--srss-triplets", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0, help="triplet sampling seed")
    p.add_argument("--jobs", type=int, help="worker threads (default: logical cores)")
    p.add_argument("--out", required=True, help="output directory for report JSONs")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("correlogram", help="export one grid's correlogram as CSV")
    p.add_argument("feature")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_correlogram)

    p = sub.add_parser("transform", help="apply a feature transform to a file or directory")
    tsub = p.add_subparsers(dest="transform_cmd", required=True)

    t = tsub.add_parser("normalize")
    t.add_argument("input")
    t.add_argument("--gamma", type=float, default=0.7)
    t.add_argument("--eps", type=float, default=1e-6)
    t.add_argument("--variant", choices=["std_plus_eps", "sqrt_var_plus_eps"], default="std_plus_eps")

    t = tsub.add_parser("mix")
    t.add_argument("input")
    t.add_argument("--vector", required=True, help="1-d NPY channel vector")
    t.add_argument("--alpha", type=float, default=0.0)

    t = tsub.add_parser("conv-project")
    t.add_argument("input")
    t.add_argument("--weights", help="weights manifest JSON; omitted = seeded init")
    t.add_argument("--out-dim", type=int)
    t.add_argument("--seed", type=int, default=0)

    t = tsub.add_parser("mlp-project")
    t.add_argument("input")
    t.add_argument("--weights", help="weights manifest JSON; omitted = seeded init")
    t.add_argument("--out-dim", type=int)
    t.add_argument("--hidden", type=int)
    t.add_argument("--seed", type=int, default=0)

    for t in tsub.choices.values():
        t.add_argument("--out", required=True)
        t.add_argument("--jobs", type=int)
        t.set_defaults(func=cmd_transform)

    p = sub.add_parser("correlate", help="join metric reports with a score CSV")
    p.add_argument("reports", nargs="+")
    p.add_argument("--scores", required=True, help="CSV with header encoder_id,score")
    p.add_argument("--score-name", help="defaults to the CSV file stem")
    p.add_argument("--emit-plot-data", help="also write a metric,score,encoder_id CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("synth", help="generate a synthetic feature/mask directory")
    p.add_argument("--spec", required=True, help="JSON spec file")
    p.add_argument("--seed", type=int, help="override the seed from the spec file")
    p.add_argument("--count", type=int, help="images per level (default: spec count or 4)")
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    return parser


def _setup_logging() -> None:
    raw = os.environ.get("SSM_LOG", "warn").lower()
    if raw not in _LOG_LEVELS:
        raise ValueError(
            f"SSM_LOG={raw!r} is invalid, expected one of {sorted(_LOG_LEVELS)}"
        )
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    log.setLevel(_LOG_LEVELS[raw])


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _setup_logging()
        args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
