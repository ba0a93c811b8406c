"""Command-line front end.

Verbs: simulate, sweep, analyze-transform, eval, filter-identities, pareto.
Every verb takes --config/--seed/--out/--workers. Log level comes from the
FASTFACE_LOG environment variable (error, warn, info, debug).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import runs
from .artifacts import (
    ArtifactWriter,
    dump_records,
    fronts_json,
    load_manifest,
    load_records,
    metrics_csv,
    points_from_rows,
    read_metrics_csv,
)
from .attention import transform_map
from .errors import ConfigError, FastFaceError
from .evaluation import aggregate, check_record_counts, distribution_stats, filter_identities, group_identities, pareto_front
from .tensorio import encode, read_tensor

log = logging.getLogger("fastface")

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
DEFAULT_OBJECTIVES = "ID:max,CLIP:max,AE:max"


def _configure_logging() -> None:
    name = os.environ.get("FASTFACE_LOG", "warn").lower()
    if name not in LOG_LEVELS:
        raise ConfigError(f"FASTFACE_LOG must be one of {sorted(LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(level=LOG_LEVELS[name], format="%(levelname)s %(name)s: %(message)s")


def _load_config(args) -> dict:
    return cfgmod.load(args.config) if args.config else cfgmod.resolve({})


def _parse_objectives(spec: str) -> dict:
    out = {}
    for part in spec.split(","):
        name, _, sense = part.partition(":")
        if sense not in ("max", "min"):
            raise ConfigError(f"objective {part!r}: expected NAME:max or NAME:min")
        out[name.strip()] = sense == "max"
    return out


# ---------------------------------------------------------------- verbs


def cmd_simulate(args) -> None:
    cfg = _load_config(args)
    e = cfg["eval"]
    pair = runs.run_pair(cfg, args.seed, e["identity_index"], e["prompt_index"])
    out = ArtifactWriter(args.out)
    traj = pair.trajectory
    for k, st in enumerate(traj.states):
        out.write_bytes(f"trajectory/x_{k:03d}.fftn", encode(st.x))
    for k, eps in enumerate(traj.eps):
        out.write_bytes(f"trajectory/eps_{k:03d}.fftn", encode(eps))
    for m in traj.maps:
        stem = f"attention/step{m['step']}_{m['slot']}_block{m['block']}_{m['group']}"
        if m["pre"] is not None:
            out.write_bytes(f"{stem}_pre.fftn", encode(m["pre"]))
        if m["post"] is not None:
            out.write_bytes(f"{stem}_post.fftn", encode(m["post"]))
    labels = runs.metrics_row(cfg, {})
    out.write_text("records.jsonl", dump_records([pair.record], labels))
    out.write_text("metrics.csv", metrics_csv([runs.metrics_row(cfg, aggregate([pair.record]))]))
    out.manifest({"command": "simulate", "seed": args.seed, "pair_seed": pair.seed,
                  "timesteps": [s.t for s in traj.states], "config": cfg})
    log.info("simulate: %d states written to %s", len(traj.states), args.out)


def _cell_job(job):
    cell_cfg, seed = job
    _, metrics = runs.run_cell(cell_cfg, seed)
    return runs.metrics_row(cell_cfg, metrics)


def cmd_sweep(args) -> None:
    cfg = _load_config(args)
    cells = runs.sweep_cells(cfg)
    jobs = [(c, args.seed) for _, c in cells]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_cell_job, jobs))
        log.info("sweep: %d cells on %d workers", len(jobs), args.workers)
    else:
        rows = [_cell_job(j) for j in jobs]
    extra = ()
    for (params, _), row in zip(cells, rows):
        for k, v in params.items():
            if k != "adapter_scale":
                row[k] = v
                extra = extra + (k,) if k not in extra else extra
    out = ArtifactWriter(args.out)
    out.write_text("sweep.csv", metrics_csv(rows, extra))
    if args.plots:
        from .plotting import sweep_metrics

        labels = [",".join(f"{k}={v}" for k, v in p.items()) for p, _ in cells]
        fig, _ = sweep_metrics(rows, labels)
        out.figure("sweep.png", fig)
    out.manifest({"command": "sweep", "seed": args.seed, "cells": [p for p, _ in cells], "config": cfg})


def cmd_analyze_transform(args) -> None:
    cfg = _load_config(args)
    am = runs.am_from(cfg)
    if args.dump is None:
        raise ConfigError("analyze-transform needs --dump PATH")
    maps = read_tensor(args.dump).astype(np.float64)
    if maps.ndim < 2:
        raise ConfigError(f"{args.dump}: attention dump must have rank >= 2, got {maps.ndim}")
    stack = maps.reshape(-1, *maps.shape[-2:])
    out = ArtifactWriter(args.out)
    report = []
    for k, a in enumerate(stack):
        after = transform_map(a, am, args.step, args.group)
        before_h = distribution_stats(a, args.bins).to_dict()
        after_h = distribution_stats(after, args.bins).to_dict()
        report.append({"index": k, "before": before_h, "after": after_h})
        if args.plots:
            from .plotting import histogram_pair

            fig, _ = histogram_pair(before_h, after_h, f"map {k}: {am.kind}")
            out.figure(f"hist_{k:03d}.png", fig)
    out.write_text("analysis.json", json.dumps({"transform": am.to_dict(), "step": args.step,
                                                "group": args.group, "maps": report},
                                               sort_keys=True, indent=2) + "\n")
    out.manifest({"command": "analyze-transform", "dump": Path(args.dump).name, "config": cfg})


def _fronts(rows, objectives: dict) -> tuple:
    groups: dict = {}
    for r in rows:
        groups.setdefault(f"{r['model']}/{r['config']}/lora_scale={r['lora_scale']}", []).append(r)
    fronts, plotted = {}, {}
    for key, members in groups.items():
        pts = points_from_rows(members, objectives)
        fronts[key] = pareto_front(pts)
        plotted[key] = (pts, fronts[key])
    return fronts, plotted


def _plot_fronts(out, plotted, objectives, args) -> None:
    if not args.plots or not plotted:
        return
    from .plotting import pareto_scatter

    names = list(objectives)
    fig, _ = pareto_scatter(plotted, names[0], names[1] if len(names) > 1 else names[0])
    out.figure("fronts.png", fig)


def cmd_eval(args) -> None:
    if args.manifest is None or args.records is None:
        raise ConfigError("eval needs --manifest PATH and --records DIR")
    manifest = load_manifest(args.manifest)
    labelled = load_records(args.records)
    by_labels: dict = {}
    for labels, rec in labelled:
        by_labels.setdefault(labels, []).append(rec)
    rows = []
    for labels in sorted(by_labels, key=lambda t: tuple(str(x) for x in t)):
        recs = by_labels[labels]
        check_record_counts(recs, manifest)
        model, conf, lora, lam = labels
        rows.append({"model": model, "config": conf, "lora_scale": lora, "adapter_scale": lam, **aggregate(recs)})
    objectives = _parse_objectives(args.objectives)
    fronts, plotted = _fronts(rows, objectives)
    out = ArtifactWriter(args.out)
    out.write_text("metrics.csv", metrics_csv(rows))
    out.write_text("fronts.json", fronts_json(fronts))
    _plot_fronts(out, plotted, objectives, args)
    out.manifest({"command": "eval", "records": len(labelled), "protocol": manifest.protocol})


def cmd_filter_identities(args) -> None:
    if args.manifest is None:
        raise ConfigError("filter-identities needs --manifest PATH")
    manifest = load_manifest(args.manifest)
    result = {}
    for group, members in sorted(group_identities(manifest.identities).items()):
        kept, dropped = filter_identities(members, args.threshold)
        result["/".join(group)] = {"kept": [m.id for m in kept], "discarded": [m.id for m in dropped]}
    out = ArtifactWriter(args.out)
    out.write_text("filtered.json", json.dumps({"threshold": args.threshold, "groups": result},
                                               sort_keys=True, indent=2) + "\n")
    out.manifest({"command": "filter-identities"})


def cmd_pareto(args) -> None:
    if args.metrics is None:
        raise ConfigError("pareto needs --metrics CSV")
    rows = read_metrics_csv(args.metrics)
    objectives = _parse_objectives(args.objectives)
    fronts, plotted = _fronts(rows, objectives)
    out = ArtifactWriter(args.out)
    out.write_text("fronts.json", fronts_json(fronts))
    _plot_fronts(out, plotted, objectives, args)
    out.manifest({"command": "pareto"})


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run config")
    common.add_argument("--seed", type=int, default=0, help="unsigned 64-bit seed")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--workers", type=int, default=1, help="worker processes for sweeps")
    common.add_argument("--no-plots", dest="plots", action="store_false", help="skip figure rendering")

    p = argparse.ArgumentParser(prog="fastface", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="run one guided few-step sample")
    sub.add_parser("sweep", parents=[common], help="metrics over an adapter_scale or alpha x beta grid")
    a = sub.add_parser("analyze-transform", parents=[common], help="histograms before/after a map transform")
    a.add_argument("--dump", type=Path, help="FFTN attention dump")
    a.add_argument("--bins", type=int, default=50)
    a.add_argument("--step", type=int, default=0, help="sampler step the transform is scheduled for")
    a.add_argument("--group", choices=("down", "mid", "up"), default="up")
    e = sub.add_parser("eval", parents=[common], help="aggregate scored records into metrics and fronts")
    e.add_argument("--manifest", type=Path)
    e.add_argument("--records", type=Path)
    e.add_argument("--objectives", default=DEFAULT_OBJECTIVES)
    f = sub.add_parser("filter-identities", parents=[common], help="prune look-alike identities per group")
    f.add_argument("--manifest", type=Path)
    f.add_argument("--threshold", type=float, default=0.3)
    q = sub.add_parser("pareto", parents=[common], help="Pareto fronts from a metrics CSV")
    q.add_argument("--metrics", type=Path)
    q.add_argument("--objectives", default=DEFAULT_OBJECTIVES)
    return p


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "analyze-transform": cmd_analyze_transform,
    "eval": cmd_eval,
    "filter-identities": cmd_filter_identities,
    "pareto": cmd_pareto,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _configure_logging()
        if not 0 <= args.seed < 2**64:
            raise ConfigError(f"--seed must be an unsigned 64-bit integer, got {args.seed}")
        if args.workers < 1:
            raise ConfigError(f"--workers must be >= 1, got {args.workers}")
        COMMANDS[args.command](args)
    except FastFaceError as exc:
        print(f"fastface {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
