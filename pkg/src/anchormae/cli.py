"""Command-line entry point: one pipeline stage per invocation.

Exit codes: 0 success, 1 usage error, 2 runtime error. Machine-readable
results go to stdout as JSON; human diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import __version__
from .config import RunConfig, load_run_config, to_dict
from .data import build_dataset, load_dataset, probe_images, write_dataset
from .errors import InvalidArgument
from .geo import CORNER_ORDER, GeoMetadata, corner_bit_vector, encode_corner, level_for_gsd
from .imageset import SetKind
from .masking import choose_anchor, plan_for_strategy
from .pruning import PruningConfig, feature_of, partition_regions, prune_report
from .trainer import linear_probe, load_checkpoint, pretrain, write_loss_log

SOURCE_ALIASES = {"s2": "s2like", "l8": "l8like", "gf1": "gf1like", "gf2": "gf2like"}


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; the interface pins 1
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> _Parser:
    parser = _Parser(prog="anchormae",
                     description="Synthetic multi-source masked-autoencoder pipeline")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    g = sub.add_parser("generate-data", help="write a synthetic dataset of image sets")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--locations", type=int, default=200)
    g.add_argument("--kinds", default="s2l8_city,s2l8_reserve,gfs2",
                   help="comma-separated set kinds to cycle through")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--input-size", type=int, default=None,
                   help="override the generator's common image size")
    g.add_argument("--config", default=None, help="RunConfig JSON (generator section)")

    p = sub.add_parser("prune", help="cluster-and-keep-hardest data pruning")
    p.add_argument("--in", dest="data_dir", required=True)
    p.add_argument("--out", required=True, help="manifest JSON path")
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--keep", type=float, default=0.10)
    p.add_argument("--cell-deg", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--all-kinds", action="store_true",
                   help="prune every kind, not only nature-reserve sets")

    t = sub.add_parser("pretrain", help="run masked-autoencoder pre-training")
    t.add_argument("--config", default=None, help="RunConfig JSON")
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--out", required=True, help="checkpoint/log output directory")
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--mask-ratio", type=float, default=None)
    t.add_argument("--mask-strategy", choices=["aam", "tube", "random"], default=None)
    t.add_argument("--geo-mode", choices=["none", "one_hot", "scale_only", "full_gem"],
                   default=None)
    t.add_argument("--seed", type=int, default=None)

    r = sub.add_parser("probe", help="frozen-feature linear probe")
    r.add_argument("--ckpt", required=True, help="checkpoint path prefix")
    r.add_argument("--data", required=True, help="dataset directory")
    r.add_argument("--geo-at-finetune", action="store_true")
    r.add_argument("--multiband", action="store_true",
                   help="use full raw bands via 3-band sub-image tokenization")
    r.add_argument("--seed", type=int, default=0)

    e = sub.add_parser("geo-encode", help="quadtree-encode one image's geo metadata")
    e.add_argument("--in", dest="json_in", default=None,
                   help="JSON file with {gsd_m, corners}; default stdin")

    m = sub.add_parser("mask-plan", help="emit a mask plan as JSON")
    m.add_argument("--sources", required=True, help="e.g. s2,l8,s2")
    m.add_argument("--times", required=True, help="e.g. 2020,2020,2022")
    m.add_argument("--patches", type=int, required=True)
    m.add_argument("--ratio", type=float, required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--strategy", choices=["aam", "tube", "random"], default="aam")
    return parser


def _emit(payload: dict) -> None:
    json.dump(payload, sys.stdout, indent=1)
    sys.stdout.write("\n")


def _run_config(path: str | None) -> RunConfig:
    return load_run_config(path) if path else RunConfig()


def cmd_generate_data(args) -> int:
    cfg = _run_config(args.config).generator
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.input_size is not None:
        overrides["input_size"] = args.input_size
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    kinds = [SetKind(k.strip()) for k in args.kinds.split(",") if k.strip()]
    dataset = build_dataset(cfg, args.locations, kinds=kinds)
    write_dataset(dataset, args.out, generator_cfg=cfg)
    _emit({"dir": str(args.out), "locations": len(dataset),
           "kinds": [k.value for k in kinds], "input_size": cfg.input_size})
    return 0


def cmd_prune(args) -> int:
    dataset = load_dataset(args.data_dir)
    cfg = PruningConfig(region_cell_deg=args.cell_deg, k=args.k, keep_frac=args.keep)
    if args.all_kinds:
        kind_pools = {kind: dataset.by_kinds([kind]) for kind in SetKind}
    else:
        kind_pools = {SetKind.S2L8_RESERVE: dataset.by_kinds([SetKind.S2L8_RESERVE])}
    rng = np.random.default_rng(args.seed)
    kept_all: list[int] = []
    region_stats = []
    for kind, records in sorted(kind_pools.items(), key=lambda kv: kv[0].value):
        if not records:
            continue
        assignment = partition_regions(
            [(r.location_id, r.center[0], r.center[1]) for r in records], args.cell_deg)
        regions: dict = {}
        for rec in records:
            images = sorted(rec.images(), key=lambda im: (im.meta.source, im.meta.time))
            feature = np.concatenate([feature_of(im) for im in images])
            regions.setdefault(assignment[rec.location_id], []).append(
                (rec.location_id, feature))
        for report in prune_report(regions, cfg, rng):
            kept_all.extend(sorted(report.kept))
            region_stats.append({
                "kind": kind.value, "region": list(report.region),
                "n": len(report.scores), "kept": sorted(report.kept),
                "pooled": report.pooled,
                "difficulty_max": max(s for _, s in report.scores),
                "difficulty_min": min(s for _, s in report.scores),
            })
    manifest = {"kept_location_ids": sorted(kept_all),
                "config": to_dict(cfg), "regions": region_stats}
    Path(args.out).write_text(json.dumps(manifest, indent=1))
    _emit({"kept": len(kept_all), "out": str(args.out),
           "regions": len(region_stats)})
    return 0


def cmd_pretrain(args) -> int:
    run_cfg = _run_config(args.config)
    train_cfg = run_cfg.train
    overrides = {name: getattr(args, name) for name in
                 ("epochs", "batch_size", "mask_ratio", "mask_strategy", "geo_mode", "seed")
                 if getattr(args, name) is not None}
    if overrides:
        train_cfg = dataclasses.replace(train_cfg, **overrides)
    dataset = load_dataset(args.data)
    out = Path(args.out)
    result = pretrain(train_cfg, dataset, run_cfg.model, out_dir=out)
    write_loss_log(out / "loss_log.csv", result.log)
    tenth = max(1, len(result.log) // 10)
    losses = [e.loss for e in result.log]
    _emit({
        "steps": len(result.log),
        "mean_loss_first_tenth": float(np.mean(losses[:tenth])),
        "mean_loss_last_tenth": float(np.mean(losses[-tenth:])),
        "mean_baseline_last_tenth": float(np.mean([e.baseline for e in result.log[-tenth:]])),
        "checkpoints": result.checkpoint_paths,
        "loss_log": str(out / "loss_log.csv"),
    })
    return 0


def cmd_probe(args) -> int:
    params, model_cfg, _ = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data)
    labeled = probe_images(dataset, multiband=args.multiband)
    result = linear_probe(params, model_cfg, labeled,
                          geo_at_finetune=args.geo_at_finetune, seed=args.seed)
    _emit({"accuracy": result.accuracy,
           "per_class": {str(k): v for k, v in sorted(result.per_class.items())},
           "n_eval": result.n_eval})
    return 0


def cmd_geo_encode(args) -> int:
    raw = Path(args.json_in).read_text() if args.json_in else sys.stdin.read()
    payload = json.loads(raw)
    meta = GeoMetadata(gsd_m=payload["gsd_m"],
                       corners={k: tuple(v) for k, v in payload["corners"].items()})
    level = level_for_gsd(meta.gsd_m).level
    codes = {}
    for name in CORNER_ORDER:
        lat, lon = meta.corners[name]
        code = encode_corner(lat, lon, level)
        codes[name] = {"row": code.row_bits, "col": code.col_bits}
    bits = corner_bit_vector(meta)
    _emit({"level": level, "corner_codes": codes,
           "padded_bits": "".join(str(int(b)) for b in bits)})
    return 0


def cmd_mask_plan(args) -> int:
    sources = [SOURCE_ALIASES.get(tok.strip(), tok.strip())
               for tok in args.sources.split(",")]
    times = [int(tok) for tok in args.times.split(",")]
    if len(sources) != 3 or len(times) != 3:
        raise InvalidArgument("mask-plan needs exactly 3 sources and 3 times")
    metas = [SimpleNamespace(source=s, time=t) for s, t in zip(sources, times)]
    rng = np.random.default_rng(args.seed)
    anchor = choose_anchor(metas, rng)
    plan = plan_for_strategy(args.strategy, metas, anchor, args.patches, args.ratio, rng)
    _emit({
        "strategy": args.strategy,
        "n_patches": plan.n_patches,
        "ratio": plan.ratio,
        "anchor_index": plan.anchor_index,
        "relations": {str(j): rel.value for j, rel in sorted(plan.relations.items())},
        "masked": [sorted(m) for m in plan.masked],
        "visible": [sorted(v) for v in plan.visible],
    })
    return 0


COMMANDS = {
    "generate-data": cmd_generate_data,
    "prune": cmd_prune,
    "pretrain": cmd_pretrain,
    "probe": cmd_probe,
    "geo-encode": cmd_geo_encode,
    "mask-plan": cmd_mask_plan,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse help/version (0) or usage error (1)
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        sys.stderr.write("anchormae: error: a subcommand is required "
                         f"(one of: {', '.join(COMMANDS)})\n")
        return 1
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError, KeyError) as exc:
        sys.stderr.write(f"anchormae {args.command}: error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
