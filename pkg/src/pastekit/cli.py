"""Command-line entry points for the full pipeline.

Subcommands: annotate (masks -> COCO), synth (cutouts -> synthetic
training set), augment-preview (pipeline samples for visual audit),
eval (COCO gt + results -> report), stats (class distributions).

Every run is driven by one JSON config plus a master seed; a hash of
the effective config is embedded in all outputs so a result file can
be traced back to the exact settings that produced it. Exit codes:
0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import shutil
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from pastekit import composer, evalkit, maskannot
from pastekit.composer import ComposerConfig, SynthCounts
from pastekit.maskannot import AnnotRules
from pastekit.augment import AugConfig, build_pipeline
from pastekit.augment import apply as apply_pipeline
from pastekit.corekit.coco import (
    CocoFormatError,
    load_coco,
    load_results,
    save_coco,
)
from pastekit.corekit.dataset import Category, Dataset, DatasetError, ImageRecord
from pastekit.corekit.raster import MASK_SUFFIX, load_image, load_mask, save_image
from pastekit.seeds import derive_seed


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass(frozen=True)
class EvalConfig:
    iou_thresh: float = 0.50
    scheme: str = "envelope"
    fp_min_conf: float = 0.10
    confusion_min_conf: float = 0.25
    confusion_iou: float = 0.45
    subset_tags: Optional[tuple[str, ...]] = None


_PATH_KEYS = (
    "cutout_dir",
    "cutout_manifest",
    "negatives_dir",
    "tiles_dir",
    "dataset_json",
    "image_dir",
    "out_dir",
)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    paths: dict = field(default_factory=dict)
    composer: ComposerConfig = field(default_factory=ComposerConfig)
    counts: SynthCounts = field(default_factory=SynthCounts)
    annot_rules: AnnotRules = field(default_factory=AnnotRules)
    augment: AugConfig = field(default_factory=AugConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def as_dict(self) -> dict:
        return {
            "schema_version": 1,
            "seed": self.seed,
            "paths": dict(sorted(self.paths.items())),
            "composer": asdict(self.composer),
            "counts": asdict(self.counts),
            "annot_rules": asdict(self.annot_rules),
            "augment": asdict(self.augment),
            "eval": asdict(self.eval),
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def path(self, key: str, required: bool = False) -> Optional[Path]:
        value = self.paths.get(key)
        if value is None:
            if required:
                raise ConfigError(f"config paths.{key} is required for this command")
            return None
        return Path(value)


def _section(cls, doc: dict, name: str, tuple_keys: tuple[str, ...] = ()):
    if not isinstance(doc, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"config section {name!r} has unknown keys {unknown}")
    prepared = dict(doc)
    for key in tuple_keys:
        if key in prepared and prepared[key] is not None:
            prepared[key] = tuple(prepared[key])
    try:
        return cls(**prepared)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config section {name!r}: {exc}") from exc


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    known = {
        "schema_version", "seed", "paths", "composer", "counts",
        "annot_rules", "augment", "eval",
    }
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown top-level keys {unknown}")
    version = doc.get("schema_version", 1)
    if version != 1:
        raise ConfigError(f"{path}: unsupported schema_version {version}")
    paths = doc.get("paths", {})
    if not isinstance(paths, dict):
        raise ConfigError(f"{path}: paths must be an object")
    bad = sorted(set(paths) - set(_PATH_KEYS))
    if bad:
        raise ConfigError(f"{path}: unknown path keys {bad}")
    return RunConfig(
        seed=int(doc.get("seed", 0)),
        paths={k: str(v) for k, v in paths.items()},
        composer=_section(
            ComposerConfig, doc.get("composer", {}), "composer",
            ("rotation_range", "scale_range", "canvas", "mosaic_grid"),
        ),
        counts=_section(SynthCounts, doc.get("counts", {}), "counts"),
        annot_rules=_section(
            AnnotRules, doc.get("annot_rules", {}), "annot_rules"
        ),
        augment=_section(
            AugConfig, doc.get("augment", {}), "augment",
            ("scale_range", "rotation_range"),
        ),
        eval=_section(
            EvalConfig, doc.get("eval", {}), "eval", ("subset_tags",)
        ),
    )


def _canonical_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _resolve_out(args, cfg: RunConfig) -> Path:
    if args.out:
        return Path(args.out)
    env = os.environ.get("PASTEKIT_OUT")
    if env:
        return Path(env)
    configured = cfg.path("out_dir")
    return configured if configured is not None else Path("out")


def _log(message: str) -> None:
    print(message, file=sys.stderr)


# --- annotate ----------------------------------------------------------------

def cmd_annotate(args) -> int:
    cfg = load_config(args.config)
    out_dir = _resolve_out(args, cfg)
    image_dir = cfg.path("cutout_dir", required=True)
    manifest = cfg.path("cutout_manifest", required=True)
    rules = cfg.annot_rules
    rows = composer.read_manifest(manifest)
    if not rows:
        raise ConfigError(f"{manifest}: empty manifest")
    names = sorted({category for _, category in rows})
    categories = tuple(Category(id=i + 1, name=n) for i, n in enumerate(names))
    by_name = {c.name: c.id for c in categories}

    records = []
    failures: list[str] = []
    for stem, category in rows:
        try:
            image_path = composer._find_image(image_dir, stem)
        except FileNotFoundError:
            failures.append(f"{stem}: image file missing")
            continue
        mask_paths = sorted(image_dir.glob(f"{stem}.mask*.png"))
        if not mask_paths:
            failures.append(f"{stem}: mask file missing ({stem}{MASK_SUFFIX})")
            continue
        try:
            image = load_image(image_path)
            masks = tuple(load_mask(p) for p in mask_paths)
            ms = maskannot.MaskSet(
                image=stem, width=image.shape[1], height=image.shape[0], masks=masks
            )
            obj = maskannot.annotate_single(ms, by_name[category], rules)
        except (ValueError, OSError) as exc:
            failures.append(f"{stem}: {exc}")
            continue
        records.append(
            ImageRecord(
                id=len(records) + 1,
                file_name=image_path.name,
                width=image.shape[1],
                height=image.shape[0],
                color_mode="rgb",
                objects=(obj,),
                split="train_b",
            )
        )

    dataset = Dataset(
        categories=categories,
        images=tuple(records),
        provenance={"generator": "pastekit-annotate", "config_hash": cfg.config_hash()},
    )
    violations = maskannot.validate_manual(dataset, rules)

    out_dir.mkdir(parents=True, exist_ok=True)
    save_coco(dataset, out_dir / "annotations.json")
    report_lines = [f"annotated {len(records)} of {len(rows)} pairs"]
    report_lines += [f"failed {line}" for line in failures]
    report_lines += [v.as_line() for v in violations]
    (out_dir / "annotate_report.txt").write_text(
        "\n".join(report_lines) + "\n", encoding="utf-8"
    )
    (out_dir / "violations.json").write_text(
        _canonical_json([v.as_dict() for v in violations]), encoding="utf-8"
    )
    _log(f"annotate: {len(records)} ok, {len(failures)} failed -> {out_dir}")
    for line in failures:
        _log(f"  failed {line}")
    return 0 if records else 1


# --- synth -------------------------------------------------------------------

def _load_pools(cfg: RunConfig) -> composer.PoolSet:
    cutout_dir = cfg.path("cutout_dir", required=True)
    manifest = cfg.path("cutout_manifest", required=True)
    cutouts, categories = composer.load_cutout_pool(cutout_dir, manifest)
    tiles = []
    if cfg.counts.synthetic_bg > 0:
        tiles_dir = cfg.path("tiles_dir")
        tiles = composer.load_image_pool(tiles_dir if tiles_dir else cutout_dir)
    negatives = []
    if cfg.counts.negative_bg > 0:
        negatives = composer.load_image_pool(cfg.path("negatives_dir", required=True))
    return composer.PoolSet(
        cutouts=cutouts, categories=categories, tiles=tiles, negatives=negatives
    )


def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = RunConfig(
            seed=args.seed, paths=cfg.paths, composer=cfg.composer,
            counts=cfg.counts, annot_rules=cfg.annot_rules,
            augment=cfg.augment, eval=cfg.eval,
        )
    out_dir = _resolve_out(args, cfg)
    jobs = max(1, args.jobs)
    started = time.monotonic()
    pools = _load_pools(cfg)
    counts = cfg.counts
    _log(
        f"synth: {len(pools.cutouts)} cutouts, {len(pools.tiles)} tiles, "
        f"{len(pools.negatives)} negatives"
    )
    _log(
        f"synth: planning {counts.synthetic_bg} mosaic + {counts.negative_bg} negative "
        f"+ {counts.derived} derived images, seed {cfg.seed}, jobs {jobs}"
    )
    images_dir = out_dir / "images"
    created: list[Path] = []
    written = 0

    def writer(record: ImageRecord, data: bytes) -> None:
        nonlocal written
        target = images_dir / record.file_name
        target.write_bytes(data)
        written += 1
        if written % 500 == 0:
            _log(f"synth: wrote {written} images")

    try:
        images_dir.mkdir(parents=True, exist_ok=True)
        created.append(images_dir)
        dataset, manifest = composer.synthesize_set(
            pools, cfg.composer, counts, cfg.seed, on_image=writer, jobs=jobs
        )
        dataset.provenance["config_hash"] = cfg.config_hash()
        manifest["config_hash"] = cfg.config_hash()
        ann_path = out_dir / "annotations.json"
        save_coco(dataset, ann_path)
        created.append(ann_path)
        man_path = out_dir / "manifest.json"
        man_path.write_text(_canonical_json(manifest), encoding="utf-8")
        created.append(man_path)
    except Exception:
        for path in reversed(created):
            if path.is_dir():
                shutil.rmtree(path, ignore_errors=True)
            else:
                path.unlink(missing_ok=True)
        raise
    total_objects = sum(len(im.objects) for im in dataset.images)
    _log(
        f"synth: {written} images, {total_objects} annotations "
        f"in {time.monotonic() - started:.1f}s -> {out_dir}"
    )
    return 0


# --- augment preview ---------------------------------------------------------

def cmd_augment_preview(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seed
    out_dir = _resolve_out(args, cfg) / "preview"
    dataset = load_coco(cfg.path("dataset_json", required=True))
    image_dir = cfg.path("image_dir", required=True)
    pipeline = build_pipeline(cfg.augment)
    picks = dataset.images[: args.n]
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for record in picks:
        image = load_image(image_dir / record.file_name, color_mode=record.color_mode)
        aug, objects = apply_pipeline(
            pipeline, image, record.objects, derive_seed(seed, "augment", record.id)
        )
        save_image(aug, out_dir / record.file_name)
        records.append(
            ImageRecord(
                id=record.id, file_name=record.file_name,
                width=aug.shape[1], height=aug.shape[0],
                color_mode="gray" if aug.ndim == 2 else "rgb",
                objects=tuple(objects), split=record.split,
            )
        )
    preview = Dataset(
        categories=dataset.categories,
        images=tuple(records),
        provenance={
            "generator": "pastekit-augment-preview",
            "pipeline": pipeline.name,
            "config_hash": cfg.config_hash(),
        },
    )
    save_coco(preview, out_dir / "annotations.json")
    _log(f"augment-preview: {len(records)} samples ({pipeline.name}) -> {out_dir}")
    return 0


# --- eval --------------------------------------------------------------------

def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    out_dir = _resolve_out(args, cfg)
    dataset = load_coco(args.gt)
    detections = load_results(args.results)
    e = cfg.eval
    report = evalkit.evaluate(
        dataset, detections,
        iou_thresh=e.iou_thresh, scheme=e.scheme, fp_min_conf=e.fp_min_conf,
        confusion_min_conf=e.confusion_min_conf, confusion_iou=e.confusion_iou,
        subset_tags=e.subset_tags,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = report.as_dict()
    doc["config_hash"] = cfg.config_hash()
    (out_dir / "report.json").write_text(_canonical_json(doc), encoding="utf-8")
    text = evalkit.report_text(report)
    (out_dir / "report.txt").write_text(text, encoding="utf-8")
    (out_dir / "confusion.csv").write_text(
        evalkit.confusion_csv(report), encoding="utf-8"
    )
    sys.stdout.write(text)
    _log(f"eval: report -> {out_dir}")
    return 0


# --- stats -------------------------------------------------------------------

def cmd_stats(args) -> int:
    cfg = load_config(args.config)
    out_dir = _resolve_out(args, cfg)
    dataset = load_coco(args.gt)
    by_id = {c.id: c.name for c in dataset.categories}
    lines = ["split,category,count,frequency"]
    for split in dataset.splits():
        images = dataset.images_by_split(split)
        counts: dict[int, int] = {}
        for im in images:
            for obj in im.objects:
                counts[obj.category_id] = counts.get(obj.category_id, 0) + 1
        total = sum(counts.values())
        if total == 0:
            continue
        for cid in sorted(counts):
            lines.append(
                f"{split},{by_id[cid]},{counts[cid]},{counts[cid] / total:.6f}"
            )
    csv_text = "\n".join(lines) + "\n"
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "stats.csv").write_text(csv_text, encoding="utf-8")
    sys.stdout.write(csv_text)
    _log(f"stats: {len(lines) - 1} rows -> {out_dir / 'stats.csv'}")
    return 0


# --- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pastekit",
        description="Copy-Paste dataset synthesis and detection evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=False, jobs=False):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out", help="output directory (overrides PASTEKIT_OUT)")
        if seed:
            p.add_argument("--seed", type=int, default=None, help="master seed override")
        if jobs:
            p.add_argument("--jobs", type=int, default=1, help="parallel workers")

    p = sub.add_parser("annotate", help="derive COCO annotations from image+mask pairs")
    common(p)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("synth", help="generate the synthetic training set")
    common(p, seed=True, jobs=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("augment-preview", help="write augmented samples for audit")
    common(p, seed=True)
    p.add_argument("--n", type=int, default=8, help="number of samples")
    p.set_defaults(func=cmd_augment_preview)

    p = sub.add_parser("eval", help="evaluate COCO results against ground truth")
    common(p)
    p.add_argument("--gt", required=True, help="COCO ground-truth JSON")
    p.add_argument("--results", required=True, help="COCO results JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="class distribution per split")
    common(p)
    p.add_argument("--gt", required=True, help="COCO ground-truth JSON")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CocoFormatError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure, not a user mistake
        print(f"failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
