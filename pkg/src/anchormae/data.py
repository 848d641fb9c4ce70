"""Dataset assembly: in-memory records, on-disk layout, loading.

A dataset is a list of locations, each with a kind, a land-cover label
(majority class of the generator's label map), and raw float32 images. Raw
pixels are normalized on access so the in-memory and on-disk paths see
identical bits. On disk: one raster container + sidecar per image,
``sets.json`` describing compositions, and ``labels.json`` for the probe.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .imageset import (GeneratorConfig, Image, ImageMeta, ImageSet, SetKind,
                       composition_for, generate_location, get_source, normalize, render)
from .raster import ingest_raster, meta_from_sidecar, read_raster, write_raster

DEFAULT_KINDS = (SetKind.S2L8_CITY, SetKind.S2L8_RESERVE, SetKind.GFS2)


@dataclass
class LocationRecord:
    location_id: int
    kind: SetKind
    label: int
    center: tuple[float, float]
    raw_images: list[tuple[np.ndarray, ImageMeta]]  # float32 raw DN

    def image_set(self) -> ImageSet:
        images = [Image(meta, normalize(raw.astype(np.float64), get_source(meta.source)))
                  for raw, meta in self.raw_images]
        return ImageSet(location_id=self.location_id, kind=self.kind, images=images)

    def images(self) -> list[Image]:
        return self.image_set().images


@dataclass
class Dataset:
    records: list[LocationRecord]
    input_size: int

    def by_kinds(self, kinds) -> list[LocationRecord]:
        wanted = {SetKind(k) for k in kinds}
        return [r for r in self.records if r.kind in wanted]

    def labels(self) -> dict[int, int]:
        return {r.location_id: r.label for r in self.records}

    def __len__(self) -> int:
        return len(self.records)


def build_dataset(cfg: GeneratorConfig, n_locations: int,
                  kinds=DEFAULT_KINDS) -> Dataset:
    """Generate ``n_locations`` synthetic locations, cycling through ``kinds``."""
    kinds = [SetKind(k) for k in kinds]
    if not kinds:
        raise ConfigError("at least one set kind is required")
    records = []
    for loc_id in range(n_locations):
        kind = kinds[loc_id % len(kinds)]
        field = generate_location(loc_id, cfg)
        raws = []
        for source, t in composition_for(loc_id, kind):
            raw, meta = render(field, source, t)
            raws.append((raw.astype(np.float32), meta))
        records.append(LocationRecord(location_id=loc_id, kind=kind,
                                      label=field.majority_label(),
                                      center=field.center, raw_images=raws))
    return Dataset(records=records, input_size=cfg.input_size)


def write_dataset(dataset: Dataset, out_dir, generator_cfg: GeneratorConfig | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sets = []
    for rec in dataset.records:
        files = []
        for raw, meta in rec.raw_images:
            name = f"loc{rec.location_id:05d}_{meta.source}_{meta.time}.a2rs"
            write_raster(out / name, raw, meta)
            files.append(name)
        sets.append({"location_id": rec.location_id, "kind": rec.kind.value,
                     "label": rec.label, "center": list(rec.center), "files": files})
    manifest = {"input_size": dataset.input_size, "sets": sets}
    if generator_cfg is not None:
        manifest["generator"] = dataclasses.asdict(generator_cfg)
    (out / "sets.json").write_text(json.dumps(manifest, indent=1))
    (out / "labels.json").write_text(
        json.dumps({str(r.location_id): r.label for r in dataset.records}, indent=1))


def load_dataset(data_dir) -> Dataset:
    root = Path(data_dir)
    manifest_path = root / "sets.json"
    if not manifest_path.exists():
        raise ConfigError(f"{root}: no sets.json manifest (run generate-data first)")
    manifest = json.loads(manifest_path.read_text())
    records = []
    for entry in manifest["sets"]:
        raws = []
        for name in entry["files"]:
            raw, sidecar = read_raster(root / name)
            raws.append((raw, meta_from_sidecar(sidecar)))
        records.append(LocationRecord(
            location_id=entry["location_id"], kind=SetKind(entry["kind"]),
            label=entry["label"], center=tuple(entry.get("center", (0.0, 0.0))),
            raw_images=raws))
    return Dataset(records=records, input_size=manifest["input_size"])


def probe_images(dataset: Dataset, multiband: bool = False) -> list[tuple[Image, int]]:
    """Labeled probe inputs: every image of every location, tagged with its
    location's land-cover label. 3-band selection keeps the fast ``encode``
    path unless ``multiband`` asks for the full raw bands."""
    out = []
    for rec in dataset.records:
        for img in rec.images():
            out.append((img if multiband else img.select_bands((0, 1, 2)), rec.label))
    return out


# importing the ingest symbol here keeps the one-stop data API complete
__all__ = ["Dataset", "LocationRecord", "build_dataset", "write_dataset",
           "load_dataset", "probe_images", "ingest_raster", "DEFAULT_KINDS"]
