"""Binary raster container with a JSON sidecar.

Layout: magic ``A2RS`` (4 bytes), version u16, H u32, W u32, C u16, dtype tag
u8 (0 = little-endian float32), then C*H*W row-major band data. The sidecar
``<name>.meta.json`` carries {source_id, time, gsd_m, corners, location_id}.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import BadMagic, BandCountMismatch, RasterError, TruncatedPayload
from .geo import CORNER_ORDER, GeoMetadata
from .imageset import Image, ImageMeta, get_source, normalize

MAGIC = b"A2RS"
VERSION = 1
DTYPE_FLOAT32_LE = 0
_HEADER = struct.Struct("<4sHIIHB")


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def write_raster(path, raw: np.ndarray, meta: ImageMeta) -> None:
    """Write raw (H, W, C) band data as float32 plus the JSON sidecar."""
    path = Path(path)
    raw = np.asarray(raw)
    if raw.ndim != 3:
        raise RasterError(f"raw image must be (H, W, C), got shape {raw.shape}")
    h, w, c = raw.shape
    bands = raw.transpose(2, 0, 1).astype("<f4")  # C x H x W row-major
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, h, w, c, DTYPE_FLOAT32_LE))
        fh.write(bands.tobytes(order="C"))
    sidecar = {
        "source_id": meta.source,
        "time": meta.time,
        "gsd_m": meta.geo.gsd_m,
        "corners": {k: list(meta.geo.corners[k]) for k in CORNER_ORDER},
        "location_id": meta.location_id,
    }
    sidecar_path(path).write_text(json.dumps(sidecar, indent=1))


def read_raster(path) -> tuple[np.ndarray, dict]:
    """Parse the container and sidecar; returns raw float32 (H, W, C) and sidecar dict."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise TruncatedPayload(f"{path}: {len(blob)} bytes is shorter than the header")
    magic, version, h, w, c, dtype = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise BadMagic(f"{path}: magic {magic!r} != {MAGIC!r}")
    if version != VERSION:
        raise RasterError(f"{path}: unsupported version {version}")
    if dtype != DTYPE_FLOAT32_LE:
        raise RasterError(f"{path}: unsupported dtype tag {dtype}")
    expected = c * h * w * 4
    payload = blob[_HEADER.size:]
    if len(payload) < expected:
        raise TruncatedPayload(
            f"{path}: payload {len(payload)} bytes < declared {expected} ({c}x{h}x{w} float32)")
    bands = np.frombuffer(payload[:expected], dtype="<f4").reshape(c, h, w)
    side = sidecar_path(path)
    if not side.exists():
        raise RasterError(f"{path}: missing sidecar {side.name}")
    sidecar = json.loads(side.read_text())
    return bands.transpose(1, 2, 0), sidecar


def meta_from_sidecar(sidecar: dict) -> ImageMeta:
    try:
        geo = GeoMetadata(gsd_m=sidecar["gsd_m"],
                          corners={k: tuple(v) for k, v in sidecar["corners"].items()})
        return ImageMeta(source=sidecar["source_id"], time=sidecar["time"],
                         geo=geo, location_id=sidecar["location_id"])
    except KeyError as missing:
        raise RasterError(f"sidecar missing key {missing}") from None


def ingest_raster(path) -> Image:
    """Read, validate against the sidecar's source, and normalize."""
    raw, sidecar = read_raster(path)
    meta = meta_from_sidecar(sidecar)
    source = get_source(meta.source)
    if raw.shape[2] != source.n_bands:
        raise BandCountMismatch(
            f"{path}: payload has {raw.shape[2]} bands but {source.source_id} has {source.n_bands}")
    return Image(meta, normalize(raw, source))
