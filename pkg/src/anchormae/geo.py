"""Geographic encoding: quadtree mesh over the globe, corner bit codes, and
ground-resolution-scaled sinusoidal positional encodings.

The mesh is a quadtree over a 512 deg x 512 deg root cell spanning
[-256, +256] on both axes, so every valid Earth coordinate sits strictly
inside. Cell side halves per level; a level's nominal ground size is its
degree size times 111320 m/deg at the equator. An image's ground sample
distance selects the mesh level whose cell size is nearest, and its four
corner coordinates are encoded as fixed-width binary row/column indices at
that level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument

GRID_ORIGIN_DEG = -256.0
ROOT_CELL_DEG = 512.0
METERS_PER_DEGREE = 111320.0
MAX_LEVEL = 30
CORNER_ORDER = ("TL", "TR", "BL", "BR")
# 4 corners x (row bits + col bits), each at most MAX_LEVEL long
PADDED_BITS = 8 * MAX_LEVEL

CornerPair = tuple[float, float]


@dataclass(frozen=True)
class GeoMetadata:
    """Ground sample distance plus the four (lat, lon) corner coordinates."""

    gsd_m: float
    corners: dict[str, CornerPair]

    def __post_init__(self):
        if not (math.isfinite(self.gsd_m) and self.gsd_m > 0):
            raise InvalidArgument(f"gsd_m must be a positive finite number, got {self.gsd_m}")
        if set(self.corners) != set(CORNER_ORDER):
            raise InvalidArgument(f"corners must be keyed {CORNER_ORDER}, got {sorted(self.corners)}")
        for key, (lat, lon) in self.corners.items():
            _check_coords(lat, lon, where=key)

    def center(self) -> CornerPair:
        lats = [self.corners[c][0] for c in CORNER_ORDER]
        lons = [self.corners[c][1] for c in CORNER_ORDER]
        return sum(lats) / 4.0, sum(lons) / 4.0


@dataclass(frozen=True)
class MeshLevel:
    level: int
    cell_deg: float = field(init=False)
    cell_m_equator: float = field(init=False)

    def __post_init__(self):
        if not 0 <= self.level <= MAX_LEVEL:
            raise InvalidArgument(f"mesh level must be in [0, {MAX_LEVEL}], got {self.level}")
        object.__setattr__(self, "cell_deg", ROOT_CELL_DEG / 2**self.level)
        object.__setattr__(self, "cell_m_equator", self.cell_deg * METERS_PER_DEGREE)


@dataclass(frozen=True)
class CornerCode:
    level: int
    row_bits: str
    col_bits: str

    def __post_init__(self):
        for bits in (self.row_bits, self.col_bits):
            if len(bits) != self.level or bits.strip("01"):
                raise InvalidArgument(
                    f"bit strings must be exactly {self.level} 0/1 chars, got {bits!r}")


@dataclass(frozen=True)
class PosencConfig:
    """Embedding width, reference ground resolution, and sinusoid base."""

    embed_dim: int
    reference_gsd: float = 1.0
    base: float = 10000.0

    def __post_init__(self):
        if self.embed_dim <= 0 or self.embed_dim % 2 != 0:
            raise InvalidArgument(f"embed_dim must be a positive even integer, got {self.embed_dim}")
        if self.reference_gsd <= 0:
            raise InvalidArgument(f"reference_gsd must be positive, got {self.reference_gsd}")
        if self.base <= 0:
            raise InvalidArgument(f"base must be positive, got {self.base}")


def _check_coords(lat: float, lon: float, where: str = "coordinate") -> None:
    if not (math.isfinite(lat) and math.isfinite(lon)):
        raise InvalidArgument(f"{where}: non-finite coordinate ({lat}, {lon})")
    if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
        raise InvalidArgument(f"{where}: ({lat}, {lon}) outside [-90,90]x[-180,180]")


def level_for_gsd(gsd_m: float) -> MeshLevel:
    """The mesh level whose equatorial cell size is nearest to ``gsd_m``.

    Ties break toward the smaller (coarser) level.
    """
    if not (isinstance(gsd_m, (int, float)) and math.isfinite(gsd_m) and gsd_m > 0):
        raise InvalidArgument(f"gsd_m must be a positive finite number, got {gsd_m}")
    best = min(range(MAX_LEVEL + 1),
               key=lambda k: (abs(ROOT_CELL_DEG * METERS_PER_DEGREE / 2**k - gsd_m), k))
    return MeshLevel(best)


def encode_corner(lat_deg: float, lon_deg: float, level: int) -> CornerCode:
    """Binary row/column indices of the level-``level`` cell containing a corner."""
    _check_coords(lat_deg, lon_deg)
    if not 0 <= level <= MAX_LEVEL:
        raise InvalidArgument(f"level must be in [0, {MAX_LEVEL}], got {level}")
    if level == 0:
        return CornerCode(0, "", "")
    cell = ROOT_CELL_DEG / 2**level
    row = int((lat_deg - GRID_ORIGIN_DEG) // cell)
    col = int((lon_deg - GRID_ORIGIN_DEG) // cell)
    return CornerCode(level, format(row, f"0{level}b"), format(col, f"0{level}b"))


def decode_cell(code: CornerCode) -> tuple[float, float, float, float]:
    """(lat_min, lat_max, lon_min, lon_max) of the cell a code names."""
    cell = ROOT_CELL_DEG / 2**code.level
    row = int(code.row_bits, 2) if code.row_bits else 0
    col = int(code.col_bits, 2) if code.col_bits else 0
    lat0 = GRID_ORIGIN_DEG + row * cell
    lon0 = GRID_ORIGIN_DEG + col * cell
    return lat0, lat0 + cell, lon0, lon0 + cell


def corner_bit_vector(meta: GeoMetadata) -> np.ndarray:
    """Concatenated corner codes (TL,TR,BL,BR; row bits then col bits), zero-padded
    to the fixed level-30 width of 240."""
    level = level_for_gsd(meta.gsd_m).level
    bits: list[int] = []
    for name in CORNER_ORDER:
        lat, lon = meta.corners[name]
        code = encode_corner(lat, lon, level)
        bits.extend(int(b) for b in code.row_bits + code.col_bits)
    vec = np.zeros(PADDED_BITS, dtype=np.float64)
    vec[: len(bits)] = bits
    return vec


def geo_embedding(meta: GeoMetadata, cfg: PosencConfig, projection: np.ndarray) -> np.ndarray:
    """Project the padded corner-bit vector to ``embed_dim`` with a linear map.

    ``projection`` holds the learnable weights, shape (240, embed_dim); the
    result is deterministic given metadata and weights.
    """
    projection = np.asarray(projection, dtype=np.float64)
    if projection.shape != (PADDED_BITS, cfg.embed_dim):
        raise InvalidArgument(
            f"projection shape {projection.shape} != ({PADDED_BITS}, {cfg.embed_dim})")
    return corner_bit_vector(meta) @ projection


def scaled_posenc(grid_h: int, grid_w: int, gsd_m: float, cfg: PosencConfig) -> np.ndarray:
    """Sinusoidal positional table of shape (grid_h*grid_w, embed_dim), row-major.

    The first half of the channels encodes the x (column) position, the second
    half the y (row) position. Within each half, channel pair (2i, 2i+1) holds
    sin and cos of (reference_gsd / gsd_m) * pos / base**(2i / embed_dim), so a
    finer image advances through the sinusoid proportionally to the ground
    distance it spans.
    """
    if grid_h < 1 or grid_w < 1:
        raise InvalidArgument(f"grid dims must be >= 1, got {grid_h}x{grid_w}")
    if cfg.embed_dim % 2 != 0:
        raise InvalidArgument(f"embed_dim must be even, got {cfg.embed_dim}")
    if cfg.embed_dim % 4 != 0:
        raise InvalidArgument(
            f"embed_dim must be a multiple of 4 to pair sin/cos on both axes, got {cfg.embed_dim}")
    if not (math.isfinite(gsd_m) and gsd_m > 0):
        raise InvalidArgument(f"gsd_m must be a positive finite number, got {gsd_m}")

    half = cfg.embed_dim // 2
    pairs = half // 2
    freqs = 1.0 / cfg.base ** (2.0 * np.arange(pairs) / cfg.embed_dim)
    scale = cfg.reference_gsd / gsd_m

    def axis_table(pos: np.ndarray) -> np.ndarray:
        args = scale * pos[:, None] * freqs[None, :]
        out = np.empty((pos.size, half), dtype=np.float64)
        out[:, 0::2] = np.sin(args)
        out[:, 1::2] = np.cos(args)
        return out

    ys, xs = np.divmod(np.arange(grid_h * grid_w), grid_w)
    return np.concatenate([axis_table(xs.astype(np.float64)),
                           axis_table(ys.astype(np.float64))], axis=1)


def one_hot_geo_encoding(meta: GeoMetadata, bins: int) -> np.ndarray:
    """One-hot of the image center on a bins x bins lat/lon grid (ablation baseline)."""
    if bins < 1:
        raise InvalidArgument(f"bins must be >= 1, got {bins}")
    lat, lon = meta.center()
    _check_coords(lat, lon, where="center")
    row = min(int((lat + 90.0) / 180.0 * bins), bins - 1)
    col = min(int((lon + 180.0) / 360.0 * bins), bins - 1)
    vec = np.zeros(bins * bins, dtype=np.float64)
    vec[row * bins + col] = 1.0
    return vec
