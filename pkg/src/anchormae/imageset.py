"""Image/image-set types and the synthetic multi-source scene generator.

A location is a band-limited random field (smooth sinusoids) overlaid with a
piecewise-constant land-cover label map. Rendering a source applies a fixed
per-source spectral mixing of the latent channels, a seasonal modulation
keyed by the acquisition time tag, a box downsample matching the source's
resolution ratio, sensor noise, and a resample to the common input size;
pixel values are then scaled into the source's raw digital-number range so
that per-band normalization with the published statistics recovers roughly
unit-scale signals.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .geo import GeoMetadata

GOLDEN = 0.618033988749895  # irrational stride for time-tag phase


@dataclass(frozen=True)
class SourceSpec:
    """One satellite-like source: band count, ground resolution, band statistics."""

    source_id: str
    n_bands: int
    gsd_m: float
    band_means: tuple[float, ...]
    band_stds: tuple[float, ...]
    band_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.n_bands < 3:
            raise InvalidArgument(f"{self.source_id}: needs >= 3 bands for 3-band selection")
        if len(self.band_means) != self.n_bands or len(self.band_stds) != self.n_bands:
            raise InvalidArgument(f"{self.source_id}: statistics length != n_bands")
        if any(s <= 0 for s in self.band_stds):
            raise InvalidArgument(f"{self.source_id}: band stds must all be positive")


S2LIKE = SourceSpec(
    "s2like", 12, 10.0,
    band_means=(1161.52, 1399.38, 1455.72, 2761.06, 1815.21, 2465.56,
                2722.34, 2867.82, 2336.82, 1742.15, 1069.34, 3128.77),
    band_stds=(523.98, 536.77, 625.56, 771.05, 616.86, 671.86,
               727.05, 756.91, 683.80, 629.27, 465.96, 848.05),
    band_names=("B1", "B2", "B3", "B4", "B5", "B6", "B7", "B8", "B8a", "B9", "B11", "B12"),
)

L8LIKE = SourceSpec(
    "l8like", 7, 30.0,
    band_means=(229.17, 277.28, 488.15, 411.19, 2104.24, 1275.84, 701.26),
    band_stds=(262.79, 266.60, 277.24, 305.21, 612.09, 452.19, 325.94),
    band_names=("B1", "B2", "B3", "B4", "B5", "B6", "B7"),
)

GF1LIKE = SourceSpec(
    "gf1like", 4, 2.0,
    band_means=(96.11, 98.68, 99.79, 99.67),
    band_stds=(37.65, 36.20, 35.67, 38.72),
    band_names=("B1", "B2", "B3", "B4"),
)

GF2LIKE = SourceSpec(
    "gf2like", 4, 0.8,
    band_means=(78.67, 81.17, 85.88, 86.31),
    band_stds=(33.51, 33.19, 33.76, 36.01),
    band_names=("B1", "B2", "B3", "B4"),
)

SOURCES: dict[str, SourceSpec] = {s.source_id: s for s in (S2LIKE, L8LIKE, GF1LIKE, GF2LIKE)}


def get_source(source_id: str) -> SourceSpec:
    try:
        return SOURCES[source_id]
    except KeyError:
        raise InvalidArgument(f"unknown source {source_id!r}; known: {sorted(SOURCES)}") from None


class SetKind(str, enum.Enum):
    S2L8_CITY = "s2l8_city"
    S2L8_RESERVE = "s2l8_reserve"
    GFS2 = "gfs2"


CITY_TIMES = (2021, 2022, 2023)
RESERVE_TIMES = (20201, 20202)  # growth / non-growth halves of 2020
GFS2_TIMES = (2022, 2023)
ALL_TIME_TAGS = frozenset(CITY_TIMES) | frozenset(RESERVE_TIMES) | frozenset(GFS2_TIMES)


@dataclass(frozen=True)
class ImageMeta:
    source: str
    time: int
    geo: GeoMetadata
    location_id: int

    def __post_init__(self):
        get_source(self.source)
        if self.time not in ALL_TIME_TAGS:
            raise InvalidArgument(f"time tag {self.time} outside the generator's range")


@dataclass
class Image:
    """A raster with per-band-normalized pixels, (H, W, C) row-major."""

    meta: ImageMeta
    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.ndim != 3:
            raise InvalidArgument(f"pixels must be (H, W, C), got shape {self.pixels.shape}")
        if self.pixels.shape[0] != self.pixels.shape[1]:
            raise InvalidArgument(f"expected square image, got {self.pixels.shape}")

    @property
    def n_bands(self) -> int:
        return self.pixels.shape[2]

    def select_bands(self, bands) -> "Image":
        return Image(self.meta, self.pixels[:, :, list(bands)])


COMPOSITIONS: dict[SetKind, tuple[tuple[str, int], ...]] = {
    SetKind.S2L8_CITY: tuple(("s2like", t) for t in CITY_TIMES)
    + tuple(("l8like", t) for t in CITY_TIMES),
    SetKind.S2L8_RESERVE: tuple(("s2like", t) for t in RESERVE_TIMES)
    + tuple(("l8like", t) for t in RESERVE_TIMES),
    # the Gaofen slot is filled with gf1like or gf2like per location
    SetKind.GFS2: (("gaofen", GFS2_TIMES[0]), ("s2like", GFS2_TIMES[0]), ("s2like", GFS2_TIMES[1])),
}


@dataclass
class ImageSet:
    location_id: int
    kind: SetKind
    images: list[Image]

    def __post_init__(self):
        expected = COMPOSITIONS[self.kind]
        if len(self.images) != len(expected):
            raise InvalidArgument(
                f"{self.kind.value} set needs {len(expected)} images, got {len(self.images)}")
        got = [(img.meta.source, img.meta.time) for img in self.images]
        want = [("gf1like" if src == "gaofen" else src, t) for src, t in expected]
        for (src, t), (wsrc, wt) in zip(got, want):
            ok_src = src == wsrc or (wsrc == "gf1like" and src in ("gf1like", "gf2like"))
            if not (ok_src and t == wt):
                raise InvalidArgument(
                    f"{self.kind.value} composition mismatch: got {got}")
        if len({src for src, _ in got}) < 2:
            raise InvalidArgument("image set must span at least 2 sources")


@dataclass
class TrainingInput:
    """Exactly 3 images from one set, spanning >= 2 sources and >= 2 times."""

    images: list[Image]
    set_ref: int
    kind: SetKind

    def __post_init__(self):
        if len(self.images) != 3:
            raise InvalidArgument(f"training input needs exactly 3 images, got {len(self.images)}")
        sources = {img.meta.source for img in self.images}
        times = {img.meta.time for img in self.images}
        if len(sources) < 2 or len(times) < 2:
            raise InvalidArgument(
                f"training input needs >=2 sources and >=2 times, got {sources} / {times}")

    @property
    def metas(self) -> list[ImageMeta]:
        return [img.meta for img in self.images]


# ---------------------------------------------------------------------------
# synthetic generator


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 0
    input_size: int = 64
    latent_channels: int = 3
    waves_per_channel: int = 4
    n_classes: int = 4
    n_label_sites: int = 6
    min_cycles: float = 0.5
    max_cycles: float = 3.0
    class_contrast: float = 0.9
    class_texture: float = 0.6
    texture_cycles: tuple[float, ...] = (6.0, 11.0, 17.0, 24.0)
    seasonal_amp: float = 0.25
    noise_amp: float = 0.08
    max_sim_ratio: int = 16  # cap on the simulated resolution ratio (true ratios reach 37.5x)

    def __post_init__(self):
        if self.input_size < 8 or self.input_size % 2:
            raise InvalidArgument(f"input_size must be even and >= 8, got {self.input_size}")
        if self.n_classes < 1:
            raise InvalidArgument("n_classes must be >= 1")
        if self.max_sim_ratio < 1:
            raise InvalidArgument("max_sim_ratio must be >= 1")

    def downsample_factor(self, source: SourceSpec) -> int:
        finest = min(s.gsd_m for s in SOURCES.values())
        return max(1, min(round(source.gsd_m / finest), self.max_sim_ratio))

    @property
    def field_size(self) -> int:
        factor = max(self.downsample_factor(s) for s in SOURCES.values())
        return self.input_size * factor


@dataclass
class LatentField:
    seed: int
    cfg: GeneratorConfig
    channels: np.ndarray  # (Q, S, S) float64
    labels: np.ndarray    # (S, S) int
    center: tuple[float, float]

    def native_channels(self, factor: int) -> np.ndarray:
        """Box-downsampled latent, memoized per factor (pure function of channels)."""
        cache = self.__dict__.setdefault("_native_cache", {})
        if factor not in cache:
            cache[factor] = _box_downsample(self.channels, factor)
        return cache[factor]

    def majority_label(self) -> int:
        return int(np.bincount(self.labels.reshape(-1)).argmax())

    def label_grid(self, grid_h: int, grid_w: int) -> np.ndarray:
        """Majority label per block on a grid aligned with a rendered image's patches."""
        s = self.labels.shape[0]
        bh, bw = s // grid_h, s // grid_w
        trimmed = self.labels[: grid_h * bh, : grid_w * bw]
        blocks = trimmed.reshape(grid_h, bh, grid_w, bw).transpose(0, 2, 1, 3)
        out = np.empty((grid_h, grid_w), dtype=np.int64)
        for i in range(grid_h):
            for j in range(grid_w):
                out[i, j] = np.bincount(blocks[i, j].reshape(-1)).argmax()
        return out


def _class_palette(cfg: GeneratorConfig):
    """Dataset-wide per-class spectral offsets and texture frequencies."""
    rng = np.random.default_rng([cfg.seed, 0xC1A55])
    offsets = rng.normal(size=(cfg.n_classes, cfg.latent_channels)) * cfg.class_contrast
    cycles = np.array([cfg.texture_cycles[c % len(cfg.texture_cycles)]
                       for c in range(cfg.n_classes)])
    angles = rng.uniform(0, math.pi, size=cfg.n_classes)
    phases = rng.uniform(0, 2 * math.pi, size=cfg.n_classes)
    return offsets, cycles, angles, phases


def generate_location(seed: int, cfg: GeneratorConfig) -> LatentField:
    """Deterministic latent field for one location, keyed by ``seed``."""
    s = cfg.field_size
    if s < cfg.input_size * max(cfg.downsample_factor(src) for src in SOURCES.values()):
        raise InvalidArgument("field size smaller than input_size * max resolution ratio")
    rng = np.random.default_rng([cfg.seed, 1, seed])
    ys, xs = np.meshgrid(np.arange(s), np.arange(s), indexing="ij")

    # piecewise-constant land cover: nearest of a few random sites
    sites = rng.uniform(0, s, size=(cfg.n_label_sites, 2))
    site_class = rng.integers(0, cfg.n_classes, size=cfg.n_label_sites)
    d2 = (ys[None] - sites[:, 0, None, None]) ** 2 + (xs[None] - sites[:, 1, None, None]) ** 2
    labels = site_class[np.argmin(d2, axis=0)]

    offsets, cycles, angles, phases = _class_palette(cfg)
    channels = np.empty((cfg.latent_channels, s, s))
    for q in range(cfg.latent_channels):
        wave = np.zeros((s, s))
        for _ in range(cfg.waves_per_channel):
            c = rng.uniform(cfg.min_cycles, cfg.max_cycles)
            theta = rng.uniform(0, 2 * math.pi)
            phi = rng.uniform(0, 2 * math.pi)
            wave += rng.uniform(0.5, 1.0) * np.sin(
                2 * math.pi * c * (xs * math.cos(theta) + ys * math.sin(theta)) / s + phi)
        wave = (wave - wave.mean()) / max(wave.std(), 1e-9)
        channels[q] = wave + offsets[labels, q]

    if cfg.class_texture > 0 and cfg.n_classes > 1:
        proj = (xs * np.cos(angles[labels]) + ys * np.sin(angles[labels])) / s
        texture = cfg.class_texture * np.sin(2 * math.pi * cycles[labels] * proj + phases[labels])
        channels += texture[None]

    center = (float(rng.uniform(-60, 60)), float(rng.uniform(-170, 170)))
    return LatentField(seed=seed, cfg=cfg, channels=channels, labels=labels, center=center)


def _mixing_matrix(source: SourceSpec, n_latent: int) -> np.ndarray:
    rng = np.random.default_rng([0x5EED, int.from_bytes(source.source_id.encode(), "little")])
    mix = 0.25 + np.abs(rng.normal(size=(source.n_bands, n_latent)))
    return mix / np.linalg.norm(mix, axis=1, keepdims=True)


def _seasonal_factors(source: SourceSpec, time: int, amp: float) -> np.ndarray:
    rng = np.random.default_rng([0x5EA5, int.from_bytes(source.source_id.encode(), "little")])
    phase = rng.uniform(0, 2 * math.pi, size=source.n_bands)
    return 1.0 + amp * np.sin(2 * math.pi * GOLDEN * time + phase)


def _box_downsample(arr: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return arr
    h, w = arr.shape[-2:]
    nh, nw = h // factor, w // factor
    trimmed = arr[..., : nh * factor, : nw * factor]
    shape = trimmed.shape[:-2] + (nh, factor, nw, factor)
    return trimmed.reshape(shape).mean(axis=(-3, -1))


def _resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = arr.shape[-2:]
    if (h, w) == (out_h, out_w):
        return arr
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    top = arr[..., y0[:, None], x0[None, :]] * (1 - wx) + arr[..., y0[:, None], x1[None, :]] * wx
    bot = arr[..., y1[:, None], x0[None, :]] * (1 - wx) + arr[..., y1[:, None], x1[None, :]] * wx
    return top * (1 - wy) + bot * wy


def location_geo(field: LatentField, source: SourceSpec) -> GeoMetadata:
    lat, lon = field.center
    half = field.cfg.input_size * source.gsd_m / 111320.0 / 2.0
    return GeoMetadata(gsd_m=source.gsd_m, corners={
        "TL": (lat + half, lon - half),
        "TR": (lat + half, lon + half),
        "BL": (lat - half, lon - half),
        "BR": (lat - half, lon + half),
    })


def render(field: LatentField, source: SourceSpec, time: int) -> tuple[np.ndarray, ImageMeta]:
    """Raw (H, W, C) digital numbers plus metadata for one source/time view."""
    cfg = field.cfg
    factor = cfg.downsample_factor(source)
    native = field.native_channels(factor)
    mixed = np.einsum("bq,qhw->bhw", _mixing_matrix(source, cfg.latent_channels), native)
    mixed *= _seasonal_factors(source, time, cfg.seasonal_amp)[:, None, None]
    if cfg.noise_amp > 0:
        noise_rng = np.random.default_rng(
            [cfg.seed, 2, field.seed, int.from_bytes(source.source_id.encode(), "little"), time])
        mixed += cfg.noise_amp * noise_rng.standard_normal(mixed.shape)
    signal = _resize_bilinear(mixed, cfg.input_size, cfg.input_size)
    means = np.asarray(source.band_means)[:, None, None]
    stds = np.asarray(source.band_stds)[:, None, None]
    raw = (means + stds * signal).transpose(1, 2, 0)  # (H, W, C)
    meta = ImageMeta(source=source.source_id, time=time,
                     geo=location_geo(field, source), location_id=field.seed)
    return raw, meta


def normalize(raw: np.ndarray, source: SourceSpec) -> np.ndarray:
    """Per-band (x - mean) / std using the source's published statistics."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 3 or raw.shape[2] != source.n_bands:
        raise InvalidArgument(
            f"raw image has shape {raw.shape}, expected (H, W, {source.n_bands}) for {source.source_id}")
    stds = np.asarray(source.band_stds)
    if np.any(stds <= 0):
        raise InvalidArgument(f"{source.source_id}: non-positive band std")
    return (raw - np.asarray(source.band_means)) / stds


def denormalize(pixels: np.ndarray, source: SourceSpec) -> np.ndarray:
    return np.asarray(pixels) * np.asarray(source.band_stds) + np.asarray(source.band_means)


def composition_for(location_id: int, kind: SetKind) -> list[tuple[SourceSpec, int]]:
    out = []
    for src, t in COMPOSITIONS[kind]:
        if src == "gaofen":
            src = "gf1like" if location_id % 2 == 0 else "gf2like"
        out.append((get_source(src), t))
    return out


def assemble_set(location_id: int, kind: SetKind, cfg: GeneratorConfig,
                 field: LatentField | None = None) -> ImageSet:
    """Render and normalize the full composition mandated by ``kind``."""
    kind = SetKind(kind)
    if field is None:
        field = generate_location(location_id, cfg)
    images = []
    for source, t in composition_for(location_id, kind):
        raw, meta = render(field, source, t)
        images.append(Image(meta, normalize(raw, source)))
    return ImageSet(location_id=location_id, kind=kind, images=images)


def sample_training_input(image_set: ImageSet, rng: np.random.Generator) -> TrainingInput:
    """Uniform 3-image subsets, rejecting until >=2 sources and >=2 times hold."""
    n = len(image_set.images)
    if n < 3:
        raise InvalidArgument(f"image set has {n} < 3 images")
    while True:
        picked = sorted(int(i) for i in rng.choice(n, size=3, replace=False))
        images = [image_set.images[i] for i in picked]
        sources = {img.meta.source for img in images}
        times = {img.meta.time for img in images}
        if len(sources) >= 2 and len(times) >= 2:
            return TrainingInput(images=images, set_ref=image_set.location_id,
                                 kind=image_set.kind)


def valid_triples(image_set: ImageSet) -> list[tuple[int, int, int]]:
    """All index triples satisfying the training-input constraint (test oracle)."""
    out = []
    n = len(image_set.images)
    for combo in itertools.combinations(range(n), 3):
        sources = {image_set.images[i].meta.source for i in combo}
        times = {image_set.images[i].meta.time for i in combo}
        if len(sources) >= 2 and len(times) >= 2:
            out.append(combo)
    return out
