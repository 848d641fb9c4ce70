"""Clustering-based data pruning: per-region k-means difficulty scoring.

Locations are bucketed into lat/lon grid regions; each region is clustered
with k-means and an example's difficulty is its Euclidean distance to the
nearest centroid. Only the hardest fraction per region survives. Regions with
fewer items than k fall back to one shared clustering pool.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True)
class PruningConfig:
    region_cell_deg: float = 1.0
    k: int = 20
    keep_frac: float = 0.10
    max_iters: int = 100
    tol: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.keep_frac <= 1.0:
            raise InvalidArgument(f"keep_frac must lie in (0, 1], got {self.keep_frac}")
        if self.k < 1:
            raise InvalidArgument(f"k must be >= 1, got {self.k}")
        if self.region_cell_deg <= 0:
            raise InvalidArgument(f"region_cell_deg must be positive, got {self.region_cell_deg}")


RegionId = tuple[int, int]


def partition_regions(locations, cell_deg: float) -> dict[int, RegionId]:
    """Map location_id -> (floor(lat/cell), floor(lon/cell))."""
    if cell_deg <= 0:
        raise InvalidArgument(f"cell_deg must be positive, got {cell_deg}")
    out: dict[int, RegionId] = {}
    for loc_id, lat, lon in locations:
        if not (math.isfinite(lat) and math.isfinite(lon)
                and -90 <= lat <= 90 and -180 <= lon <= 180):
            raise InvalidArgument(f"location {loc_id}: bad coordinates ({lat}, {lon})")
        out[loc_id] = (math.floor(lat / cell_deg), math.floor(lon / cell_deg))
    return out


def feature_of(image) -> np.ndarray:
    """Per-band mean and std concatenated: a cheap, permutation-invariant summary."""
    pixels = np.asarray(image.pixels if hasattr(image, "pixels") else image, dtype=np.float64)
    flat = pixels.reshape(-1, pixels.shape[-1])
    return np.concatenate([flat.mean(axis=0), flat.std(axis=0)])


def _kmeans_pp_init(features: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = features.shape[0]
    centroids = np.empty((k, features.shape[1]), dtype=features.dtype)
    centroids[0] = features[rng.integers(n)]
    closest = np.sum((features - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            centroids[i:] = features[rng.integers(n, size=k - i)]
            break
        probs = closest / total
        centroids[i] = features[rng.choice(n, p=probs)]
        closest = np.minimum(closest, np.sum((features - centroids[i]) ** 2, axis=1))
    return centroids


def kmeans(features: np.ndarray, k: int, max_iters: int, tol: float,
           rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Lloyd's algorithm with k-means++ seeding.

    Returns (centroids, assignments, per-iteration objective values). The
    objective (sum of squared distances to assigned centroids) is
    non-increasing; empty clusters keep their previous centroid.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise InvalidArgument(f"features must be 2-D, got shape {features.shape}")
    n = features.shape[0]
    if n < k:
        raise InvalidArgument(f"{n} features cannot form {k} clusters")
    centroids = _kmeans_pp_init(features, k, rng)
    objectives: list[float] = []
    assignments = np.zeros(n, dtype=np.intp)
    for _ in range(max_iters):
        d2 = ((features[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assignments = d2.argmin(axis=1)
        objectives.append(float(d2[np.arange(n), assignments].sum()))
        new_centroids = centroids.copy()
        for j in range(k):
            members = features[assignments == j]
            if len(members):
                new_centroids[j] = members.mean(axis=0)
        shift = float(np.linalg.norm(new_centroids - centroids))
        centroids = new_centroids
        if shift < tol:
            break
    d2 = ((features[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    assignments = d2.argmin(axis=1)
    objectives.append(float(d2[np.arange(n), assignments].sum()))
    return centroids, assignments, objectives


def difficulty(feature: np.ndarray, centroids: np.ndarray) -> float:
    """Euclidean distance to the nearest centroid."""
    feature = np.asarray(feature, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64)
    if centroids.ndim != 2 or centroids.shape[0] == 0:
        raise InvalidArgument("centroids must be a non-empty 2-D array")
    if feature.shape != centroids.shape[1:]:
        raise InvalidArgument(
            f"feature dim {feature.shape} != centroid dim {centroids.shape[1:]}")
    return float(np.sqrt(((centroids - feature) ** 2).sum(axis=1)).min())


def _keep_hardest(items: list[tuple[int, float]], keep_frac: float) -> set[int]:
    n_keep = math.ceil(keep_frac * len(items))
    ranked = sorted(items, key=lambda pair: (-pair[1], pair[0]))
    return {loc_id for loc_id, _ in ranked[:n_keep]}


@dataclass
class RegionReport:
    region: RegionId
    pooled: bool                     # scored against the shared small-region pool
    scores: list[tuple[int, float]]  # (location_id, difficulty)
    kept: set[int]


def prune_report(regions: dict[RegionId, list[tuple[int, np.ndarray]]], cfg: PruningConfig,
                 rng: np.random.Generator) -> list[RegionReport]:
    """Per-region difficulty scores and kept ids; ties break by id order.

    The rng is split per region (keyed by the region id), so every region is
    pruned the same way whether it is processed alone or alongside others.
    Regions smaller than k are pooled and scored against one shared clustering.
    """
    if not regions:
        return []
    base = int(rng.integers(2**62))

    def region_rng(key: tuple[int, ...]) -> np.random.Generator:
        return np.random.default_rng([base, *(k + 2**31 for k in key)])

    reports: list[RegionReport] = []
    fallback: list[tuple[RegionId, list[tuple[int, np.ndarray]]]] = []
    for region in sorted(regions):
        items = regions[region]
        if not items:
            continue
        if len(items) < cfg.k:
            fallback.append((region, items))
            continue
        feats = np.stack([f for _, f in items])
        centroids, _, _ = kmeans(feats, cfg.k, cfg.max_iters, cfg.tol, region_rng(region))
        scored = [(loc_id, difficulty(f, centroids)) for loc_id, f in items]
        reports.append(RegionReport(region, False, scored, _keep_hardest(scored, cfg.keep_frac)))

    if fallback:
        pool = [pair for _, items in fallback for pair in items]
        feats = np.stack([f for _, f in pool])
        k_eff = min(cfg.k, len(pool))
        centroids, _, _ = kmeans(feats, k_eff, cfg.max_iters, cfg.tol, region_rng((0,)))
        for region, items in fallback:
            scored = [(loc_id, difficulty(f, centroids)) for loc_id, f in items]
            reports.append(RegionReport(region, True, scored, _keep_hardest(scored, cfg.keep_frac)))
    return reports


def prune(regions: dict[RegionId, list[tuple[int, np.ndarray]]], cfg: PruningConfig,
          rng: np.random.Generator) -> set[int]:
    """Kept id set across all regions (see ``prune_report``)."""
    kept: set[int] = set()
    for report in prune_report(regions, cfg, rng):
        kept |= report.kept
    return kept
