"""Anchor-aware mask planning for 3-image training inputs.

Each input pairs a chosen anchor image with two partners. A partner sharing
the anchor's acquisition time (but not its source) is masked at exactly the
anchor's positions, so no position can leak across resolutions at one time.
A partner sharing the source (but not the time) keeps visible only positions
the anchor masked, so every position is observed at most once across the two
times. Unrelated partners are masked independently. Tube and plain random
planning are kept as ablation baselines.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument


class Relation(enum.Enum):
    CONSISTENT = "consistent"
    MUTUALLY_EXCLUSIVE = "mutually_exclusive"
    RANDOM = "random"


@dataclass(frozen=True)
class MaskPlan:
    """Per-image masked/visible patch index sets plus the relations that produced them."""

    n_patches: int
    ratio: float
    anchor_index: int
    masked: tuple[frozenset[int], frozenset[int], frozenset[int]]
    relations: dict[int, Relation]

    @property
    def visible(self) -> tuple[frozenset[int], ...]:
        full = frozenset(range(self.n_patches))
        return tuple(full - m for m in self.masked)

    def masked_count(self) -> int:
        return math.floor(self.ratio * self.n_patches)

    def __post_init__(self):
        m = self.masked_count()
        for j, masked in enumerate(self.masked):
            if len(masked) != m:
                raise InvalidArgument(
                    f"image {j}: {len(masked)} masked patches, expected floor(r*N) = {m}")
            if not masked <= set(range(self.n_patches)):
                raise InvalidArgument(f"image {j}: masked indices outside [0, {self.n_patches})")
        anchor_masked = self.masked[self.anchor_index]
        anchor_visible = frozenset(range(self.n_patches)) - anchor_masked
        for j, rel in self.relations.items():
            if rel is Relation.CONSISTENT and self.masked[j] != anchor_masked:
                raise InvalidArgument(f"image {j}: consistent relation but masks differ from anchor")
            if rel is Relation.MUTUALLY_EXCLUSIVE:
                vis_j = frozenset(range(self.n_patches)) - self.masked[j]
                if vis_j & anchor_visible:
                    raise InvalidArgument(
                        f"image {j}: mutually-exclusive relation but visible sets overlap")


def relation(meta_a, meta_b) -> Relation:
    """Pairwise relation from (source, time) metadata.

    Same time / different source -> consistent; same source / different time
    -> mutually exclusive; both different -> random. Identical (source, time)
    pairs are duplicates and rejected.
    """
    same_source = meta_a.source == meta_b.source
    same_time = meta_a.time == meta_b.time
    if same_source and same_time:
        raise InvalidArgument(
            f"duplicate image: both are ({meta_a.source}, {meta_a.time})")
    if same_time:
        return Relation.CONSISTENT
    if same_source:
        return Relation.MUTUALLY_EXCLUSIVE
    return Relation.RANDOM


def choose_anchor(metas, rng: np.random.Generator) -> int:
    """Index of the image with the most non-random relations; ties drawn uniformly."""
    if len(metas) != 3:
        raise InvalidArgument(f"expected 3 image metas, got {len(metas)}")
    scores = []
    for i in range(3):
        others = [relation(metas[i], metas[j]) for j in range(3) if j != i]
        scores.append(sum(1 for r in others if r is not Relation.RANDOM))
    best = max(scores)
    candidates = [i for i, s in enumerate(scores) if s == best]
    return int(candidates[rng.integers(len(candidates))])


def select_bands(sources, rng: np.random.Generator) -> list[tuple[int, int, int]]:
    """Three distinct band indices per image, uniform without replacement.

    ``sources`` is the per-image list of source specs (anything with an
    ``n_bands`` attribute). All images use the same rule so the patch
    embedding sees a constant input width.
    """
    selections = []
    for spec in sources:
        n = spec.n_bands
        if n < 3:
            raise InvalidArgument(f"source {getattr(spec, 'source_id', spec)} has {n} < 3 bands")
        picked = rng.choice(n, size=3, replace=False)
        selections.append(tuple(int(b) for b in np.sort(picked)))
    return selections


def _check_plan_preconditions(n_patches: int, ratio: float, need_exclusive: bool) -> int:
    if n_patches < 4:
        raise InvalidArgument(f"n_patches must be >= 4, got {n_patches}")
    if not 0.0 < ratio < 1.0:
        raise InvalidArgument(f"ratio must lie in (0, 1), got {ratio}")
    m = math.floor(ratio * n_patches)
    if m < 1:
        raise InvalidArgument(f"floor(ratio*N) = {m} masks nothing (ratio {ratio}, N {n_patches})")
    if need_exclusive and 2 * m < n_patches:
        raise InvalidArgument(
            f"mutually-exclusive relation needs visible <= masked: "
            f"floor({ratio}*{n_patches}) = {m} leaves {n_patches - m} visible")
    return m


def _random_subset(n: int, size: int, rng: np.random.Generator) -> frozenset[int]:
    return frozenset(int(i) for i in rng.choice(n, size=size, replace=False))


def plan_masks(metas, anchor: int, n_patches: int, ratio: float,
               rng: np.random.Generator) -> MaskPlan:
    """Anchor-aware plan: anchor random, partners per their relation to the anchor."""
    relations = {j: relation(metas[anchor], metas[j]) for j in range(3) if j != anchor}
    need_exclusive = any(r is Relation.MUTUALLY_EXCLUSIVE for r in relations.values())
    m = _check_plan_preconditions(n_patches, ratio, need_exclusive)

    anchor_masked = _random_subset(n_patches, m, rng)
    masked: list[frozenset[int]] = [frozenset()] * 3
    masked[anchor] = anchor_masked
    for j, rel in relations.items():
        if rel is Relation.CONSISTENT:
            masked[j] = anchor_masked
        elif rel is Relation.MUTUALLY_EXCLUSIVE:
            pool = np.sort(np.fromiter(anchor_masked, dtype=np.intp))
            visible = rng.choice(pool, size=n_patches - m, replace=False)
            masked[j] = frozenset(range(n_patches)) - frozenset(int(i) for i in visible)
        else:
            masked[j] = _random_subset(n_patches, m, rng)
    return MaskPlan(n_patches, ratio, anchor, tuple(masked), relations)


def tube_mask(metas, n_patches: int, ratio: float, rng: np.random.Generator) -> MaskPlan:
    """Baseline: one mask sampled once and copied to all images."""
    m = _check_plan_preconditions(n_patches, ratio, need_exclusive=False)
    anchor = int(rng.integers(3))
    shared = _random_subset(n_patches, m, rng)
    relations = {j: Relation.CONSISTENT for j in range(3) if j != anchor}
    return MaskPlan(n_patches, ratio, anchor, (shared, shared, shared), relations)


def random_mask(metas, n_patches: int, ratio: float, rng: np.random.Generator) -> MaskPlan:
    """Baseline: three independent uniform masks."""
    m = _check_plan_preconditions(n_patches, ratio, need_exclusive=False)
    anchor = int(rng.integers(3))
    masked = tuple(_random_subset(n_patches, m, rng) for _ in range(3))
    relations = {j: Relation.RANDOM for j in range(3) if j != anchor}
    return MaskPlan(n_patches, ratio, anchor, masked, relations)


STRATEGIES = {
    "aam": plan_masks,
    "tube": lambda metas, anchor, n, r, rng: tube_mask(metas, n, r, rng),
    "random": lambda metas, anchor, n, r, rng: random_mask(metas, n, r, rng),
}


def plan_for_strategy(strategy: str, metas, anchor: int, n_patches: int, ratio: float,
                      rng: np.random.Generator) -> MaskPlan:
    if strategy not in STRATEGIES:
        raise InvalidArgument(f"unknown mask strategy {strategy!r}; choose from {sorted(STRATEGIES)}")
    if strategy == "aam":
        return plan_masks(metas, anchor, n_patches, ratio, rng)
    return STRATEGIES[strategy](metas, anchor, n_patches, ratio, rng)
