"""Scene preprocessing: significance scoring, pruning to a target size, layer partitioning."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .scene import Scene
from .utility import SplatArrays, Viewport, viewport_utilities

log = logging.getLogger(__name__)

ScoreFn = Callable[[Scene], np.ndarray]


@dataclass(frozen=True)
class SignificanceScores:
    """Viewport-independent importance, one score per scene row."""

    splat_index: np.ndarray
    scores: np.ndarray
    viewport_sample: tuple[Viewport, ...] = ()

    def __post_init__(self):
        if self.splat_index.shape != self.scores.shape:
            raise ValueError("one score per splat required")
        if not np.all(np.isfinite(self.scores)) or np.any(self.scores < 0):
            raise ValueError("scores must be finite and non-negative")

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.splat_index.tolist(), self.scores.tolist()))

    def __len__(self):
        return len(self.scores)


def compute_significance(scene: Scene, sample_viewports: Sequence[Viewport],
                         closeness_mode: str = "camera") -> SignificanceScores:
    """Sum of per-splat utilities over the viewport sample."""
    vps = tuple(sample_viewports)
    if not vps:
        raise ValueError("significance needs a non-empty viewport sample")
    arrays = SplatArrays(scene)
    total = np.zeros(len(scene))
    for vp in vps:  # fixed order keeps the float sum reproducible
        total += viewport_utilities(arrays, vp, closeness_mode)
    return SignificanceScores(scene.splat_index.copy(), total, vps)


def significance_fn(sample_viewports: Sequence[Viewport], closeness_mode: str = "camera") -> ScoreFn:
    vps = tuple(sample_viewports)
    return lambda scene: compute_significance(scene, vps, closeness_mode).scores


def _identity(scene: Scene) -> Scene:
    return scene


def descending_order(scores: np.ndarray, splat_index: np.ndarray) -> np.ndarray:
    """Row order by score descending, ties by ascending splat_index."""
    return np.lexsort((splat_index, -np.asarray(scores, dtype=np.float64)))


def prune_to_target(scene: Scene, d: int, r: float, scores_fn: ScoreFn, *,
                    recovery: Callable[[Scene], Scene] = _identity,
                    finetune: Callable[[Scene], Scene] = _identity,
                    rounds: list[int] | None = None) -> Scene:
    """Prune to exactly ``d`` splats and return them sorted by significance.

    ``recovery`` runs after every ratio round and ``finetune`` after the final
    exact cut; both default to the identity.  The result is a single-layer
    scene with dense splat indices in sorted order.  If ``rounds`` is given,
    the splat count after each round is appended to it.
    """
    n = len(scene)
    if d <= 0:
        raise ValueError(f"target size must be positive, got {d}")
    if d > n:
        raise ValueError(f"target size {d} exceeds splat count {n}")
    if not 0 < r < 1:
        raise ValueError(f"pruning ratio must lie in (0, 1), got {r}")
    current = scene
    while len(current) > d:
        m = len(current)
        s = np.asarray(scores_fn(current), dtype=np.float64)
        keep_order = descending_order(s, current.splat_index)
        if m * (1 - r) > d:
            k = max(1, math.floor(m * r))
            step = recovery
        else:
            k = m - d
            step = finetune
        keep = np.sort(keep_order[:m - k])
        # dense reindexing keeps relative order, so index tie-breaks are unchanged
        current = step(current.take(keep, num_layers=1, layer_ids=np.ones(len(keep), dtype=np.int64),
                                    layer_targets=[len(keep)]))
        log.debug("pruned %d of %d splats, %d remain", k, m, len(current))
        if rounds is not None:
            rounds.append(len(current))
    s = np.asarray(scores_fn(current), dtype=np.float64)
    order = descending_order(s, current.splat_index)
    return current.take(order, num_layers=1, layer_ids=np.ones(len(order), dtype=np.int64),
                        layer_targets=[len(order)], reindex=True)


def partition_layers(scene: Scene, targets: Sequence[int]) -> Scene:
    """Assign row ``k`` (already in significance order) to layer min{l : k < d_l}."""
    D = [int(x) for x in targets]
    if not D:
        raise ValueError("need at least one layer target")
    if any(b < a for a, b in zip(D, D[1:])) or D[0] < 0:
        raise ValueError(f"layer targets must be non-decreasing and non-negative: {D}")
    if D[-1] != len(scene):
        raise ValueError(f"last layer target {D[-1]} does not match splat count {len(scene)}")
    layer = np.searchsorted(np.asarray(D), np.arange(len(scene)), side="right") + 1
    return scene.with_layers(layer, D)
