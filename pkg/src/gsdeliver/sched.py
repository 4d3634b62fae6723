"""Per-slot download schedulers and the client download state they act on."""
from __future__ import annotations

import copy
import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .scene import CostTable, Scene

VARIANTS = ("layered_delta", "standalone_version", "sh_compact", "sh_full", "hierarchy_node", "splat")
STATE_MODES = ("layered", "distill", "separate", "separate_whole", "sort", "hierarchy", "preload")
DEFAULT_RESOLUTION = 1024
BRUTE_FORCE_LIMIT = 25
WHOLE_SCENE = -1   # object id used by picks that cover every object


class PrecedenceError(ValueError):
    """A pick would leave residency without one of its lower layers."""


@dataclass(frozen=True)
class Pick:
    obj: int
    layer: int
    variant: str = "layered_delta"
    bytes: int = 0
    value: float = 0.0
    item: int = -1          # stream position or hierarchy node id
    complete: bool = True   # False for the leading part of a partially sent stream item

    @property
    def key(self) -> tuple:
        return (self.obj, self.layer, self.variant, self.item)


@dataclass(frozen=True)
class SlotDecision:
    picks: tuple[Pick, ...] = ()
    bytes_used: int = 0
    predicted_budget_bytes: int = 0
    value: float = 0.0

    def __post_init__(self):
        if self.bytes_used > self.predicted_budget_bytes:
            raise ValueError(f"decision spends {self.bytes_used} bytes of a {self.predicted_budget_bytes} byte budget")
        keys = [p.key for p in self.picks if p.complete]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate pick in one slot")


def empty_decision(budget: int) -> SlotDecision:
    return SlotDecision((), 0, int(budget), 0.0)


# ---------------------------------------------------------------------------
# download state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StreamItem:
    obj: int
    layer: int
    bytes: int
    splats: int
    variant: str
    row: int = -1   # scene row for splat items


def progressive_stream(costs: CostTable, whole: bool = False) -> list[StreamItem]:
    """Standalone versions 1..L in order; per object, or one item per version when ``whole``."""
    items = []
    for v in range(1, costs.num_layers + 1):
        if whole:
            items.append(StreamItem(WHOLE_SCENE, v, int(costs.c[:, v].sum()), int(costs.counts[:, 1:v + 1].sum()),
                                    "standalone_version"))
        else:
            for r, j in enumerate(costs.objects):
                items.append(StreamItem(j, v, int(costs.c[r, v]), int(costs.counts[r, 1:v + 1].sum()),
                                        "standalone_version"))
    return items


def sort_stream(scene: Scene, scores, bytes_per_splat: int) -> list[StreamItem]:
    """Individual splats, highest score first (ties by splat_index); ``scores=None`` keeps splat_index order."""
    if scores is None:
        order = np.argsort(scene.splat_index, kind="stable")
    else:
        s = np.asarray(getattr(scores, "scores", scores), dtype=np.float64)
        order = np.lexsort((scene.splat_index, -s))
    return [StreamItem(int(scene.object_ids[k]), int(scene.layer_ids[k]), bytes_per_splat, 1, "splat", int(k))
            for k in order]


class DownloadState:
    """What the client holds (or has been promised) for one run.

    ``resident[r]`` is the highest contiguous layer of object row ``r`` in the
    layered modes and the best complete standalone version in the separate
    modes.  ``sh_level[r, l-1]`` is 0/1/2 for none/compact/full.
    """

    def __init__(self, costs: CostTable, mode: str = "layered", *, stream: Sequence[StreamItem] | None = None,
                 tree: "VersionTree | None" = None):
        if mode not in STATE_MODES:
            raise ValueError(f"unknown state mode {mode!r}")
        self.costs = costs
        self.mode = mode
        self.objects = costs.objects
        self.num_layers = costs.num_layers
        J, L = len(self.objects), self.num_layers
        self.resident = np.zeros(J, dtype=np.int64)
        self.sh_level = np.zeros((J, L), dtype=np.int8)
        self.total_bytes = 0
        self.stream = list(stream) if stream is not None else None
        self.stream_done = 0
        self.stream_partial = 0
        self.tree = tree
        self.frontier = tree.initial_frontier() if tree is not None else None
        if mode in ("separate", "separate_whole", "sort") and self.stream is None:
            raise ValueError(f"state mode {mode} needs a download stream")
        if mode == "hierarchy" and tree is None:
            raise ValueError("hierarchy mode needs a version tree")
        if mode == "preload":
            self.resident[:] = L
            self.sh_level[:] = 2
            if self.stream is not None:
                self.stream_done = len(self.stream)

    def copy(self) -> "DownloadState":
        other = copy.copy(self)
        other.resident = self.resident.copy()
        other.sh_level = self.sh_level.copy()
        other.frontier = None if self.frontier is None else self.frontier.copy()
        return other

    def row(self, j: int) -> int:
        return self.costs.row(j)

    @property
    def full_layers(self) -> np.ndarray:
        """Per object, the number of leading layers held with full SH."""
        full = self.sh_level == 2
        return np.where(full.all(axis=1), self.num_layers, np.argmin(full, axis=1))

    @property
    def resident_splats(self) -> int:
        counts = self.costs.counts[:, 1:]
        if self.mode in ("layered", "distill", "separate", "separate_whole", "preload"):
            mask = np.arange(1, self.num_layers + 1)[None, :] <= self.resident[:, None]
            return int((counts * mask).sum())
        if self.mode == "sort":
            return self.stream_done
        return int(self.tree.size[self.frontier].sum())

    def apply(self, pick: Pick) -> None:
        self._apply(pick)
        self.total_bytes += int(pick.bytes)

    def _apply(self, pick: Pick) -> None:
        if pick.variant in ("layered_delta", "sh_compact", "sh_full") and self.mode in ("layered", "distill"):
            r = self.row(pick.obj)
            level = 1 if pick.variant == "sh_compact" else 2
            if self.sh_level[r, pick.layer - 1] == 0:
                if self.resident[r] != pick.layer - 1:
                    raise PrecedenceError(f"object {pick.obj}: layer {pick.layer} before layer {pick.layer - 1}")
                self.resident[r] = pick.layer
            elif level <= self.sh_level[r, pick.layer - 1]:
                raise ValueError(f"object {pick.obj} layer {pick.layer} downloaded twice")
            self.sh_level[r, pick.layer - 1] = level
        elif pick.variant in ("standalone_version", "splat") and self.stream is not None:
            if pick.item != self.stream_done:
                raise ValueError(f"stream item {pick.item} out of order (next is {self.stream_done})")
            if not pick.complete:
                self.stream_partial += int(pick.bytes)
                return
            self.stream_done += 1
            self.stream_partial = 0
            if pick.variant == "standalone_version":
                if pick.obj == WHOLE_SCENE:
                    self.resident[:] = np.maximum(self.resident, pick.layer)
                else:
                    r = self.row(pick.obj)
                    self.resident[r] = max(self.resident[r], pick.layer)
        elif pick.variant == "hierarchy_node" and self.frontier is not None:
            n = pick.item
            if not self.frontier[n]:
                raise PrecedenceError(f"hierarchy node {n} is not on the resident frontier")
            self.frontier[n] = False
            self.frontier[self.tree.children(n)] = True
        else:
            raise ValueError(f"pick variant {pick.variant} does not fit state mode {self.mode}")

    def apply_decision(self, decision: SlotDecision) -> None:
        for p in decision.picks:
            self.apply(p)

    def score(self, delta_u: np.ndarray, splat_u: np.ndarray | None = None, compact_factor: float = 0.8) -> float:
        """Utility of the held content given per-layer ΔU (J, L) and, for splat-level modes, per-splat utility."""
        L = self.num_layers
        layers = np.arange(1, L + 1)[None, :]
        if self.mode in ("layered", "preload", "separate", "separate_whole"):
            return float((delta_u * (layers <= self.resident[:, None])).sum())
        if self.mode == "distill":
            w = np.where(self.sh_level == 2, 1.0, np.where(self.sh_level == 1, compact_factor, 0.0))
            return float((delta_u * w).sum())
        if splat_u is None:
            raise ValueError(f"state mode {self.mode} needs per-splat utilities")
        if self.mode == "sort":
            rows = [it.row for it in self.stream[:self.stream_done]]
            return float(np.sum(splat_u[rows])) if rows else 0.0
        return float(self.tree.node_values(splat_u)[self.frontier].sum())

    @property
    def stream_remaining(self) -> int:
        if self.stream is None:
            return 0
        return sum(it.bytes for it in self.stream[self.stream_done:]) - self.stream_partial


# ---------------------------------------------------------------------------
# multiple-choice knapsack
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Option:
    cost: int
    value: float
    picks: tuple[Pick, ...]
    target: int = 0   # layer reached (or packed (a, f) for distill)


@dataclass(frozen=True)
class Group:
    obj: int
    options: tuple[Option, ...]


@dataclass(frozen=True)
class KnapsackInstance:
    groups: tuple[Group, ...]
    budget: int
    resolution: int = DEFAULT_RESOLUTION

    def __post_init__(self):
        if self.budget < 0:
            raise ValueError("budget must be non-negative")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        for g in self.groups:
            for o in g.options:
                if o.cost <= 0 or not math.isfinite(o.value):
                    raise ValueError(f"object {g.obj}: option costs must be positive and values finite")
        objs = [g.obj for g in self.groups]
        if len(set(objs)) != len(objs):
            raise ValueError("knapsack groups must be disjoint")

    @property
    def num_options(self) -> int:
        return sum(len(g.options) for g in self.groups)

    def cells(self, cost: int) -> int:
        return -(-int(cost) // self.resolution)

    def decision(self, choice: Sequence[int]) -> SlotDecision:
        """Decision for one option index per group (-1 = skip)."""
        picks, used, value = [], 0, 0.0
        for g, c in zip(self.groups, choice):
            if c >= 0:
                o = g.options[c]
                picks.extend(o.picks)
                used += o.cost
                value += o.value
        return SlotDecision(tuple(picks), used, self.budget, value)


def _option(obj: int, l0: int, l1: int, delta_c, cum_u) -> Option:
    picks = tuple(Pick(obj, l, "layered_delta", int(delta_c[l]), float(cum_u[l - 1])) for l in range(l0 + 1, l1 + 1))
    return Option(sum(p.bytes for p in picks), sum(p.value for p in picks), picks, l1)


def build_instance(state: DownloadState, cum_util, costs: CostTable, budget_bytes: int,
                   resolution: int = DEFAULT_RESOLUTION) -> KnapsackInstance:
    """One group per object: upgrades from the planned layer to every higher layer."""
    cum_util = np.asarray(cum_util, dtype=np.float64)
    groups = []
    for r, j in enumerate(costs.objects):
        l0 = int(state.resident[r])
        opts = [_option(j, l0, l1, costs.delta_c[r], cum_util[r]) for l1 in range(l0 + 1, costs.num_layers + 1)]
        opts = [o for o in opts if o.value > 0 and o.cost > 0]
        if opts:
            groups.append(Group(j, tuple(opts)))
    return KnapsackInstance(tuple(groups), max(int(budget_bytes), 0), resolution)


def schedule_knapsack(instance: KnapsackInstance) -> SlotDecision:
    """Exact DP over budget cells; ties go to fewer cells, then to skipping / earlier options."""
    W = instance.budget // instance.resolution
    groups = instance.groups
    if W <= 0 or not groups:
        return empty_decision(instance.budget)
    W = min(W, sum(max(instance.cells(o.cost) for o in g.options) for g in groups))
    dp = np.full(W + 1, -np.inf)
    dp[0] = 0.0
    choice = np.full((len(groups), W + 1), -1, dtype=np.int32)
    for gi, g in enumerate(groups):
        new = dp.copy()
        for oi, o in enumerate(g.options):
            w = instance.cells(o.cost)
            if w > W:
                continue
            cand = np.full(W + 1, -np.inf)
            cand[w:] = dp[:W + 1 - w] + o.value
            better = cand > new
            new[better] = cand[better]
            choice[gi, better] = oi
        dp = new
    best = dp.max()
    tol = 1e-12 * max(1.0, abs(best))
    w = int(np.flatnonzero(dp >= best - tol)[0])
    picks = [-1] * len(groups)
    for gi in range(len(groups) - 1, -1, -1):
        oi = int(choice[gi, w])
        picks[gi] = oi
        if oi >= 0:
            w -= instance.cells(groups[gi].options[oi].cost)
    return instance.decision(picks)


def brute_force_schedule(instance: KnapsackInstance) -> SlotDecision:
    """Exhaustive search over quantized costs; ties go to the lexicographically smallest choice vector."""
    if instance.num_options > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force limited to {BRUTE_FORCE_LIMIT} options, instance has {instance.num_options}")
    W = instance.budget // instance.resolution
    best_val, best = 0.0, [-1] * len(instance.groups)
    for combo in itertools.product(*[range(-1, len(g.options)) for g in instance.groups]):
        w = v = 0
        for g, c in zip(instance.groups, combo):
            if c >= 0:
                w += instance.cells(g.options[c].cost)
                v += g.options[c].value
        if w <= W and v > best_val:
            best_val, best = v, list(combo)
    return instance.decision(best)


def choice_matrix(instance: KnapsackInstance, decision: SlotDecision, objects: Sequence[int],
                  num_layers: int) -> np.ndarray:
    """``z[r, l] = 1`` when the decision upgrades object row ``r`` to layer ``l`` exactly."""
    z = np.zeros((len(objects), num_layers + 1), dtype=np.int64)
    top: dict[int, int] = {}
    for p in decision.picks:
        top[p.obj] = max(top.get(p.obj, 0), p.layer)
    for j, l in top.items():
        z[list(objects).index(j), l] = 1
    return z


def z_to_x(z: np.ndarray, resident: np.ndarray) -> np.ndarray:
    """Per-layer download indicators ``x[r, l] = sum_{l' >= l} z[r, l']`` for layers above ``resident``."""
    x = np.flip(np.cumsum(np.flip(z, axis=1), axis=1), axis=1)
    above = np.arange(z.shape[1])[None, :] > np.asarray(resident)[:, None]
    return x * above


# ---------------------------------------------------------------------------
# SH distillation variant
# ---------------------------------------------------------------------------

def build_distill_instance(state: DownloadState, cum_util, costs: CostTable, budget_bytes: int,
                           compact_factor: float = 0.8, resolution: int = DEFAULT_RESOLUTION) -> KnapsackInstance:
    """Options move object ``j`` from (a resident layers, f full-SH layers) to any (a', f') with f' <= a'.

    New layers up to f' arrive with full SH, the rest compact; held compact
    layers up to f' are upgraded by sending the missing SH bytes only.
    """
    if not 0 < compact_factor < 1:
        raise ValueError("compact quality factor must lie in (0, 1)")
    cum_util = np.asarray(cum_util, dtype=np.float64)
    model = costs.model
    full_layers = state.full_layers
    L = costs.num_layers
    groups = []
    for r, j in enumerate(costs.objects):
        a, f = int(state.resident[r]), int(full_layers[r])
        opts = []
        for a1 in range(a, L + 1):
            for f1 in range(f, a1 + 1):
                if (a1, f1) == (a, f):
                    continue
                picks = []
                for l in range(f + 1, min(a, f1) + 1):
                    n = int(costs.counts[r, l])
                    picks.append(Pick(j, l, "sh_full", n * model.sh_upgrade_bytes,
                                      float((1 - compact_factor) * cum_util[r, l - 1])))
                for l in range(a + 1, a1 + 1):
                    n = int(costs.counts[r, l])
                    hdr = model.header_bytes_per_bundle if n else 0
                    if l <= f1:
                        picks.append(Pick(j, l, "sh_full", n * model.bytes_full + hdr, float(cum_util[r, l - 1])))
                    else:
                        picks.append(Pick(j, l, "sh_compact", n * model.bytes_compact + hdr,
                                          float(compact_factor * cum_util[r, l - 1])))
                cost = sum(p.bytes for p in picks)
                value = sum(p.value for p in picks)
                if cost > 0 and value > 0:
                    opts.append(Option(cost, value, tuple(picks), a1 * (L + 1) + f1))
        if opts:
            groups.append(Group(j, tuple(opts)))
    return KnapsackInstance(tuple(groups), max(int(budget_bytes), 0), resolution)


def schedule_distill(state: DownloadState, cum_util, costs: CostTable, budget_bytes: int,
                     compact_factor: float = 0.8, resolution: int = DEFAULT_RESOLUTION) -> SlotDecision:
    return schedule_knapsack(build_distill_instance(state, cum_util, costs, budget_bytes, compact_factor, resolution))


# ---------------------------------------------------------------------------
# streaming baselines
# ---------------------------------------------------------------------------

def schedule_stream(state: DownloadState, budget_bytes: int) -> SlotDecision:
    """Spend the budget on the next stream items in order; the last one may be partial."""
    budget = max(int(budget_bytes), 0)
    left = budget
    picks = []
    k, partial = state.stream_done, state.stream_partial
    while left > 0 and k < len(state.stream):
        it = state.stream[k]
        need = it.bytes - partial
        send = min(need, left)
        picks.append(Pick(it.obj, it.layer, it.variant, send, 0.0, k, send == need))
        left -= send
        if send < need:
            break
        k, partial = k + 1, 0
    # items of zero size complete for free once reached
    while k < len(state.stream) and state.stream[k].bytes == 0 and (not picks or picks[-1].complete):
        it = state.stream[k]
        picks.append(Pick(it.obj, it.layer, it.variant, 0, 0.0, k, True))
        k += 1
    return SlotDecision(tuple(picks), budget - left, budget, 0.0)


def schedule_progressive(state: DownloadState, budget_bytes: int) -> SlotDecision:
    """Standalone versions in order 1..L; a version counts only once complete."""
    if state.mode not in ("separate", "separate_whole"):
        raise ValueError(f"progressive loading needs a separate-version state, got {state.mode}")
    return schedule_stream(state, budget_bytes)


def schedule_sort(state: DownloadState, budget_bytes: int) -> SlotDecision:
    """Individual splats in descending significance, viewport-independent."""
    if state.mode != "sort":
        raise ValueError(f"sort scheduling needs a sort state, got {state.mode}")
    return schedule_stream(state, budget_bytes)


# ---------------------------------------------------------------------------
# baselines expressed on a layered knapsack instance
# ---------------------------------------------------------------------------

def _greedy_bundles(instance: KnapsackInstance, order: Sequence[tuple[int, int]], stop_at_first: bool) -> SlotDecision:
    """Buy single-layer bundles in ``order`` respecting precedence, then map each object to its best option."""
    W = instance.budget // instance.resolution
    layer_bytes: dict[tuple[int, int], int] = {}
    level: dict[int, int] = {}
    for g in instance.groups:
        for o in g.options:
            for p in o.picks:
                layer_bytes[(g.obj, p.layer)] = p.bytes
        level[g.obj] = min(p.layer for o in g.options for p in o.picks) - 1
    spent = {j: 0 for j in level}
    used = 0
    for j, l in order:
        if (j, l) not in layer_bytes or l != level[j] + 1:
            continue
        step = instance.cells(spent[j] + layer_bytes[(j, l)]) - instance.cells(spent[j])
        if used + step > W:
            if stop_at_first:
                break
            continue
        used += step
        spent[j] += layer_bytes[(j, l)]
        level[j] = l
    choice = []
    for g in instance.groups:
        ok = [i for i, o in enumerate(g.options) if o.target <= level[g.obj]]
        choice.append(max(ok, key=lambda i: g.options[i].target) if ok else -1)
    return instance.decision(choice)


def progressive_on_instance(instance: KnapsackInstance) -> SlotDecision:
    """Layer-major order over objects, stopping at the first bundle that does not fit."""
    order = sorted({(p.layer, g.obj) for g in instance.groups for o in g.options for p in o.picks})
    return _greedy_bundles(instance, [(j, l) for l, j in order], stop_at_first=True)


def sort_on_instance(instance: KnapsackInstance, bundle_score: dict[tuple[int, int], float]) -> SlotDecision:
    """Bundles by descending viewport-independent score, skipping those that do not fit."""
    keys = sorted({(g.obj, p.layer) for g in instance.groups for o in g.options for p in o.picks},
                  key=lambda k: (-bundle_score.get(k, 0.0), k[1], k[0]))
    return _greedy_bundles(instance, keys, stop_at_first=False)


def random_feasible(instance: KnapsackInstance, rng: np.random.Generator) -> SlotDecision:
    W = instance.budget // instance.resolution
    choice = [int(rng.integers(-1, len(g.options))) for g in instance.groups]
    for gi in rng.permutation(len(choice)):
        if sum(instance.cells(g.options[c].cost) for g, c in zip(instance.groups, choice) if c >= 0) <= W:
            break
        choice[gi] = -1
    return instance.decision(choice)


# ---------------------------------------------------------------------------
# hierarchy variant
# ---------------------------------------------------------------------------

class VersionTree:
    """Per-object trees whose version-v nodes are clusters of that object's version-v splats.

    Node ``k`` has ``parent[k]`` in version ``version[k] - 1`` of the same
    object; version-0 nodes are empty per-object roots.  ``members[v]`` maps
    every scene row to its version-v node (or -1).
    """

    def __init__(self, obj, version, parent, size, cost, members: Sequence[np.ndarray] | None = None):
        self.obj = np.asarray(obj, dtype=np.int64)
        self.version = np.asarray(version, dtype=np.int64)
        self.parent = np.asarray(parent, dtype=np.int64)
        self.size = np.asarray(size, dtype=np.int64)
        self.cost = np.asarray(cost, dtype=np.int64)
        self.members = [np.asarray(m, dtype=np.int64) for m in members] if members is not None else []
        self.validate()
        n = len(self.obj)
        order = np.argsort(self.parent, kind="stable")
        self._child_order = order[self.parent[order] >= 0]
        self._child_start = np.searchsorted(self.parent[self._child_order], np.arange(n + 1))

    def __len__(self):
        return len(self.obj)

    def validate(self) -> None:
        n = len(self.obj)
        if not (len(self.version) == len(self.parent) == len(self.size) == len(self.cost) == n):
            raise ValueError("version tree arrays differ in length")
        for k in range(n):
            p = self.parent[k]
            if self.version[k] == 0:
                if p != -1:
                    raise ValueError(f"root node {k} has a parent")
                continue
            if p < 0 or p >= n:
                raise ValueError(f"node {k} is an orphan")
            if p == k or self.version[p] != self.version[k] - 1:
                raise ValueError(f"node {k}: parent {p} is not one version below (cycle or skipped version)")
            if self.obj[p] != self.obj[k]:
                raise ValueError(f"node {k}: parent {p} belongs to another object")

    def children(self, k: int) -> np.ndarray:
        return self._child_order[self._child_start[k]:self._child_start[k + 1]]

    def initial_frontier(self) -> np.ndarray:
        return self.version == 0

    def node_values(self, splat_u) -> np.ndarray:
        """Summed utility per node, from per-splat (N,) or per-pose (P, N) utilities."""
        splat_u = np.asarray(splat_u, dtype=np.float64)
        n = len(self.obj)
        out = np.zeros(splat_u.shape[:-1] + (n,))
        for m in self.members:
            ok = m >= 0
            if splat_u.ndim == 1:
                out += np.bincount(m[ok], weights=splat_u[ok], minlength=n)
            else:
                for p in range(splat_u.shape[0]):
                    out[p] += np.bincount(m[ok], weights=splat_u[p, ok], minlength=n)
        return out


def _median_clusters(points: np.ndarray, rows: np.ndarray, k: int) -> list[np.ndarray]:
    """Split ``rows`` into ``k`` (a power of two) groups by recursive median cuts on the widest axis."""
    parts = [rows]
    while len(parts) < k:
        nxt = []
        for part in parts:
            if len(part) < 2:
                nxt.extend([part, part[:0]])
                continue
            p = points[part]
            axis = int(np.argmax(p.max(axis=0) - p.min(axis=0)))
            order = part[np.lexsort((part, p[:, axis]))]
            half = len(order) // 2
            nxt.extend([np.sort(order[:half]), np.sort(order[half:])])
        parts = nxt
    return parts


def build_version_tree(scene: Scene, costs: CostTable) -> VersionTree:
    """Version v of each object is cut into 2^(v-1) spatial clusters; each links to the nearest-centroid
    cluster of version v-1 of the same object."""
    obj, version, parent, size, cost = [], [], [], [], []
    L = scene.num_layers
    members = [np.full(len(scene), -1, dtype=np.int64) for _ in range(L)]
    pos = scene.positions.astype(np.float64)
    bpp = costs.model.bytes_full
    for j in costs.objects:
        root = len(obj)
        obj.append(j); version.append(0); parent.append(-1); size.append(0); cost.append(0)
        prev_ids, prev_centroids = [root], np.zeros((1, 3))
        for v in range(1, L + 1):
            rows = np.flatnonzero((scene.object_ids == j) & (scene.layer_ids <= v))
            ids, centroids = [], []
            for part in _median_clusters(pos, rows, 2 ** (v - 1)):
                if len(part) == 0:
                    continue
                c = pos[part].mean(axis=0)
                if v == 1:
                    par = root
                else:
                    par = prev_ids[int(np.argmin(((prev_centroids - c) ** 2).sum(axis=1)))]
                k = len(obj)
                obj.append(j); version.append(v); parent.append(par); size.append(len(part))
                cost.append(len(part) * bpp + costs.model.header_bytes_per_bundle)
                members[v - 1][part] = k
                ids.append(k)
                centroids.append(c)
            if ids:
                prev_ids, prev_centroids = ids, np.array(centroids)
    return VersionTree(obj, version, parent, size, cost, members)


def schedule_hierarchy(state: DownloadState, tree: VersionTree, node_values, budget_bytes: int) -> SlotDecision:
    """Greedy node expansions by value per byte; children replace their parent on the frontier."""
    budget = max(int(budget_bytes), 0)
    vals = np.asarray(node_values, dtype=np.float64)
    frontier = state.frontier.copy()
    left = budget
    picks = []
    while True:
        best, best_key = None, None
        for n in np.flatnonzero(frontier):
            ch = tree.children(n)
            if len(ch) == 0:
                continue
            c = int(tree.cost[ch].sum())
            gain = float(vals[ch].sum() - vals[n])
            if c <= 0 or c > left or gain <= 0:
                continue
            key = (-gain / c, int(n))
            if best_key is None or key < best_key:
                best, best_key = (int(n), c, gain, ch), key
        if best is None:
            break
        n, c, gain, ch = best
        picks.append(Pick(int(tree.obj[n]), int(tree.version[n]) + 1, "hierarchy_node", c, gain, n))
        left -= c
        frontier[n] = False
        frontier[ch] = True
    return SlotDecision(tuple(picks), budget - left, budget, float(sum(p.value for p in picks)))
