"""Trace-driven slot loop: predict, look up utility, schedule, deliver, score."""
from __future__ import annotations

import csv
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .predict import (SAMPLE_RATE, BandwidthTrace, PredictorConfig, ViewportTrace, actual_bandwidth,
                      predict_bandwidth, predict_viewport)
from .scene import CostTable, Scene, build_cost_table, ensure_parent
from .sched import (DEFAULT_RESOLUTION, DownloadState, SlotDecision, VersionTree, build_instance,
                    build_version_tree, progressive_stream, schedule_distill, schedule_hierarchy, schedule_knapsack,
                    schedule_progressive, schedule_sort, sort_stream)
from .utility import DirectUtility, UtilityGrid, Viewport, wrap_angle

log = logging.getLogger(__name__)

SCHEDULERS = ("knapsack", "progressive", "progressive-whole", "sort", "distill", "hierarchy", "preload")
STATE_MODE = {
    "knapsack": "layered",
    "progressive": "separate",
    "progressive-whole": "separate_whole",
    "sort": "sort",
    "distill": "distill",
    "hierarchy": "hierarchy",
    "preload": "preload",
}
POSE_FIELDS = ("x", "y", "z", "yaw", "pitch", "roll")
METRIC_COLUMNS = ["slot", "utility", "resident_splats", "bytes", "pred_mbps", "actual_mbps"] + \
    [f"pose_mae_{f}" for f in POSE_FIELDS]
SUMMARY_COLUMNS = ["trace", "scheduler", "offset", "slots", "mean_utility", "total_bytes", "final_resident_splats",
                   "mean_pose_mae", "bandwidth_mae"]


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    slot_duration: float = 1.0
    trace_duration: float = 60.0
    start_offsets: tuple[float, ...] | None = None
    num_offsets: int = 3
    hw: float = 0.5
    pw: float = 1.0
    use_grid: bool = False
    ground_truth_viewport: bool = False
    ground_truth_bandwidth: bool = False
    seed: int = 0
    horizon: int | None = None
    resolution: int = DEFAULT_RESOLUTION
    compact_factor: float = 0.8
    closeness_mode: str = "camera"

    def __post_init__(self):
        if self.slot_duration <= 0:
            raise ValueError("slot duration must be positive")
        if self.trace_duration <= 0:
            raise ValueError("trace duration must be positive")
        if self.horizon is not None and self.horizon < 1:
            raise ValueError("horizon must be at least one slot")
        PredictorConfig(self.hw, self.pw)

    @property
    def predictor(self) -> PredictorConfig:
        return PredictorConfig(self.hw, self.pw)

    @property
    def num_slots(self) -> int:
        return int(round(self.trace_duration / self.slot_duration))

    @property
    def horizon_slots(self) -> int:
        """Future slots whose utility is summed into the knapsack values."""
        if self.horizon is not None:
            return self.horizon
        return max(1, math.ceil(self.pw / self.slot_duration - 1e-9))

    def offsets(self, vp_trace: ViewportTrace) -> tuple[float, ...]:
        """Configured offsets, or seeded random ones on the 36 Hz lattice."""
        t = vp_trace.times
        latest = t[-1] + 1.0 / SAMPLE_RATE - self.trace_duration
        if latest < t[0] - 1e-6:
            raise SimulationError(f"viewport trace ({vp_trace.duration:.3f}s) shorter than the "
                                  f"{self.trace_duration:g}s run")
        if self.start_offsets is not None:
            for o in self.start_offsets:
                if not t[0] - 1e-6 <= o <= latest + 1e-6:
                    raise SimulationError(f"offset {o:g}s leaves less than {self.trace_duration:g}s of trace")
            return tuple(float(o) for o in self.start_offsets)
        rng = np.random.default_rng(self.seed)
        span = int(math.floor((latest - t[0]) * SAMPLE_RATE + 1e-6))
        ks = rng.integers(0, span + 1, size=self.num_offsets)
        return tuple(float(t[0] + k / SAMPLE_RATE) for k in ks)


@dataclass(frozen=True)
class SlotMetrics:
    slot: int
    utility: float
    resident_splats: int
    bytes: int
    pred_mbps: float
    actual_mbps: float
    pose_mae: tuple[float, ...] = (0.0,) * 6

    def row(self) -> list:
        return [self.slot, self.utility, self.resident_splats, self.bytes, self.pred_mbps, self.actual_mbps,
                *self.pose_mae]


@dataclass
class SimResult:
    scheduler: str
    offset: float
    metrics: list[SlotMetrics]
    decisions: list[SlotDecision] = field(default_factory=list, repr=False)
    trace: str = ""

    @property
    def summary(self) -> dict:
        m = self.metrics
        n = len(m)
        return {
            "trace": self.trace,
            "scheduler": self.scheduler,
            "offset": self.offset,
            "slots": n,
            "mean_utility": sum(x.utility for x in m) / n if n else 0.0,
            "total_bytes": sum(x.bytes for x in m),
            "final_resident_splats": m[-1].resident_splats if n else 0,
            "mean_pose_mae": sum(sum(x.pose_mae) for x in m) / (6 * n) if n else 0.0,
            "bandwidth_mae": sum(abs(x.pred_mbps - x.actual_mbps) for x in m) / n if n else 0.0,
        }


# ---------------------------------------------------------------------------
# inputs shared by every run on one scene
# ---------------------------------------------------------------------------

class SceneContext:
    """Scene-derived tables reused across runs: costs, utility source, sort order, version tree."""

    def __init__(self, scene: Scene, *, costs: CostTable | None = None, utility=None, scores=None,
                 tree: VersionTree | None = None, closeness_mode: str = "camera"):
        self.scene = scene
        self.costs = costs or build_cost_table(scene)
        self.closeness_mode = closeness_mode
        self._direct = None
        self.utility = utility
        self.scores = scores
        self._tree = tree

    @property
    def direct(self) -> DirectUtility:
        if self._direct is None:
            self._direct = DirectUtility(self.scene, self.closeness_mode)
        return self._direct

    @property
    def layer_source(self):
        return self.utility if self.utility is not None else self.direct

    @property
    def tree(self) -> VersionTree:
        if self._tree is None:
            self._tree = build_version_tree(self.scene, self.costs)
        return self._tree

    def new_state(self, scheduler: str) -> DownloadState:
        mode = STATE_MODE[scheduler]
        if mode in ("separate", "separate_whole"):
            return DownloadState(self.costs, mode, stream=progressive_stream(self.costs, mode == "separate_whole"))
        if mode == "sort":
            return DownloadState(self.costs, mode,
                                 stream=sort_stream(self.scene, self.scores, self.costs.model.bytes_full))
        if mode == "hierarchy":
            return DownloadState(self.costs, mode, tree=self.tree)
        return DownloadState(self.costs, mode)

    def source_for(self, config: "SimConfig"):
        """The grid only when ``config.use_grid``; any other injected source always."""
        if isinstance(self.utility, UtilityGrid):
            return self.utility if config.use_grid else self.direct
        if config.use_grid:
            raise SimulationError("use_grid is set but no utility grid was supplied")
        return self.layer_source

    def layer_table(self, vp: Viewport, source=None) -> np.ndarray:
        source = self.layer_source if source is None else source
        table = np.asarray(source.layer_utilities(vp), dtype=np.float64)
        if table.shape != self.costs.delta_c[:, 1:].shape:
            raise SimulationError(f"utility table shape {table.shape} does not match the scene's "
                                  f"{self.costs.delta_c[:, 1:].shape} (object, layer) bundles")
        return table


# ---------------------------------------------------------------------------
# slot loop
# ---------------------------------------------------------------------------

def _budget_bytes(mbps: float, seconds: float) -> int:
    """Decimal megabits per second over ``seconds`` as whole bytes."""
    if not math.isfinite(mbps):
        return 2 ** 62
    return int(math.floor(mbps * seconds * 1e6 / 8 + 1e-6))


def _pose_error(pred: Viewport, actual: Viewport) -> tuple[float, ...]:
    d = np.abs(pred.pose - actual.pose)
    d[3:] = np.abs(wrap_angle(pred.pose[3:] - actual.pose[3:]))
    return tuple(float(x) for x in d)


def _check_coverage(vp_trace: ViewportTrace, bw_trace: BandwidthTrace, offset: float, config: SimConfig) -> None:
    end = offset + config.trace_duration
    if end > vp_trace.times[-1] + 1.0 / SAMPLE_RATE + 1e-6 or offset < vp_trace.times[0] - 1e-6:
        raise SimulationError(f"viewport trace does not cover [{offset:g}, {end:g}]s")
    if offset < bw_trace.times[0] - 1e-6:
        raise SimulationError(f"bandwidth trace starts after offset {offset:g}s")


def run_simulation(scene: Scene | SceneContext, vp_trace: ViewportTrace, bw_trace: BandwidthTrace,
                   scheduler: str, config: SimConfig = SimConfig(), *, offset: float | None = None,
                   utility=None, scores=None, on_decision=None) -> SimResult:
    """One run from one start offset; deterministic in its inputs.

    ``on_decision(slot, instance, decision)`` is called after every knapsack
    solve, for diagnostics.
    """
    if scheduler not in SCHEDULERS:
        raise SimulationError(f"unknown scheduler {scheduler!r}")
    ctx = scene if isinstance(scene, SceneContext) else SceneContext(
        scene, utility=utility, scores=scores, closeness_mode=config.closeness_mode)
    if offset is None:
        offset = config.offsets(vp_trace)[0]
    if scheduler == "preload":
        return run_preload_baseline(ctx, vp_trace, config, offset=offset)
    _check_coverage(vp_trace, bw_trace, offset, config)
    source = ctx.source_for(config)
    T = config.slot_duration
    H = config.horizon_slots
    splat_level = STATE_MODE[scheduler] in ("sort", "hierarchy")
    planned = ctx.new_state(scheduler)
    resident = planned.copy()
    queue: deque[list] = deque()   # [pick, bytes still to deliver]
    metrics, decisions = [], []
    origin = float(vp_trace.times[0])
    for k in range(config.num_slots):
        tau = offset + k * T
        ends = [tau + (h + 1) * T for h in range(H)]
        # (1) viewport over the horizon
        if config.ground_truth_viewport:
            poses = [vp_trace.at(t).replace(timestamp=t) for t in ends]
        else:
            hist = vp_trace.history(tau, config.hw)
            if len(hist) >= 2:
                poses = predict_viewport(hist, config.predictor, times=ends)
            else:
                poses = [vp_trace.at(tau).replace(timestamp=t) for t in ends]
        actual_vp = vp_trace.at(ends[0])
        # (2) bandwidth
        actual_mbps = actual_bandwidth(bw_trace, tau, T, origin)
        if config.ground_truth_bandwidth:
            pred_mbps = actual_mbps
        else:
            pred_mbps = predict_bandwidth(bw_trace, tau, config.predictor, origin)
        # (3) budget net of bytes still queued from earlier slots
        budget = _budget_bytes(pred_mbps, T)
        queued = sum(q[1] for q in queue)
        avail = max(0, budget - queued)
        # (4)+(5) utility over the horizon and the scheduler
        if scheduler in ("knapsack", "distill"):
            cum = sum(ctx.layer_table(p, source) for p in poses)
            if scheduler == "knapsack":
                instance = build_instance(planned, cum, ctx.costs, avail, config.resolution)
                decision = schedule_knapsack(instance)
                if on_decision is not None:
                    on_decision(k, instance, decision)
            else:
                decision = schedule_distill(planned, cum, ctx.costs, avail, config.compact_factor, config.resolution)
        elif scheduler in ("progressive", "progressive-whole"):
            decision = schedule_progressive(planned, avail)
        elif scheduler == "sort":
            decision = schedule_sort(planned, avail)
        else:
            u = sum(ctx.direct.splat_utilities(p) for p in poses)
            decision = schedule_hierarchy(planned, ctx.tree, ctx.tree.node_values(u), avail)
        planned.apply_decision(decision)
        decisions.append(decision)
        queue.extend([p, p.bytes] for p in decision.picks)
        # (6) delivery at the actual rate, FIFO
        capacity = _budget_bytes(actual_mbps, T)
        delivered = 0
        while queue:
            pick, left = queue[0]
            take = min(left, capacity - delivered)
            delivered += take
            queue[0][1] = left - take
            if queue[0][1] > 0:
                break
            resident.apply(queue.popleft()[0])
        # (7) score what is actually held at the actual pose
        table = ctx.layer_table(actual_vp, source)
        splat_u = ctx.direct.splat_utilities(actual_vp) if splat_level else None
        achieved = resident.score(table, splat_u, config.compact_factor)
        metrics.append(SlotMetrics(k, achieved, resident.resident_splats, delivered, pred_mbps, actual_mbps,
                                   _pose_error(poses[0], actual_vp)))
        log.debug("slot %d: budget %d B, picked %d B, delivered %d B, utility %.6g",
                  k, budget, decision.bytes_used, delivered, achieved)
    return SimResult(scheduler, offset, metrics, decisions)


def run_preload_baseline(scene: Scene | SceneContext, vp_trace: ViewportTrace, config: SimConfig = SimConfig(), *,
                         offset: float | None = None, utility=None) -> SimResult:
    """Everything resident from the start; nothing is downloaded."""
    ctx = scene if isinstance(scene, SceneContext) else SceneContext(
        scene, utility=utility, closeness_mode=config.closeness_mode)
    if offset is None:
        offset = config.offsets(vp_trace)[0]
    end = offset + config.trace_duration
    if end > vp_trace.times[-1] + 1.0 / SAMPLE_RATE + 1e-6:
        raise SimulationError(f"viewport trace does not cover [{offset:g}, {end:g}]s")
    state = ctx.new_state("preload")
    source = ctx.source_for(config)
    metrics = []
    for k in range(config.num_slots):
        vp = vp_trace.at(offset + (k + 1) * config.slot_duration)
        metrics.append(SlotMetrics(k, state.score(ctx.layer_table(vp, source)), state.resident_splats, 0, 0.0, 0.0))
    return SimResult("preload", offset, metrics)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if v == 0:
            return "0"
        return format(v, ".10g")
    return str(v)


def emit_report(metrics: Sequence[SlotMetrics], path) -> None:
    """Per-slot timeline CSV."""
    ensure_parent(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for m in metrics:
            w.writerow([fmt(v) for v in m.row()])


def write_summary(rows: Sequence[dict], path) -> None:
    ensure_parent(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            w.writerow([fmt(r[c]) for c in SUMMARY_COLUMNS])


def read_metrics(path) -> list[SlotMetrics]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        head = next(reader, None)
        if head != METRIC_COLUMNS:
            raise ValueError(f"{path}: not a metrics file")
        out = []
        for row in reader:
            out.append(SlotMetrics(int(row[0]), float(row[1]), int(row[2]), int(row[3]), float(row[4]),
                                   float(row[5]), tuple(float(x) for x in row[6:12])))
    return out


def read_summary(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
