"""Viewport and bandwidth prediction, trace files and synthetic traces."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .utility import Viewport, wrap_angle

SAMPLE_RATE = 36.0          # Hz, headset tracking and interpolated bandwidth
SPACING_TOL = 1e-6
TRACE_KINDS = ("ellipse", "circle", "spiral", "spin", "testset_sequence")


@dataclass(frozen=True)
class PredictorConfig:
    hw: float = 0.5   # history window, seconds
    pw: float = 1.0   # prediction window, seconds

    def __post_init__(self):
        if self.hw <= 0 or self.pw <= 0:
            raise ValueError("hw and pw must be positive")


@dataclass
class ViewportTrace:
    samples: list[Viewport]
    source: str = "synthetic"

    def __post_init__(self):
        if self.source not in ("real", "synthetic"):
            raise ValueError(f"unknown trace source {self.source!r}")
        self._times = np.array([s.timestamp for s in self.samples], dtype=np.float64)
        t = self._times
        if len(t) > 1:
            gaps = np.diff(t)
            if np.any(gaps <= 0):
                raise ValueError("viewport trace timestamps must be strictly increasing")
            if np.any(np.abs(gaps - 1.0 / SAMPLE_RATE) > SPACING_TOL):
                k = int(np.flatnonzero(np.abs(gaps - 1.0 / SAMPLE_RATE) > SPACING_TOL)[0])
                raise ValueError(f"sample {k + 1}: spacing {gaps[k]:.9f}s is not 1/{SAMPLE_RATE:g}s")

    @property
    def times(self) -> np.ndarray:
        return self._times

    @property
    def poses(self) -> np.ndarray:
        return np.array([s.pose for s in self.samples], dtype=np.float64).reshape(-1, 6)

    @property
    def duration(self) -> float:
        return float(self.samples[-1].timestamp - self.samples[0].timestamp) if self.samples else 0.0

    def __len__(self):
        return len(self.samples)

    def history(self, now: float, hw: float) -> list[Viewport]:
        """Samples with ``now - hw < t <= now``."""
        t = self.times
        lo = np.searchsorted(t, now - hw + 1e-9, side="left")
        hi = np.searchsorted(t, now + 1e-9, side="right")
        return self.samples[lo:hi]

    def at(self, time: float) -> Viewport:
        """Nearest sample at or before ``time`` (clamped to the trace)."""
        t = self.times
        k = int(np.clip(np.searchsorted(t, time + 1e-9, side="right") - 1, 0, len(t) - 1))
        return self.samples[k]


@dataclass
class BandwidthTrace:
    times: np.ndarray
    mbps: np.ndarray
    scale_factor: float = 1.0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.mbps = np.asarray(self.mbps, dtype=np.float64)
        if self.times.shape != self.mbps.shape or self.times.ndim != 1:
            raise ValueError("bandwidth trace needs matching 1-D time and throughput arrays")
        if len(self.times) == 0:
            raise ValueError("empty bandwidth trace")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("bandwidth trace timestamps must be strictly increasing")
        if np.any(self.mbps < 0) or not np.all(np.isfinite(self.mbps)):
            raise ValueError("bandwidth samples must be finite and non-negative")

    @property
    def samples(self) -> list[tuple[float, float]]:
        return list(zip(self.times.tolist(), self.mbps.tolist()))

    @property
    def mean(self) -> float:
        return float(self.mbps.mean())

    def interpolated(self, lattice) -> np.ndarray:
        return np.interp(lattice, self.times, self.mbps)

    def scaled(self, factor: float) -> "BandwidthTrace":
        return BandwidthTrace(self.times, self.mbps * factor, self.scale_factor * factor)


# ---------------------------------------------------------------------------
# viewport prediction
# ---------------------------------------------------------------------------

def unwrap_relative(angles) -> np.ndarray:
    """Angles relative to the first one, with per-step jumps beyond 180 deg treated as wraps."""
    a = np.asarray(angles, dtype=np.float64)
    if a.size == 0:
        return a
    steps = wrap_angle(np.diff(a)) if a.size > 1 else np.zeros(0)
    return np.concatenate([[0.0], np.cumsum(steps)])


class LinearViewportModel:
    """Per-feature OLS against sample order, fitted on one history window."""

    def __init__(self, history: Sequence[Viewport]):
        if len(history) < 2:
            raise ValueError("viewport prediction needs at least 2 history samples")
        poses = np.array([vp.pose for vp in history], dtype=np.float64)
        if not np.all(np.isfinite(poses)):
            raise ValueError("non-finite values in viewport history")
        self.template = history[-1]
        self.t_first = history[0].timestamp
        self.t_last = history[-1].timestamp
        self.n = len(history)
        x = np.arange(self.n, dtype=np.float64)
        self.base = poses[0, 3:].copy()
        cols = [poses[:, 0], poses[:, 1], poses[:, 2]] + [unwrap_relative(poses[:, k]) for k in (3, 4, 5)]
        xm = x.mean()
        sxx = ((x - xm) ** 2).sum()
        self.slope = np.empty(6)
        self.intercept = np.empty(6)
        for k, y in enumerate(cols):
            ym = y.mean()
            self.slope[k] = ((x - xm) * (y - ym)).sum() / sxx
            self.intercept[k] = ym - self.slope[k] * xm

    def order_of(self, time: float) -> float:
        return self.n - 1 + (time - self.t_last) * SAMPLE_RATE

    def raw(self, order) -> np.ndarray:
        """Unwrapped feature values at (fractional) sample order(s); angles relative to the first sample."""
        order = np.asarray(order, dtype=np.float64)
        return self.intercept + np.multiply.outer(order, self.slope)

    def at(self, time: float) -> Viewport:
        v = self.raw(self.order_of(time))
        yaw, pitch, roll = (wrap_angle(self.base + v[3:])).tolist()
        pitch = float(np.clip(wrap_angle(pitch), -90.0, 90.0))
        return self.template.replace(position=tuple(v[:3]), orientation=(yaw, pitch, roll), timestamp=time)


def predict_viewport(history: Sequence[Viewport], config: PredictorConfig = PredictorConfig(),
                     times: Sequence[float] | None = None) -> list[Viewport]:
    """Poses at 36 Hz over the prediction window following the last history sample.

    With ``times`` the fitted model is evaluated at those instants instead.
    """
    model = LinearViewportModel(history)
    if times is not None:
        return [model.at(t) for t in times]
    steps = int(round(config.pw * SAMPLE_RATE))
    return [model.at(model.t_last + m / SAMPLE_RATE) for m in range(1, steps + 1)]


# ---------------------------------------------------------------------------
# bandwidth prediction
# ---------------------------------------------------------------------------

def harmonic_mean(values) -> float:
    """n / sum(1/a_i); any zero sample makes the result 0 (a stall)."""
    a = np.asarray(values, dtype=np.float64)
    if a.size == 0:
        raise ValueError("harmonic mean of an empty window")
    if np.any(a <= 0):
        return 0.0
    return float(a.size / np.sum(1.0 / a))


def window_lattice(now: float, hw: float, origin: float = 0.0) -> np.ndarray:
    """36 Hz lattice points ``origin + k/36`` inside ``(now - hw, now]``."""
    k_hi = math.floor((now - origin) * SAMPLE_RATE + 1e-6)
    k_lo = math.floor((now - hw - origin) * SAMPLE_RATE + 1e-6) + 1
    return origin + np.arange(k_lo, k_hi + 1) / SAMPLE_RATE


def predict_bandwidth(trace: BandwidthTrace, now: float, config: PredictorConfig = PredictorConfig(),
                      origin: float = 0.0) -> float:
    """Harmonic mean of the trace interpolated onto the 36 Hz lattice over the history window."""
    lattice = window_lattice(now, config.hw, origin)
    lattice = lattice[lattice >= trace.times[0] - 1e-9]
    if lattice.size == 0:
        raise ValueError(f"no bandwidth history before t={now}")
    return harmonic_mean(trace.interpolated(lattice))


def actual_bandwidth(trace: BandwidthTrace, start: float, duration: float, origin: float = 0.0) -> float:
    """Mean interpolated throughput over ``[start, start + duration)``."""
    k_lo = math.ceil((start - origin) * SAMPLE_RATE - 1e-6)
    k_hi = math.ceil((start + duration - origin) * SAMPLE_RATE - 1e-6)
    lattice = origin + np.arange(k_lo, max(k_hi, k_lo + 1)) / SAMPLE_RATE
    return float(trace.interpolated(lattice).mean())


# ---------------------------------------------------------------------------
# trace files
# ---------------------------------------------------------------------------

VIEWPORT_COLUMNS = ["t", "x", "y", "z", "yaw", "pitch", "roll"]
BANDWIDTH_COLUMNS = ["t", "mbps"]


def _read_rows(path, columns) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            head = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if [h.strip() for h in head] != columns:
            raise ValueError(f"{path}: line 1: expected columns {','.join(columns)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != len(columns):
                raise ValueError(f"{path}: line {lineno}: expected {len(columns)} fields, got {len(row)}")
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise ValueError(f"{path}: line {lineno}: non-finite value")
            rows.append(vals)
    a = np.asarray(rows, dtype=np.float64).reshape(-1, len(columns))
    bad = np.flatnonzero(np.diff(a[:, 0]) <= 0)
    if bad.size:
        raise ValueError(f"{path}: line {bad[0] + 3}: timestamps not strictly increasing")
    return a


def load_viewport_trace(path, template: Viewport | None = None, source: str = "real") -> ViewportTrace:
    template = template or Viewport()
    a = _read_rows(path, VIEWPORT_COLUMNS)
    return ViewportTrace([template.replace(position=tuple(r[1:4]), orientation=tuple(r[4:7]), timestamp=r[0])
                          for r in a], source)


def load_bandwidth_trace(path, scale: float = 1.0) -> BandwidthTrace:
    a = _read_rows(path, BANDWIDTH_COLUMNS)
    if np.any(a[:, 1] < 0):
        raise ValueError(f"{path}: line {int(np.flatnonzero(a[:, 1] < 0)[0]) + 2}: negative throughput")
    return BandwidthTrace(a[:, 0], a[:, 1] * scale, scale)


def _g(v: float) -> str:
    return repr(float(v))


def save_viewport_trace(trace: ViewportTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VIEWPORT_COLUMNS)
        for vp in trace.samples:
            w.writerow([_g(vp.timestamp), *map(_g, vp.position), *map(_g, vp.orientation)])


def save_bandwidth_trace(trace: BandwidthTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BANDWIDTH_COLUMNS)
        for t, v in zip(trace.times, trace.mbps):
            w.writerow([_g(t), _g(v)])


# ---------------------------------------------------------------------------
# synthetic traces
# ---------------------------------------------------------------------------

def _facing(pos, target) -> tuple[float, float]:
    """Yaw and pitch that point the -z axis from ``pos`` toward ``target``."""
    d = np.asarray(target, dtype=np.float64) - np.asarray(pos, dtype=np.float64)
    yaw = math.degrees(math.atan2(-d[0], -d[2]))
    pitch = math.degrees(math.atan2(d[1], math.hypot(d[0], d[2])))
    return yaw, pitch


def generate_synthetic_trace(kind: str, duration: float, seed: int = 0, *, center=(0.0, 0.0, 0.0),
                             radius: float = 2.0, eye_height: float = 0.0, period: float = 20.0,
                             template: Viewport | None = None) -> ViewportTrace:
    """36 Hz parametric user path; deterministic for a given seed."""
    if kind not in TRACE_KINDS:
        raise ValueError(f"unknown trace kind {kind!r}; expected one of {TRACE_KINDS}")
    if duration <= 0:
        raise ValueError("duration must be positive")
    template = template or Viewport()
    rng = np.random.default_rng(seed)
    n = int(round(duration * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    c = np.asarray(center, dtype=np.float64)
    phase = rng.uniform(0, 2 * math.pi)
    direction = 1.0 if rng.random() < 0.5 else -1.0
    theta = phase + direction * 2 * math.pi * t / period
    look = np.broadcast_to(c, (n, 3))
    if kind in ("circle", "ellipse", "spiral"):
        if kind == "circle":
            rx = rz = np.full(n, radius)
        elif kind == "ellipse":
            rx, rz = np.full(n, radius), np.full(n, 0.6 * radius)
        else:
            rx = rz = radius * (1.0 - 0.5 * t / max(duration, 1e-9))
        pos = np.stack([c[0] + rx * np.cos(theta), c[1] + eye_height + 0 * t, c[2] + rz * np.sin(theta)], -1)
        if kind == "spiral":
            pos[:, 1] += 0.25 * radius * t / max(duration, 1e-9)
        ori = np.array([(*_facing(p, q), 0.0) for p, q in zip(pos, look)]).reshape(n, 3)
    elif kind == "spin":
        pos = np.broadcast_to(c + [0.0, eye_height, 0.0], (n, 3)).copy()
        rate = direction * 360.0 / period
        ori = np.stack([wrap_angle(math.degrees(phase) + rate * t), 0 * t, 0 * t], -1)
    else:
        k = max(3, int(math.ceil(duration / 5.0)) + 1)
        angles = np.sort(rng.uniform(0, 2 * math.pi, size=k))
        dist = radius * rng.uniform(0.7, 1.3, size=k)
        views = np.stack([c[0] + dist * np.cos(angles), c[1] + eye_height + rng.normal(scale=0.1, size=k),
                          c[2] + dist * np.sin(angles)], -1)
        knots = np.linspace(0, t[-1] if n > 1 else 0.0, k)
        pos = np.stack([np.interp(t, knots, views[:, i]) for i in range(3)], -1)
        ori = np.array([(*_facing(p, c), 0.0) for p in pos]).reshape(n, 3)
    samples = [template.replace(position=tuple(p), orientation=tuple(o), timestamp=float(ti))
               for p, o, ti in zip(pos, ori, t)]
    return ViewportTrace(samples, "synthetic")


def generate_bandwidth_trace(duration: float, seed: int = 0, *, mean: float = 590.0, rate: float = 1.0,
                             volatility: float = 0.35, memory: float = 0.85) -> BandwidthTrace:
    """Log-AR(1) throughput trace sampled at ``rate`` Hz, rescaled to the given mean."""
    rng = np.random.default_rng(seed)
    n = int(round(duration * rate)) + 1
    z = np.empty(n)
    z[0] = rng.normal()
    for k in range(1, n):
        z[k] = memory * z[k - 1] + math.sqrt(1 - memory ** 2) * rng.normal()
    v = np.exp(volatility * z)
    v *= mean / v.mean()
    return BandwidthTrace(np.arange(n) / rate, v)
