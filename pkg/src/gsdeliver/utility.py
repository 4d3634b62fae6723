"""Viewport-dependent splat utility.

Per-splat utility is ``closeness * overlap * opacity``:

* closeness = ``1 / (1 + distance)`` between the splat center and the camera
  (or the central view ray with ``closeness_mode="ray"``),
* overlap = area of the projected 1-sigma ellipse, clipped to the image
  rectangle and divided by the image area,
* opacity is the splat's own.

The 3D covariance is pushed through the linearized perspective projection
(Jacobian at the splat center).  Clipping is computed exactly: the ellipse is
whitened into the unit disk and the image rectangle, mapped into the same
frame, is intersected with it edge by edge.

Camera convention: orientation is (yaw, pitch, roll) in degrees, applied as
intrinsic rotations about y, x, z; right-handed, y up, looking down -z.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .scene import Scene

NEAR_PLANE = 0.01
DET_FLOOR = 1e-12
GRID_POSITIONS_PER_AXIS = 10    # 10**3 = 1,000 positions
GRID_ORIENTATIONS_PER_AXIS = 12  # 12**3 = 1,728 orientations
GRID_MAGIC = b"L3GU"
GRID_VERSION = 1
CLOSENESS_MODES = ("camera", "ray")


def wrap_angle(a):
    """Map degrees into [-180, 180)."""
    w = (np.asarray(a, dtype=np.float64) + 180.0) % 360.0 - 180.0
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class Viewport:
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    orientation: tuple[float, float, float] = (0.0, 0.0, 0.0)  # yaw, pitch, roll (deg)
    fov_y: float = 90.0
    width: int = 1024
    height: int = 1024
    timestamp: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.fov_y < 180.0:
            raise ValueError(f"fov_y {self.fov_y} outside (0, 180)")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("viewport width and height must be positive")
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(self, "orientation", tuple(wrap_angle(a) for a in self.orientation))

    @property
    def aspect(self) -> float:
        return self.width / self.height

    @property
    def focal(self) -> float:
        """Focal length in pixels (square pixels)."""
        return 0.5 * self.height / math.tan(math.radians(self.fov_y) / 2)

    def rotation(self) -> np.ndarray:
        return euler_to_matrix(np.asarray(self.orientation))

    def replace(self, **kw) -> "Viewport":
        d = dict(position=self.position, orientation=self.orientation, fov_y=self.fov_y,
                 width=self.width, height=self.height, timestamp=self.timestamp)
        d.update(kw)
        return Viewport(**d)

    @property
    def pose(self) -> np.ndarray:
        return np.array([*self.position, *self.orientation])


def euler_to_matrix(ypr) -> np.ndarray:
    """Camera-to-world rotation ``Ry(yaw) @ Rx(pitch) @ Rz(roll)``; ``ypr`` shape (..., 3) degrees."""
    ypr = np.radians(np.asarray(ypr, dtype=np.float64))
    y, p, r = np.moveaxis(ypr, -1, 0)
    cy, sy, cp, sp, cr, sr = np.cos(y), np.sin(y), np.cos(p), np.sin(p), np.cos(r), np.sin(r)
    return np.stack([
        np.stack([cy * cr + sy * sp * sr, -cy * sr + sy * sp * cr, sy * cp], -1),
        np.stack([cp * sr, cp * cr, -sp], -1),
        np.stack([-sy * cr + cy * sp * sr, sy * sr + cy * sp * cr, cy * cp], -1),
    ], -2)


@dataclass(frozen=True)
class UtilityTerms:
    closeness: float
    overlap: float
    opacity: float
    utility: float
    degenerate: bool = False


class SplatArrays:
    """float64 views of the scene attributes the utility needs."""

    def __init__(self, scene: Scene):
        self.positions = scene.positions.astype(np.float64)
        self.cov = scene.covariances()
        self.opacities = scene.opacities.astype(np.float64)

    def subset(self, rows) -> "SplatArrays":
        out = object.__new__(SplatArrays)
        out.positions = self.positions[rows]
        out.cov = self.cov[rows]
        out.opacities = self.opacities[rows]
        return out

    def __len__(self):
        return len(self.opacities)


# ---------------------------------------------------------------------------
# exact ellipse / rectangle clipping
# ---------------------------------------------------------------------------

def _sector(u, v):
    """Signed area of the unit-disk sector swept from direction u to v."""
    cross = u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]
    dot = u[..., 0] * v[..., 0] + u[..., 1] * v[..., 1]
    return 0.5 * np.arctan2(cross, dot)


def disk_triangle_area(a, b):
    """Signed area of unit disk ∩ triangle(origin, a, b); a, b shape (..., 2)."""
    d = b - a
    A = np.einsum("...k,...k->...", d, d)
    B = np.einsum("...k,...k->...", a, d)
    C = np.einsum("...k,...k->...", a, a) - 1.0
    Asafe = np.where(A > 0, A, 1.0)
    root = np.sqrt(np.maximum(B * B - A * C, 0.0))
    t1 = np.clip((-B - root) / Asafe, 0.0, 1.0)
    t2 = np.clip((-B + root) / Asafe, 0.0, 1.0)
    p1 = a + t1[..., None] * d
    p2 = a + t2[..., None] * d
    tri = 0.5 * (p1[..., 0] * p2[..., 1] - p1[..., 1] * p2[..., 0])
    area = _sector(a, p1) + tri + _sector(p2, b)
    return np.where(A > 0, area, 0.0)


def clipped_ellipse_area(cu, cv, uu, uv, vv, half_w, half_h):
    """Area of the ellipse ``{x : (x-c)^T S^-1 (x-c) <= 1}`` inside ``[-hw,hw] x [-hh,hh]``."""
    det = uu * vv - uv * uv
    l11 = np.sqrt(uu)
    l21 = uv / l11
    l22 = np.sqrt(det) / l11
    corners = np.array([[-half_w, -half_h], [half_w, -half_h], [half_w, half_h], [-half_w, half_h]])
    q = np.empty(np.shape(cu) + (4, 2))
    for k, (x, y) in enumerate(corners):
        q1 = (x - cu) / l11
        q[..., k, 0] = q1
        q[..., k, 1] = (y - cv - l21 * q1) / l22
    total = np.zeros(np.shape(cu))
    for k in range(4):
        total += disk_triangle_area(q[..., k, :], q[..., (k + 1) % 4, :])
    return np.abs(total) * np.sqrt(det)


# ---------------------------------------------------------------------------
# vectorized per-splat terms
# ---------------------------------------------------------------------------

def splat_terms(arrays: SplatArrays, cam_pos, R, focal, width, height,
                closeness_mode: str = "camera", near: float = NEAR_PLANE):
    """Closeness, overlap and degeneracy for P poses x N splats.

    ``cam_pos`` is (P, 3), ``R`` is (P, 3, 3) camera-to-world.  Returns three
    (P, N) arrays.
    """
    if closeness_mode not in CLOSENESS_MODES:
        raise ValueError(f"unknown closeness mode {closeness_mode!r}")
    cam_pos = np.atleast_2d(cam_pos)
    R = R.reshape(-1, 3, 3)
    rel = arrays.positions[None, :, :] - cam_pos[:, None, :]
    c0, c1, c2 = R[:, None, :, 0], R[:, None, :, 1], R[:, None, :, 2]
    xc = np.einsum("pnk,pnk->pn", rel, np.broadcast_to(c0, rel.shape))
    yc = np.einsum("pnk,pnk->pn", rel, np.broadcast_to(c1, rel.shape))
    depth = -np.einsum("pnk,pnk->pn", rel, np.broadcast_to(c2, rel.shape))
    dist = np.sqrt(np.einsum("pnk,pnk->pn", rel, rel))
    if closeness_mode == "camera":
        closeness = 1.0 / (1.0 + dist)
    else:
        ray = np.where(depth > 0, np.hypot(xc, yc), dist)
        closeness = 1.0 / (1.0 + ray)

    front = depth > near
    d = np.where(front, depth, 1.0)
    a = xc / d
    b = yc / d
    # rows of the projection Jacobian expressed in world coordinates
    k = (focal / d)[..., None]
    m1 = k * (c0 + a[..., None] * c2)
    m2 = k * (c1 + b[..., None] * c2)
    S1 = np.einsum("nkl,pnl->pnk", arrays.cov, m1)
    S2 = np.einsum("nkl,pnl->pnk", arrays.cov, m2)
    uu = np.einsum("pnk,pnk->pn", m1, S1)
    uv = np.einsum("pnk,pnk->pn", m2, S1)
    vv = np.einsum("pnk,pnk->pn", m2, S2)
    cu = focal * a
    cv = focal * b
    det = uu * vv - uv * uv
    scale = np.maximum(uu * vv, 1e-300)
    degenerate = front & ~((det > DET_FLOOR * scale) & (det > 0) & (uu > 0))
    ok = front & ~degenerate

    hw, hh = 0.5 * width, 0.5 * height
    hx = np.sqrt(np.where(ok, uu, 0.0))
    hy = np.sqrt(np.where(ok, vv, 0.0))
    inside = ok & (np.abs(cu) + hx <= hw) & (np.abs(cv) + hy <= hh)
    outside = ok & ((np.abs(cu) - hx >= hw) | (np.abs(cv) - hy >= hh))
    area = np.zeros_like(uu)
    area[inside] = math.pi * np.sqrt(det[inside])
    straddle = ok & ~inside & ~outside
    if np.any(straddle):
        area[straddle] = clipped_ellipse_area(cu[straddle], cv[straddle], uu[straddle], uv[straddle],
                                              vv[straddle], hw, hh)
    overlap = area / (width * height)
    return closeness, overlap, degenerate


def viewport_utilities(arrays: SplatArrays, vp: Viewport, closeness_mode: str = "camera") -> np.ndarray:
    """Per-splat utility (N,) for a single viewport."""
    clo, ovl, _ = splat_terms(arrays, np.asarray(vp.position)[None], vp.rotation()[None],
                              vp.focal, vp.width, vp.height, closeness_mode)
    return clo[0] * ovl[0] * arrays.opacities


def splat_utility(splat, vp: Viewport, closeness_mode: str = "camera") -> UtilityTerms:
    """Utility terms of one :class:`~gsdeliver.scene.Splat` for one viewport."""
    from .scene import quaternion_to_matrix

    arrays = object.__new__(SplatArrays)
    arrays.positions = np.asarray([splat.position], dtype=np.float64)
    Rs = quaternion_to_matrix(np.asarray([splat.rotation]))
    s2 = np.asarray([splat.scale], dtype=np.float64) ** 2
    arrays.cov = np.einsum("nij,nj,nkj->nik", Rs, s2, Rs)
    arrays.opacities = np.asarray([splat.opacity], dtype=np.float64)
    clo, ovl, deg = splat_terms(arrays, np.asarray(vp.position)[None], vp.rotation()[None],
                                vp.focal, vp.width, vp.height, closeness_mode)
    c, o, op = float(clo[0, 0]), float(ovl[0, 0]), float(splat.opacity)
    return UtilityTerms(c, o, op, c * o * op, bool(deg[0, 0]))


# ---------------------------------------------------------------------------
# object / layer aggregation
# ---------------------------------------------------------------------------

class BundleIndex:
    """Maps splats to (object row, layer) bundles of a scene."""

    def __init__(self, scene: Scene):
        self.objects = scene.object_set
        self.num_layers = scene.num_layers
        rows = np.searchsorted(np.asarray(self.objects, dtype=np.int64), scene.object_ids) if len(scene) else \
            np.zeros(0, dtype=np.int64)
        self.flat = rows * self.num_layers + (scene.layer_ids - 1)
        self.size = len(self.objects) * self.num_layers

    def sums(self, values) -> np.ndarray:
        """Sum per-splat values into a (J, L) table; values may be (N,) or (P, N)."""
        values = np.asarray(values, dtype=np.float64)
        J, L = len(self.objects), self.num_layers
        if values.ndim == 1:
            return np.bincount(self.flat, weights=values, minlength=self.size).reshape(J, L)
        out = np.zeros((values.shape[0], self.size))
        np.add.at(out.T, self.flat, values.T)
        return out.reshape(-1, J, L)


class DirectUtility:
    """Evaluates layer utilities straight from splat geometry."""

    def __init__(self, scene: Scene, closeness_mode: str = "camera"):
        self.scene = scene
        self.arrays = SplatArrays(scene)
        self.bundles = BundleIndex(scene)
        self.objects = self.bundles.objects
        self.num_layers = scene.num_layers
        self.closeness_mode = closeness_mode

    def splat_utilities(self, vp: Viewport) -> np.ndarray:
        return viewport_utilities(self.arrays, vp, self.closeness_mode)

    def layer_utilities(self, vp: Viewport) -> np.ndarray:
        """ΔU as a (J, L) array: column l-1 is the utility added by layer l."""
        return self.bundles.sums(self.splat_utilities(vp))


class ScriptedUtility:
    """Fixed per-slot layer utilities, looked up by viewport timestamp.

    Slot ``s`` covers times in ``(t0 + s*T, t0 + (s+1)*T]`` so that a pose
    sampled at the end of a slot reads that slot's row.
    """

    def __init__(self, objects: Sequence[int], values, slot_duration: float = 1.0, t0: float = 0.0):
        self.objects = tuple(objects)
        self.values = np.asarray(values, dtype=np.float64)  # (S, J, L)
        self.num_layers = self.values.shape[2]
        self.slot_duration = slot_duration
        self.t0 = t0

    def layer_utilities(self, vp: Viewport) -> np.ndarray:
        s = int(math.ceil((vp.timestamp - self.t0) / self.slot_duration - 1e-9)) - 1
        s = min(max(s, 0), len(self.values) - 1)
        return self.values[s]


def object_utility(scene: Scene, l: int, j: int, vp: Viewport, closeness_mode: str = "camera") -> float:
    """``U_jl``: summed utility of object ``j``'s splats with layer_id <= l."""
    if not 0 <= l <= scene.num_layers:
        raise ValueError(f"version {l} outside [0, {scene.num_layers}]")
    if j not in scene.object_set:
        raise KeyError(f"unknown object id {j}")
    if l == 0:
        return 0.0
    rows = np.flatnonzero((scene.object_ids == j) & (scene.layer_ids <= l))
    arrays = SplatArrays(scene).subset(rows)
    return float(viewport_utilities(arrays, vp, closeness_mode).sum())


def cumulative_utility(delta_u: np.ndarray) -> np.ndarray:
    """Reverse-time prefix sums over the last axis: out[..., t] = sum_{t' >= t} delta_u[..., t']."""
    return np.flip(np.cumsum(np.flip(delta_u, axis=-1), axis=-1), axis=-1)


@dataclass
class UtilityTable:
    """Utilities indexed [object row, version/layer, slot]; index 0 of axis 1 is the empty version."""

    objects: tuple[int, ...]
    U: np.ndarray
    delta_U: np.ndarray
    cum_delta_U: np.ndarray

    @classmethod
    def from_delta(cls, objects, delta) -> "UtilityTable":
        """``delta`` has shape (J, L, S) for layers 1..L."""
        delta = np.asarray(delta, dtype=np.float64)
        J, L, S = delta.shape
        d = np.zeros((J, L + 1, S))
        d[:, 1:] = delta
        return cls(tuple(objects), np.cumsum(d, axis=1), d, cumulative_utility(d))

    @property
    def negative_layers(self) -> list[tuple[int, int, int]]:
        """(object, layer, slot) entries whose layer lowers the object's utility."""
        return [(self.objects[j], int(l), int(t)) for j, l, t in zip(*np.nonzero(self.delta_U < 0))]


def build_utility_table(scene: Scene, vps: Sequence[Viewport], closeness_mode: str = "camera") -> UtilityTable:
    if not vps:
        raise ValueError("need at least one slot viewport")
    src = DirectUtility(scene, closeness_mode)
    delta = np.stack([src.layer_utilities(vp) for vp in vps], axis=-1)
    return UtilityTable.from_delta(src.objects, delta)


# ---------------------------------------------------------------------------
# precomputed grid
# ---------------------------------------------------------------------------

def position_lattice(bounds, per_axis: int = GRID_POSITIONS_PER_AXIS) -> tuple[np.ndarray, np.ndarray]:
    """Cell-centered lattice inside ``bounds = (lo, hi)``; returns (axes (3, k), points (k**3, 3))."""
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    if np.any(hi <= lo):
        raise ValueError("grid bounds are degenerate")
    axes = np.stack([lo[i] + (np.arange(per_axis) + 0.5) * (hi[i] - lo[i]) / per_axis for i in range(3)])
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
    return axes, pts


def orientation_lattice(per_axis: int = GRID_ORIENTATIONS_PER_AXIS) -> tuple[np.ndarray, np.ndarray]:
    """Yaw and roll cover [-180, 180) from -180; pitch is cell-centered in [-90, 90]."""
    ang = -180.0 + np.arange(per_axis) * 360.0 / per_axis
    pitch = -90.0 + (np.arange(per_axis) + 0.5) * 180.0 / per_axis
    axes = np.stack([ang, pitch, ang])
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
    return axes, pts


def lattice_viewports(bounds, template: Viewport, pos_per_axis: int = 2, ori_per_axis: int = 4) -> list[Viewport]:
    """Small sample of the grid lattice (used as the default significance sample)."""
    _, pts = position_lattice(bounds, pos_per_axis)
    _, oris = orientation_lattice(ori_per_axis)
    return [template.replace(position=tuple(p), orientation=tuple(o)) for p in pts for o in oris]


@dataclass
class UtilityGrid:
    objects: tuple[int, ...]
    num_layers: int
    bounds: np.ndarray            # (2, 3)
    position_axes: np.ndarray     # (3, kp)
    orientation_axes: np.ndarray  # (3, ko)
    values: np.ndarray            # (P, O, J, L) float32
    template: Viewport = field(default_factory=Viewport)
    closeness_mode: str = "camera"

    @property
    def positions(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.position_axes, indexing="ij"), -1).reshape(-1, 3)

    @property
    def orientations(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.orientation_axes, indexing="ij"), -1).reshape(-1, 3)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[0], self.values.shape[1]

    def nearest(self, vp: Viewport) -> tuple[int, int]:
        pa, oa = self.position_axes, self.orientation_axes
        kp, ko = pa.shape[1], oa.shape[1]
        pidx = 0
        for i in range(3):
            step = pa[i, 1] - pa[i, 0] if kp > 1 else 1.0
            k = int(np.clip(np.floor((vp.position[i] - pa[i, 0]) / step + 0.5), 0, kp - 1))
            pidx = pidx * kp + k
        yaw, pitch, roll = vp.orientation
        ystep = 360.0 / ko
        yi = int(np.floor(wrap_angle(yaw - oa[0, 0]) % 360.0 / ystep + 0.5)) % ko
        ri = int(np.floor(wrap_angle(roll - oa[2, 0]) % 360.0 / ystep + 0.5)) % ko
        pstep = oa[1, 1] - oa[1, 0] if ko > 1 else 1.0
        pi = int(np.clip(np.floor((pitch - oa[1, 0]) / pstep + 0.5), 0, ko - 1))
        return pidx, (yi * ko + pi) * ko + ri

    def layer_utilities(self, vp: Viewport) -> np.ndarray:
        p, o = self.nearest(vp)
        return self.values[p, o].astype(np.float64)


def precompute_grid(
    scene: Scene,
    bounds,
    seed: int = 0,
    *,
    template: Viewport | None = None,
    positions_per_axis: int = GRID_POSITIONS_PER_AXIS,
    orientations_per_axis: int = GRID_ORIENTATIONS_PER_AXIS,
    splats_per_bundle: int | None = None,
    closeness_mode: str = "camera",
    chunk: int = 200_000,
    progress=None,
) -> UtilityGrid:
    """Tabulate ΔU for every (position, orientation) lattice sample.

    With ``splats_per_bundle`` set, each (object, layer) bundle is estimated
    from a seeded sample of that many splats, scaled by bundle size.
    """
    template = template or Viewport()
    paxes, ppts = position_lattice(bounds, positions_per_axis)
    oaxes, opts = orientation_lattice(orientations_per_axis)
    bundles = BundleIndex(scene)
    J, L = len(bundles.objects), scene.num_layers
    arrays = SplatArrays(scene)
    weights = np.ones(len(scene))
    rows = np.arange(len(scene))
    if splats_per_bundle is not None and len(scene):
        rng = np.random.default_rng(seed)
        keep = []
        for b in range(bundles.size):
            members = np.flatnonzero(bundles.flat == b)
            if members.size > splats_per_bundle:
                pick = np.sort(rng.choice(members, splats_per_bundle, replace=False))
                weights[pick] = members.size / splats_per_bundle
                keep.append(pick)
            else:
                keep.append(members)
        rows = np.sort(np.concatenate(keep)) if keep else rows
    sub = arrays.subset(rows)
    w = weights[rows] * sub.opacities
    flat = bundles.flat[rows]
    # (N, J*L) aggregation matrix
    agg = np.zeros((len(rows), J * L))
    agg[np.arange(len(rows)), flat] = w
    Rs = euler_to_matrix(opts)
    values = np.zeros((len(ppts), len(opts), J * L), dtype=np.float32)
    step = max(1, chunk // max(len(rows), 1))
    for pi, p in enumerate(ppts):
        for o0 in range(0, len(opts), step):
            Rc = Rs[o0:o0 + step]
            if len(rows):
                clo, ovl, _ = splat_terms(sub, np.broadcast_to(p, (len(Rc), 3)), Rc, template.focal,
                                          template.width, template.height, closeness_mode)
                values[pi, o0:o0 + len(Rc)] = (clo * ovl) @ agg
        if progress is not None:
            progress(pi + 1, len(ppts))
    return UtilityGrid(bundles.objects, L, np.asarray(bounds, dtype=np.float64).reshape(2, 3), paxes, oaxes,
                       values.reshape(len(ppts), len(opts), J, L), template, closeness_mode)


def grid_lookup(grid: UtilityGrid, vp: Viewport) -> dict[tuple[int, int], float]:
    """Nearest-sample ΔU for every (object, layer)."""
    table = grid.layer_utilities(vp)
    return {(j, l + 1): float(table[r, l]) for r, j in enumerate(grid.objects) for l in range(grid.num_layers)}


def save_grid(grid: UtilityGrid, path) -> None:
    P, O, J, L = grid.values.shape
    kp, ko = grid.position_axes.shape[1], grid.orientation_axes.shape[1]
    t = grid.template
    head = GRID_MAGIC + struct.pack("<HIIIIII", GRID_VERSION, P, O, J, L, kp, ko)
    head += struct.pack("<dIIB", t.fov_y, t.width, t.height, CLOSENESS_MODES.index(grid.closeness_mode))
    head += np.asarray(grid.bounds, dtype="<f8").tobytes()
    head += np.asarray(grid.objects, dtype="<i8").tobytes()
    head += np.asarray(grid.position_axes, dtype="<f8").tobytes()
    head += np.asarray(grid.orientation_axes, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(grid.values, dtype="<f4").tobytes())


def load_grid(path) -> UtilityGrid:
    data = Path(path).read_bytes()
    if data[:4] != GRID_MAGIC:
        raise ValueError(f"{path}: not a utility grid file")
    off = 4
    version, P, O, J, L, kp, ko = struct.unpack_from("<HIIIIII", data, off)
    if version != GRID_VERSION:
        raise ValueError(f"{path}: unsupported grid version {version}")
    off += struct.calcsize("<HIIIIII")
    fov, w, h, mode = struct.unpack_from("<dIIB", data, off)
    off += struct.calcsize("<dIIB")

    def take(dtype, count):
        nonlocal off
        a = np.frombuffer(data, dtype=dtype, count=count, offset=off)
        off += a.nbytes
        return a

    bounds = take("<f8", 6).reshape(2, 3).copy()
    objects = tuple(int(j) for j in take("<i8", J))
    paxes = take("<f8", 3 * kp).reshape(3, kp).copy()
    oaxes = take("<f8", 3 * ko).reshape(3, ko).copy()
    values = take("<f4", P * O * J * L).reshape(P, O, J, L)
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes")
    return UtilityGrid(objects, L, bounds, paxes, oaxes, values,
                       Viewport(fov_y=fov, width=w, height=h), CLOSENESS_MODES[mode])
