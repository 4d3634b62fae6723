"""Layered, segmented splat scenes: data model, file I/O and byte costs.

A :class:`Scene` stores its splats as parallel numpy arrays (float32 for the
geometric and appearance attributes), so a 180k-splat scene stays cheap to
copy and every derived computation can be vectorized.  Individual splats are
materialized on demand as :class:`Splat` records.
"""
from __future__ import annotations

import csv
import io
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

MAGIC = b"L3GS"
FORMAT_VERSION = 1
SH_LENGTHS = (1, 4, 9, 16)
QUAT_TOL = 1e-6

CSV_BASE_COLUMNS = [
    "idx", "x", "y", "z", "sx", "sy", "sz", "qw", "qx", "qy", "qz",
    "opacity", "obj", "layer",
]


class SceneError(ValueError):
    """Base class for scene errors."""


class SceneFormatError(SceneError):
    """A scene file could not be parsed."""


class SceneInvariantError(SceneError):
    """Scene contents violate a structural invariant."""


@dataclass(frozen=True)
class Splat:
    position: tuple[float, float, float]
    scale: tuple[float, float, float]
    rotation: tuple[float, float, float, float]  # (w, x, y, z)
    opacity: float
    sh_coeffs: tuple[tuple[float, float, float], ...]
    object_id: int = 0
    layer_id: int = 1
    splat_index: int = 0

    def __post_init__(self):
        norm = math.sqrt(sum(q * q for q in self.rotation))
        if abs(norm - 1.0) > QUAT_TOL:
            raise SceneInvariantError(f"splat {self.splat_index}: quaternion norm {norm}")
        if not 0.0 <= self.opacity <= 1.0:
            raise SceneInvariantError(f"splat {self.splat_index}: opacity {self.opacity}")
        if min(self.scale) <= 0:
            raise SceneInvariantError(f"splat {self.splat_index}: non-positive scale")
        if len(self.sh_coeffs) not in SH_LENGTHS:
            raise SceneInvariantError(f"splat {self.splat_index}: {len(self.sh_coeffs)} SH coefficients")


@dataclass(frozen=True)
class CostModel:
    bytes_full: int = 236     # 59 float32 scalars
    bytes_compact: int = 56   # 14 float32 scalars, degree-0 SH
    header_bytes_per_bundle: int = 0

    def __post_init__(self):
        if self.bytes_full <= 0 or self.bytes_compact <= 0 or self.header_bytes_per_bundle < 0:
            raise ValueError("cost model sizes must be positive")
        if self.bytes_compact >= self.bytes_full:
            raise ValueError("bytes_compact must be smaller than bytes_full")

    @property
    def sh_upgrade_bytes(self) -> int:
        return self.bytes_full - self.bytes_compact


class Scene:
    """Immutable layered splat collection.

    Arrays are aligned: row ``k`` of every array describes the same splat.
    """

    def __init__(
        self,
        positions,
        scales,
        rotations,
        opacities,
        sh,
        object_ids,
        layer_ids,
        splat_index=None,
        num_layers: int | None = None,
        layer_targets: Sequence[int] | None = None,
        *,
        validate: bool = True,
    ):
        n = len(opacities)
        self.positions = _frozen(np.asarray(positions, dtype=np.float32).reshape(n, 3))
        self.scales = _frozen(np.asarray(scales, dtype=np.float32).reshape(n, 3))
        self.rotations = _frozen(np.asarray(rotations, dtype=np.float32).reshape(n, 4))
        self.opacities = _frozen(np.asarray(opacities, dtype=np.float32).reshape(n))
        sh = np.asarray(sh, dtype=np.float32)
        sh_len = sh.shape[1] if sh.ndim == 3 else max(sh.size // max(3 * n, 1), 1)
        self.sh = _frozen(sh.reshape(n, sh_len, 3))
        self.object_ids = _frozen(np.asarray(object_ids, dtype=np.int64).reshape(n))
        self.layer_ids = _frozen(np.asarray(layer_ids, dtype=np.int64).reshape(n))
        if splat_index is None:
            splat_index = np.arange(n)
        self.splat_index = _frozen(np.asarray(splat_index, dtype=np.int64).reshape(n))
        if num_layers is None:
            num_layers = int(self.layer_ids.max()) if n else 1
        self.num_layers = int(num_layers)
        if layer_targets is None:
            layer_targets = [int(np.count_nonzero(self.layer_ids <= l)) for l in range(1, self.num_layers + 1)]
        self.layer_targets = tuple(int(d) for d in layer_targets)
        if validate:
            self.validate()

    # -- structure -------------------------------------------------------
    def __len__(self) -> int:
        return len(self.opacities)

    def __getitem__(self, k: int) -> Splat:
        return Splat(
            position=tuple(float(v) for v in self.positions[k]),
            scale=tuple(float(v) for v in self.scales[k]),
            rotation=tuple(float(v) for v in self.rotations[k]),
            opacity=float(self.opacities[k]),
            sh_coeffs=tuple(tuple(float(c) for c in rgb) for rgb in self.sh[k]),
            object_id=int(self.object_ids[k]),
            layer_id=int(self.layer_ids[k]),
            splat_index=int(self.splat_index[k]),
        )

    def __iter__(self) -> Iterator[Splat]:
        for k in range(len(self)):
            yield self[k]

    @property
    def splats(self) -> list[Splat]:
        return list(self)

    @property
    def sh_degree(self) -> int:
        return SH_LENGTHS.index(self.sh.shape[1])

    @property
    def object_set(self) -> tuple[int, ...]:
        return tuple(int(j) for j in np.unique(self.object_ids))

    def layer_counts(self) -> dict[tuple[int, int], int]:
        """``M_jl``: number of splats of object j in layer l (non-zero entries only)."""
        keys, counts = np.unique(np.stack([self.object_ids, self.layer_ids], axis=1), axis=0, return_counts=True) \
            if len(self) else (np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64))
        return {(int(j), int(l)): int(c) for (j, l), c in zip(keys, counts)}

    def __eq__(self, other) -> bool:
        if not isinstance(other, Scene):
            return NotImplemented
        return (
            self.num_layers == other.num_layers
            and self.layer_targets == other.layer_targets
            and all(
                np.array_equal(getattr(self, a), getattr(other, a))
                for a in ("positions", "scales", "rotations", "opacities", "sh",
                          "object_ids", "layer_ids", "splat_index")
            )
        )

    def validate(self) -> None:
        n = len(self)
        L = self.num_layers
        if L < 1:
            raise SceneInvariantError("num_layers must be positive")
        if len(self.layer_targets) != L:
            raise SceneInvariantError(f"expected {L} layer targets, got {len(self.layer_targets)}")
        if any(b < a for a, b in zip(self.layer_targets, self.layer_targets[1:])):
            raise SceneInvariantError("layer targets must be non-decreasing")
        if self.layer_targets[-1] != n:
            raise SceneInvariantError(f"layer {L} target {self.layer_targets[-1]} != splat count {n}")
        if self.sh.shape[1] not in SH_LENGTHS:
            raise SceneInvariantError(f"{self.sh.shape[1]} SH coefficients per splat")
        if n == 0:
            return
        bad = np.flatnonzero((self.layer_ids < 1) | (self.layer_ids > L))
        if bad.size:
            raise SceneInvariantError(f"splat {self.splat_index[bad[0]]}: layer_id {self.layer_ids[bad[0]]} outside [1, {L}]")
        for l in range(1, L + 1):
            have = int(np.count_nonzero(self.layer_ids <= l))
            if have != self.layer_targets[l - 1]:
                raise SceneInvariantError(
                    f"layer {l}: {have} splats with layer_id <= {l}, target is {self.layer_targets[l - 1]}")
        if not np.array_equal(np.sort(self.splat_index), np.arange(n)):
            raise SceneInvariantError("splat_index values must be unique and dense in [0, n)")
        norms = np.linalg.norm(self.rotations.astype(np.float64), axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > QUAT_TOL)
        if bad.size:
            raise SceneInvariantError(f"splat {self.splat_index[bad[0]]}: quaternion norm {norms[bad[0]]:.9f}")
        bad = np.flatnonzero((self.opacities < 0) | (self.opacities > 1))
        if bad.size:
            raise SceneInvariantError(f"splat {self.splat_index[bad[0]]}: opacity {self.opacities[bad[0]]} outside [0, 1]")
        bad = np.flatnonzero(np.any(self.scales <= 0, axis=1))
        if bad.size:
            raise SceneInvariantError(f"splat {self.splat_index[bad[0]]}: non-positive scale")
        if np.any(self.object_ids < 0):
            raise SceneInvariantError("object ids must be non-negative")
        for name in ("positions", "scales", "sh"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise SceneInvariantError(f"non-finite {name}")

    # -- derived scenes --------------------------------------------------
    def take(self, rows, *, num_layers=None, layer_ids=None, layer_targets=None, reindex=True) -> "Scene":
        """Sub-scene made of ``rows`` (in the given order)."""
        rows = np.asarray(rows, dtype=np.int64)
        lid = self.layer_ids[rows] if layer_ids is None else layer_ids
        return Scene(
            self.positions[rows], self.scales[rows], self.rotations[rows], self.opacities[rows],
            self.sh[rows], self.object_ids[rows], lid,
            np.arange(len(rows)) if reindex else self.splat_index[rows],
            num_layers=num_layers, layer_targets=layer_targets,
        )

    def with_layers(self, layer_ids, layer_targets) -> "Scene":
        return Scene(
            self.positions, self.scales, self.rotations, self.opacities, self.sh,
            self.object_ids, layer_ids, self.splat_index,
            num_layers=len(layer_targets), layer_targets=layer_targets,
        )

    def prefix(self, l: int) -> "Scene":
        """Version ``l``: the splats with ``layer_id <= l`` as an ``l``-layer scene."""
        rows = np.flatnonzero(self.layer_ids <= l)
        sub = self.take(rows, num_layers=l, layer_targets=self.layer_targets[:l], reindex=False)
        return sub

    def sorted_by_layer(self) -> "Scene":
        order = np.lexsort((self.splat_index, self.layer_ids))
        return self.take(order, num_layers=self.num_layers, layer_targets=self.layer_targets, reindex=False)

    def covariances(self) -> np.ndarray:
        """World-space 3x3 covariances ``R diag(s^2) R^T`` as float64, shape (n, 3, 3)."""
        R = quaternion_to_matrix(self.rotations.astype(np.float64))
        s2 = self.scales.astype(np.float64) ** 2
        return np.einsum("nij,nj,nkj->nik", R, s2, R)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for (w, x, y, z) quaternions, shape (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], -2)


def scene_from_splats(splats: Sequence[Splat], num_layers: int, layer_targets: Sequence[int]) -> Scene:
    if not splats:
        return Scene(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0),
                     np.zeros((0, 1, 3)), np.zeros(0), np.zeros(0), np.zeros(0),
                     num_layers=num_layers, layer_targets=layer_targets)
    return Scene(
        [s.position for s in splats], [s.scale for s in splats], [s.rotation for s in splats],
        [s.opacity for s in splats], [s.sh_coeffs for s in splats],
        [s.object_id for s in splats], [s.layer_id for s in splats], [s.splat_index for s in splats],
        num_layers=num_layers, layer_targets=layer_targets,
    ).sorted_by_layer()


# ---------------------------------------------------------------------------
# cost table
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CostTable:
    """Per-(object, version) byte costs.

    ``c[k, l]`` is the standalone size of object ``objects[k]`` at version
    ``l`` and ``delta_c[k, l] = c[k, l] - c[k, l - 1]``; column 0 is the empty
    version.  ``counts[k, l]`` is the number of splats in layer ``l``.
    """

    objects: tuple[int, ...]
    c: np.ndarray
    delta_c: np.ndarray
    counts: np.ndarray
    model: CostModel = field(default_factory=CostModel)

    @property
    def num_layers(self) -> int:
        return self.c.shape[1] - 1

    def row(self, j: int) -> int:
        try:
            return self.objects.index(j)
        except ValueError:
            raise KeyError(f"unknown object id {j}") from None

    def cost(self, j: int, l: int) -> int:
        return int(self.c[self.row(j), l])

    def delta(self, j: int, l: int) -> int:
        return int(self.delta_c[self.row(j), l])

    def version_cost(self, l: int) -> int:
        return int(self.c[:, l].sum())

    @classmethod
    def from_counts(cls, objects, counts, model: CostModel | None = None) -> "CostTable":
        """Build from a (J, L) array of per-layer splat counts."""
        model = model or CostModel()
        counts = np.asarray(counts, dtype=np.int64)
        J, L = counts.shape
        full = np.zeros((J, L + 1), dtype=np.int64)
        full[:, 1:] = counts
        delta = full * model.bytes_full + (full > 0) * model.header_bytes_per_bundle
        delta[:, 0] = 0
        c = np.cumsum(delta, axis=1)
        return cls(tuple(int(j) for j in objects), c, delta, full, model)

    @classmethod
    def from_bytes(cls, objects, delta_bytes, model: CostModel | None = None) -> "CostTable":
        """Build from a hand-written (J, L) array of layer increments in bytes."""
        model = model or CostModel()
        delta = np.zeros((len(objects), np.shape(delta_bytes)[1] + 1), dtype=np.int64)
        delta[:, 1:] = delta_bytes
        counts = delta // model.bytes_full
        return cls(tuple(int(j) for j in objects), np.cumsum(delta, axis=1), delta, counts, model)


def build_cost_table(scene: Scene, model: CostModel | None = None) -> CostTable:
    objects = scene.object_set
    counts = np.zeros((len(objects), scene.num_layers), dtype=np.int64)
    if len(scene):
        rows = np.searchsorted(np.asarray(objects), scene.object_ids)
        np.add.at(counts, (rows, scene.layer_ids - 1), 1)
    return CostTable.from_counts(objects, counts, model)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def _record_dtype(sh_len: int) -> np.dtype:
    return np.dtype([
        ("idx", "<u4"), ("pos", "<f4", 3), ("scale", "<f4", 3), ("rot", "<f4", 4),
        ("opacity", "<f4"), ("obj", "<u4"), ("layer", "<u2"), ("sh", "<f4", (sh_len, 3)),
    ])


def csv_columns(sh_len: int) -> list[str]:
    return CSV_BASE_COLUMNS + [f"sh{k}{c}" for k in range(sh_len) for c in "rgb"]


def _detect_format(path: Path, fmt: str | None) -> str:
    if fmt:
        if fmt not in ("csv", "binary"):
            raise ValueError(f"unknown scene format {fmt!r}")
        return fmt
    return "csv" if path.suffix.lower() == ".csv" else "binary"


def load_scene(path, format: str | None = None) -> Scene:
    """Read a scene file; format is inferred from the suffix when omitted."""
    path = Path(path)
    fmt = _detect_format(path, format)
    if fmt == "csv":
        return _load_csv(path)
    return _load_binary(path)


def save_scene(scene: Scene, path, format: str | None = None) -> None:
    path = Path(path)
    fmt = _detect_format(path, format)
    if fmt == "csv":
        _save_csv(scene, path)
    else:
        _save_binary(scene, path)


def _save_binary(scene: Scene, path: Path) -> None:
    scene = scene.sorted_by_layer()
    L = scene.num_layers
    header = MAGIC + struct.pack("<HHB", FORMAT_VERSION, L, scene.sh_degree)
    header += struct.pack(f"<{L}I", *scene.layer_targets)
    rec = np.zeros(len(scene), dtype=_record_dtype(scene.sh.shape[1]))
    order = np.argsort(scene.splat_index, kind="stable")
    rec["idx"] = scene.splat_index[order]
    rec["pos"] = scene.positions[order]
    rec["scale"] = scene.scales[order]
    rec["rot"] = scene.rotations[order]
    rec["opacity"] = scene.opacities[order]
    rec["obj"] = scene.object_ids[order]
    rec["layer"] = scene.layer_ids[order]
    rec["sh"] = scene.sh[order]
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(rec.tobytes())


def _load_binary(path: Path) -> Scene:
    data = path.read_bytes()
    if data[:4] != MAGIC:
        raise SceneFormatError(f"{path}: offset 0: bad magic {data[:4]!r}")
    if len(data) < 9:
        raise SceneFormatError(f"{path}: offset {len(data)}: truncated header")
    version, L, deg = struct.unpack_from("<HHB", data, 4)
    if version != FORMAT_VERSION:
        raise SceneFormatError(f"{path}: offset 4: unsupported version {version}")
    if deg > 3:
        raise SceneFormatError(f"{path}: offset 8: SH degree {deg} > 3")
    off = 9
    if len(data) < off + 4 * L:
        raise SceneFormatError(f"{path}: offset {len(data)}: truncated layer targets")
    targets = struct.unpack_from(f"<{L}I", data, off)
    off += 4 * L
    dt = _record_dtype(SH_LENGTHS[deg])
    n = targets[-1] if L else 0
    need = off + n * dt.itemsize
    if len(data) != need:
        raise SceneFormatError(
            f"{path}: offset {min(len(data), need)}: expected {n} records ({need} bytes), file has {len(data)} bytes")
    rec = np.frombuffer(data, dtype=dt, count=n, offset=off)
    scene = Scene(rec["pos"], rec["scale"], rec["rot"], rec["opacity"], rec["sh"],
                  rec["obj"].astype(np.int64), rec["layer"].astype(np.int64), rec["idx"].astype(np.int64),
                  num_layers=L, layer_targets=targets)
    return scene.sorted_by_layer()


def _fmt(v) -> str:
    return repr(float(v))


def _save_csv(scene: Scene, path: Path) -> None:
    scene = scene.sorted_by_layer()
    sh_len = scene.sh.shape[1]
    buf = io.StringIO()
    buf.write(f"# layers={scene.num_layers} targets={','.join(map(str, scene.layer_targets))} sh_degree={scene.sh_degree}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_columns(sh_len))
    for k in range(len(scene)):
        row = [int(scene.splat_index[k])]
        row += [_fmt(v) for v in scene.positions[k]]
        row += [_fmt(v) for v in scene.scales[k]]
        row += [_fmt(v) for v in scene.rotations[k]]
        row += [_fmt(scene.opacities[k]), int(scene.object_ids[k]), int(scene.layer_ids[k])]
        row += [_fmt(v) for v in scene.sh[k].ravel()]
        w.writerow(row)
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def _parse_csv_header(line: str, path: Path) -> tuple[int, list[int], int | None]:
    if not line.startswith("#"):
        raise SceneFormatError(f"{path}: line 1: missing '# layers=... targets=...' header")
    fields = dict(tok.split("=", 1) for tok in line[1:].split() if "=" in tok)
    try:
        L = int(fields["layers"])
        targets = [int(t) for t in fields["targets"].split(",")] if fields["targets"] else []
        deg = int(fields["sh_degree"]) if "sh_degree" in fields else None
    except (KeyError, ValueError) as exc:
        raise SceneFormatError(f"{path}: line 1: bad header ({exc})") from None
    return L, targets, deg


def _load_csv(path: Path) -> Scene:
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise SceneFormatError(f"{path}: line 1: empty file")
    L, targets, deg = _parse_csv_header(lines[0], path)
    if len(lines) < 2:
        raise SceneFormatError(f"{path}: line 2: missing column header")
    cols = next(csv.reader([lines[1]]))
    if cols[:len(CSV_BASE_COLUMNS)] != CSV_BASE_COLUMNS:
        raise SceneFormatError(f"{path}: line 2: unexpected columns {cols[:len(CSV_BASE_COLUMNS)]}")
    n_sh = len(cols) - len(CSV_BASE_COLUMNS)
    if n_sh % 3 or n_sh // 3 not in SH_LENGTHS:
        raise SceneFormatError(f"{path}: line 2: {n_sh} SH columns")
    sh_len = n_sh // 3
    if deg is not None and SH_LENGTHS[deg] != sh_len:
        raise SceneFormatError(f"{path}: line 1: sh_degree {deg} disagrees with {sh_len} SH columns")
    rows = []
    for lineno, raw in enumerate(lines[2:], start=3):
        if not raw.strip():
            continue
        vals = next(csv.reader([raw]))
        if len(vals) != len(cols):
            raise SceneFormatError(f"{path}: line {lineno}: expected {len(cols)} fields, got {len(vals)}")
        try:
            rows.append([float(v) for v in vals])
        except ValueError as exc:
            raise SceneFormatError(f"{path}: line {lineno}: {exc}") from None
    a = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(cols))
    for name, col in (("idx", 0), ("obj", 12), ("layer", 13)):
        if np.any(a[:, col] != np.round(a[:, col])):
            bad = int(np.flatnonzero(a[:, col] != np.round(a[:, col]))[0])
            raise SceneFormatError(f"{path}: line {bad + 3}: non-integer {name}")
    scene = Scene(a[:, 1:4], a[:, 4:7], a[:, 7:11], a[:, 11], a[:, 14:].reshape(len(a), sh_len, 3),
                  a[:, 12].astype(np.int64), a[:, 13].astype(np.int64), a[:, 0].astype(np.int64),
                  num_layers=L, layer_targets=targets)
    return scene.sorted_by_layer()


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------

def random_scene(
    n: int,
    *,
    num_objects: int = 4,
    layer_targets: Sequence[int] | None = None,
    sh_degree: int = 0,
    extent: float = 4.0,
    scale_range: tuple[float, float] = (0.01, 0.08),
    seed: int = 0,
) -> Scene:
    """Seeded synthetic scene: objects are Gaussian blobs of splats around random centers."""
    rng = np.random.default_rng(seed)
    if layer_targets is None:
        layer_targets = [n]
    layer_targets = list(layer_targets)
    if layer_targets[-1] != n:
        raise ValueError("last layer target must equal n")
    centers = rng.uniform(-extent, extent, size=(num_objects, 3))
    centers[:, 1] *= 0.25
    obj = rng.integers(0, num_objects, size=n)
    pos = centers[obj] + rng.normal(scale=extent * 0.15, size=(n, 3))
    scale = np.exp(rng.uniform(np.log(scale_range[0]), np.log(scale_range[1]), size=(n, 3)))
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    opacity = rng.uniform(0.05, 1.0, size=n)
    sh = rng.normal(scale=0.3, size=(n, SH_LENGTHS[sh_degree], 3))
    layer = np.searchsorted(np.asarray(layer_targets), np.arange(n), side="right") + 1
    return Scene(pos, scale, q, opacity, sh, obj, layer, np.arange(n),
                 num_layers=len(layer_targets), layer_targets=layer_targets)


def ensure_parent(path) -> None:
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
