"""Command-line entry point: ``gsdeliver <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import functools
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import report
from .layering import partition_layers, prune_to_target, significance_fn
from .predict import (TRACE_KINDS, BandwidthTrace, ViewportTrace, generate_bandwidth_trace,
                      generate_synthetic_trace, load_bandwidth_trace, load_viewport_trace, save_bandwidth_trace,
                      save_viewport_trace)
from .scene import CostModel, SceneError, build_cost_table, load_scene, random_scene, save_scene
from .sched import brute_force_schedule, build_instance, schedule_knapsack, BRUTE_FORCE_LIMIT, DownloadState
from .sim import (SCHEDULERS, SceneContext, SimConfig, SimulationError, emit_report, read_metrics, read_summary,
                  run_simulation, write_summary)
from .utility import (Viewport, build_utility_table, grid_lookup, lattice_viewports, load_grid, object_utility,
                      precompute_grid, save_grid, splat_utility)

log = logging.getLogger("gsdeliver")

BUNDLED_BANDWIDTH = "walking_trace.csv"
DEFAULT_BW_SCALE = 0.02          # bundled trace averages 590 Mbps -> 11.8 Mbps
TARGET_MEAN_MBPS = 11.8
LOG_ENV = "L3GS_LOG"


class UsageError(Exception):
    """Bad flag or config value; reported with exit status 2."""


# Options that may come from the config file: dest -> (section, key, type, default).
CONFIG_OPTIONS = {
    "hw": ("predict", "hw", float, 0.5),
    "pw": ("predict", "pw", float, 1.0),
    "slot": ("sim", "slot", float, 1.0),
    "duration": ("sim", "duration", float, 60.0),
    "offsets": ("sim", "offsets", str, "random:3"),
    "horizon": ("sim", "horizon", int, None),
    "gt_viewport": ("sim", "gt_viewport", bool, False),
    "gt_bandwidth": ("sim", "gt_bandwidth", bool, False),
    "seed": ("sim", "seed", int, 0),
    "scheduler": ("sched", "scheduler", str, "knapsack"),
    "schedulers": ("sched", "schedulers", str, "knapsack,progressive,sort"),
    "resolution": ("sched", "resolution", int, 1024),
    "compact_factor": ("sched", "compact_factor", float, 0.8),
    "bw_scale": ("predict", "bw_scale", str, str(DEFAULT_BW_SCALE)),
    "closeness": ("utility", "closeness", str, "camera"),
    "fov": ("utility", "fov", float, 90.0),
    "width": ("utility", "width", int, 1024),
    "height": ("utility", "height", int, 1024),
    "jobs": ("cli", "jobs", int, 1),
}


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def read_config(path) -> dict:
    """Flat INI file with one section per module; unknown sections or keys are rejected."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"--config: cannot read {path}: {exc}") from None
    known = {(sec, key): dest for dest, (sec, key, _, _) in CONFIG_OPTIONS.items()}
    out = {}
    for sec in cp.sections():
        for key, raw in cp.items(sec):
            dest = known.get((sec, key))
            if dest is None:
                raise UsageError(f"--config: unknown key [{sec}] {key}")
            typ = CONFIG_OPTIONS[dest][2]
            try:
                out[dest] = _bool(raw) if typ is bool else typ(raw)
            except ValueError as exc:
                raise UsageError(f"--config: [{sec}] {key}: {exc}") from None
    return out


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_sim_flags(p: argparse.ArgumentParser, sweep: bool) -> None:
    p.add_argument("--scene", help="scene file (.l3gs binary or .csv)")
    if sweep:
        p.add_argument("--vp", action="append", help="viewport trace CSV or synthetic:<kind>; repeatable")
        p.add_argument("--schedulers", default=None, help="comma-separated schedulers (default knapsack,progressive,sort)")
        p.add_argument("--jobs", type=int, default=None, help="worker processes (default 1)")
    else:
        p.add_argument("--vp", help="viewport trace CSV or synthetic:<kind>")
        p.add_argument("--scheduler", default=None, choices=SCHEDULERS, help="scheduling strategy (default knapsack)")
    p.add_argument("--bw", help="bandwidth trace CSV (default: bundled walking trace)")
    p.add_argument("--bw-scale", default=None, help="throughput multiplier or 'auto' for an 11.8 Mbps mean (default 0.02)")
    p.add_argument("--grid", help="precomputed utility grid; direct evaluation when omitted")
    p.add_argument("--hw", type=float, default=None, help="history window in seconds (default 0.5)")
    p.add_argument("--pw", type=float, default=None, help="prediction window in seconds (default 1.0)")
    p.add_argument("--slot", type=float, default=None, help="slot duration in seconds (default 1.0)")
    p.add_argument("--duration", type=float, default=None, help="run length in seconds (default 60)")
    p.add_argument("--offsets", default=None, help="comma-separated start offsets in seconds, or random:K (default random:3)")
    p.add_argument("--gt-viewport", action="store_true", default=None, help="use the actual future viewport")
    p.add_argument("--gt-bandwidth", action="store_true", default=None, help="use the actual slot bandwidth")
    p.add_argument("--horizon", type=int, default=None, help="future slots summed into knapsack values (default ceil(pw/slot))")
    p.add_argument("--resolution", type=int, default=None, help="knapsack bytes per DP cell (default 1024)")
    p.add_argument("--compact-factor", type=float, default=None, help="quality factor of compact SH (default 0.8)")
    p.add_argument("--closeness", choices=("camera", "ray"), default=None, help="closeness term (default camera)")
    p.add_argument("--seed", type=int, default=None, help="seed for random offsets and synthetic traces (default 0)")
    p.add_argument("--no-figures", action="store_true", help="write CSV files only")
    p.add_argument("--out", help="output directory")


def _add_view_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--fov", type=float, default=None, help="vertical field of view in degrees (default 90)")
    p.add_argument("--width", type=int, default=None, help="viewport width in pixels (default 1024)")
    p.add_argument("--height", type=int, default=None, help="viewport height in pixels (default 1024)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gsdeliver", description="Layered Gaussian-splat delivery simulator.")
    parser.add_argument("--config", help="INI file with [predict] [sim] [sched] [utility] [cli] sections")
    sub = parser.add_subparsers(dest="command", metavar="command")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="INI config file (flags take precedence)")

    g = sub.add_parser("generate", parents=[common], help="write a synthetic scene, viewport trace or bandwidth trace")
    g.add_argument("what", choices=("scene", "viewport", "bandwidth"))
    g.add_argument("--out", help="output file")
    g.add_argument("--splats", type=int, default=1000, help="scene: number of splats")
    g.add_argument("--objects", type=int, default=4, help="scene: number of objects")
    g.add_argument("--layers", help="scene: cumulative layer targets d1,d2,... (default: one layer)")
    g.add_argument("--sh-degree", type=int, default=0, choices=(0, 1, 2, 3), help="scene: SH degree")
    g.add_argument("--extent", type=float, default=4.0, help="scene: half-size of the placement box in meters")
    g.add_argument("--kind", choices=TRACE_KINDS, default="circle", help="viewport: path shape")
    g.add_argument("--radius", type=float, default=6.0, help="viewport: path radius in meters")
    g.add_argument("--duration", type=float, default=60.0, help="trace length in seconds")
    g.add_argument("--mean", type=float, default=590.0, help="bandwidth: mean throughput in Mbps")
    g.add_argument("--seed", type=int, default=None, help="random seed (default 0)")

    p = sub.add_parser("preprocess", parents=[common], help="prune a scene to a target size and partition it into layers")
    p.add_argument("--scene", help="input scene")
    p.add_argument("--target", type=int, help="number of splats to keep")
    p.add_argument("--layers", help="cumulative layer targets d1,d2,...; the last must equal --target")
    p.add_argument("--ratio", type=float, default=0.5, help="maximum pruning ratio per round (default 0.5)")
    p.add_argument("--samples", type=int, default=2, help="significance sample: positions per axis (default 2)")
    _add_view_flags(p)
    p.add_argument("--closeness", choices=("camera", "ray"), default=None, help="closeness term (default camera)")
    p.add_argument("--out", help="output scene file")

    gr = sub.add_parser("grid", parents=[common], help="precompute the utility grid of a scene")
    gr.add_argument("--scene", help="input scene")
    gr.add_argument("--bounds", help="x0,y0,z0,x1,y1,z1 (default: scene bounding box)")
    gr.add_argument("--positions", type=int, default=10, help="positions per axis (default 10 -> 1,000)")
    gr.add_argument("--orientations", type=int, default=12, help="orientations per axis (default 12 -> 1,728)")
    gr.add_argument("--splats-per-bundle", type=int, default=None,
                    help="estimate each (object, layer) bundle from this many sampled splats")
    gr.add_argument("--lookup", help="print grid values at x,y,z,yaw,pitch,roll instead of building")
    gr.add_argument("--grid", help="existing grid for --lookup")
    gr.add_argument("--seed", type=int, default=None, help="sampling seed (default 0)")
    gr.add_argument("--closeness", choices=("camera", "ray"), default=None, help="closeness term (default camera)")
    _add_view_flags(gr)
    gr.add_argument("--out", help="output grid file")

    s = sub.add_parser("simulate", parents=[common], help="replay traces against one scheduler")
    _add_sim_flags(s, sweep=False)
    _add_view_flags(s)

    w = sub.add_parser("sweep", parents=[common], help="replay traces against several schedulers concurrently")
    _add_sim_flags(w, sweep=True)
    _add_view_flags(w)

    r = sub.add_parser("report", parents=[common], help="render figures and a combined summary from an output directory")
    r.add_argument("--out", help="directory holding metrics_*.csv files")

    i = sub.add_parser("inspect", parents=[common], help="print cost table, object utilities and the first-slot knapsack decision")
    i.add_argument("--scene", help="scene file")
    i.add_argument("--pose", default="0,0,5,0,0,0", help="x,y,z,yaw,pitch,roll (default 0,0,5,0,0,0)")
    i.add_argument("--bw", type=float, default=11.8, help="budget in Mbps for one 1 s slot (default 11.8)")
    i.add_argument("--resolution", type=int, default=None, help="knapsack bytes per DP cell (default 1024)")
    i.add_argument("--grid", help="also print grid values at the pose")
    i.add_argument("--splat", type=int, action="append", help="print the utility terms of this splat (repeatable)")
    i.add_argument("--closeness", choices=("camera", "ray"), default=None, help="closeness term (default camera)")
    _add_view_flags(i)
    return parser


def _resolve(args, parser, config: dict) -> None:
    """Fill unset flags from the config file, then from defaults."""
    for dest, (_, _, _, default) in CONFIG_OPTIONS.items():
        if hasattr(args, dest) and getattr(args, dest) is None:
            setattr(args, dest, config.get(dest, default))
    if getattr(args, "seed", 0) is None:
        args.seed = config.get("seed", 0)


def _require(parser, args, *names) -> None:
    for n in names:
        if not getattr(args, n.lstrip("-").replace("-", "_"), None):
            parser.error(f"{n} is required for {args.command}")


def _floats(text: str, flag: str, parser, count: int | None = None) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        parser.error(f"{flag}: expected comma-separated numbers, got {text!r}")
    if count is not None and len(vals) != count:
        parser.error(f"{flag}: expected {count} numbers, got {len(vals)}")
    return vals


def _ints(text: str, flag: str, parser) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        parser.error(f"{flag}: expected comma-separated integers, got {text!r}")


# ---------------------------------------------------------------------------
# shared loaders
# ---------------------------------------------------------------------------

def template_viewport(args) -> Viewport:
    return Viewport(fov_y=args.fov, width=args.width, height=args.height)


def bundled_bandwidth_path() -> Path:
    return Path(str(resources.files("gsdeliver") / "data" / BUNDLED_BANDWIDTH))


def load_bandwidth(path: str | None, scale_text: str) -> BandwidthTrace:
    raw = load_bandwidth_trace(path or bundled_bandwidth_path(), 1.0)
    if str(scale_text).strip().lower() == "auto":
        scale = TARGET_MEAN_MBPS / raw.mean if raw.mean > 0 else 1.0
    else:
        scale = float(scale_text)
        if scale < 0:
            raise ValueError("--bw-scale must be non-negative")
    return raw.scaled(scale)


def load_viewports(spec: str, template: Viewport, duration: float, seed: int) -> tuple[str, ViewportTrace]:
    """A trace CSV, or ``synthetic:<kind>`` generated to cover ``duration`` seconds."""
    if spec.startswith("synthetic:"):
        kind = spec.split(":", 1)[1]
        return kind, generate_synthetic_trace(kind, duration, seed, radius=6.0, template=template)
    return Path(spec).stem, load_viewport_trace(spec, template)


@functools.lru_cache(maxsize=4)
def _cached_context(scene_path: str, grid_path: str | None, closeness: str) -> SceneContext:
    scene = load_scene(scene_path)
    utility = None
    if grid_path:
        utility = load_grid(grid_path)
    ctx = SceneContext(scene, utility=utility, closeness_mode=closeness)
    if utility is not None and tuple(utility.objects) != ctx.costs.objects:
        raise ValueError(f"grid objects {utility.objects} do not match scene objects {ctx.costs.objects}")
    return ctx


def _sim_config(args, offsets) -> SimConfig:
    return SimConfig(slot_duration=args.slot, trace_duration=args.duration, start_offsets=offsets,
                     num_offsets=len(offsets) if offsets else 3, hw=args.hw, pw=args.pw, use_grid=bool(args.grid),
                     ground_truth_viewport=bool(args.gt_viewport), ground_truth_bandwidth=bool(args.gt_bandwidth),
                     seed=args.seed, horizon=args.horizon, resolution=args.resolution,
                     compact_factor=args.compact_factor, closeness_mode=args.closeness)


def _parse_offsets(text: str, parser) -> tuple[tuple[float, ...] | None, int]:
    t = str(text).strip()
    if t.startswith("random"):
        k = 3
        if ":" in t:
            try:
                k = int(t.split(":", 1)[1])
            except ValueError:
                parser.error(f"--offsets: bad count in {t!r}")
        if k < 1:
            parser.error("--offsets: need at least one offset")
        return None, k
    return tuple(_floats(t, "--offsets", parser)), 0


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_generate(args, parser) -> int:
    _require(parser, args, "--out")
    seed = args.seed or 0
    if args.what == "scene":
        targets = _ints(args.layers, "--layers", parser) if args.layers else [args.splats]
        if targets[-1] != args.splats:
            parser.error("--layers: last target must equal --splats")
        scene = random_scene(args.splats, num_objects=args.objects, layer_targets=targets,
                             sh_degree=args.sh_degree, extent=args.extent, seed=seed)
        save_scene(scene, args.out)
        print(f"wrote {len(scene)} splats, {scene.num_layers} layers to {args.out}")
    elif args.what == "viewport":
        trace = generate_synthetic_trace(args.kind, args.duration, seed, radius=args.radius)
        save_viewport_trace(trace, args.out)
        print(f"wrote {len(trace)} samples to {args.out}")
    else:
        trace = generate_bandwidth_trace(args.duration, seed, mean=args.mean)
        save_bandwidth_trace(trace, args.out)
        print(f"wrote {len(trace.times)} samples to {args.out}")
    return 0


def scene_bounds(scene) -> np.ndarray:
    pos = np.asarray(scene.positions, dtype=np.float64)
    lo, hi = pos.min(axis=0), pos.max(axis=0)
    pad = np.maximum((hi - lo) * 0.05, 1e-3)
    return np.stack([lo - pad, hi + pad])


def cmd_preprocess(args, parser) -> int:
    _require(parser, args, "--scene", "--target", "--out")
    if not 0 < args.ratio < 1:
        parser.error("--ratio must lie in (0, 1)")
    layers = _ints(args.layers, "--layers", parser) if args.layers else [args.target]
    if layers[-1] != args.target:
        parser.error("--layers: last target must equal --target")
    scene = load_scene(args.scene)
    sample = lattice_viewports(scene_bounds(scene), template_viewport(args), args.samples, 4)
    rounds = [len(scene)]
    pruned = prune_to_target(scene, args.target, args.ratio, significance_fn(sample, args.closeness), rounds=rounds)
    layered = partition_layers(pruned, layers)
    save_scene(layered, args.out)
    print(f"pruned {' -> '.join(map(str, rounds))} splats; layers {layers}; wrote {args.out}")
    return 0


def cmd_grid(args, parser) -> int:
    template = template_viewport(args)
    if args.lookup:
        _require(parser, args, "--grid")
        pose = _floats(args.lookup, "--lookup", parser, 6)
        grid = load_grid(args.grid)
        vp = grid.template.replace(position=pose[:3], orientation=pose[3:])
        for (j, l), v in grid_lookup(grid, vp).items():
            print(f"object {j} layer {l}: {v:.10g}")
        return 0
    _require(parser, args, "--scene", "--out")
    scene = load_scene(args.scene)
    if args.bounds:
        b = _floats(args.bounds, "--bounds", parser, 6)
        bounds = np.array([b[:3], b[3:]])
    else:
        bounds = scene_bounds(scene)

    def progress(done, total):
        if done % max(1, total // 10) == 0 or done == total:
            log.info("grid positions %d/%d", done, total)

    grid = precompute_grid(scene, bounds, args.seed or 0, template=template, positions_per_axis=args.positions,
                           orientations_per_axis=args.orientations, splats_per_bundle=args.splats_per_bundle,
                           closeness_mode=args.closeness, progress=progress)
    save_grid(grid, args.out)
    print(f"wrote {grid.shape[0]}x{grid.shape[1]} grid to {args.out}")
    return 0


def _run_job(job: dict) -> tuple[dict, list]:
    """One (trace, scheduler, offset) run; top-level so worker processes can import it."""
    ctx = _cached_context(job["scene"], job["grid"], job["config"].closeness_mode)
    template = Viewport(fov_y=job["fov"], width=job["width"], height=job["height"])
    name, vp = load_viewports(job["vp"], template, job["trace_len"], job["seed"])
    bw = load_bandwidth(job["bw"], job["bw_scale"])
    res = run_simulation(ctx, vp, bw, job["scheduler"], job["config"], offset=job["offset"])
    res.trace = name
    return res.summary, res.metrics


def _plan_jobs(args, parser, vps: list[str], schedulers: list[str]) -> list[dict]:
    offsets, k = _parse_offsets(args.offsets, parser)
    template = template_viewport(args)
    jobs = []
    for spec in vps:
        # synthetic traces get a 60 s margin so random offsets have room
        trace_len = args.duration * 2
        _, trace = load_viewports(spec, template, trace_len, args.seed)
        cfg = _sim_config(args, offsets)
        if offsets is None:
            cfg = dataclasses.replace(cfg, num_offsets=k)
        for o_idx, off in enumerate(cfg.offsets(trace)):
            for sch in schedulers:
                jobs.append(dict(scene=str(args.scene), grid=args.grid, vp=spec, bw=args.bw, bw_scale=args.bw_scale,
                                 scheduler=sch, offset=off, o_idx=o_idx, config=cfg, seed=args.seed,
                                 trace_len=trace_len, fov=args.fov, width=args.width, height=args.height))
    return jobs


def _write_outputs(out: Path, jobs: list[dict], results: list, figures: bool) -> None:
    rows = []
    runs: dict[str, dict[str, list]] = {}
    first: dict[str, list] = {}
    for job, (summary, metrics) in zip(jobs, results):
        name = f"metrics_{summary['trace']}_{job['scheduler']}_o{job['o_idx']}.csv"
        emit_report(metrics, out / name)
        rows.append(summary)
        runs.setdefault(summary["trace"], {})[f"{job['scheduler']} o{job['o_idx']}"] = metrics
        if job["scheduler"] != "preload":
            first.setdefault(summary["trace"], metrics)
    write_summary(rows, out / "summary.csv")
    if figures:
        render_figures(out, rows, runs, first)


def render_figures(out: Path, rows, runs, first) -> None:
    for trace, by_label in runs.items():
        report.plot_utility(by_label, out / f"utility_{trace}.png")
    for trace, m in first.items():
        report.plot_bandwidth(m, out / f"bandwidth_{trace}.png")
        report.plot_pose_error(m, out / f"pose_error_{trace}.png")
    if rows:
        report.plot_summary(rows, out / "summary.png")


def cmd_simulate(args, parser, sweep: bool = False) -> int:
    _require(parser, args, "--scene", "--vp", "--out")
    if sweep:
        schedulers = [s.strip() for s in args.schedulers.split(",") if s.strip()]
        bad = [s for s in schedulers if s not in SCHEDULERS]
        if bad or not schedulers:
            parser.error(f"--schedulers: unknown scheduler(s) {','.join(bad)}; choose from {','.join(SCHEDULERS)}")
        vps = args.vp
        if args.jobs < 1:
            parser.error("--jobs must be at least 1")
    else:
        if args.scheduler not in SCHEDULERS:
            parser.error(f"--scheduler: choose from {','.join(SCHEDULERS)}")
        schedulers, vps = [args.scheduler], [args.vp]
    if args.horizon is not None and args.horizon < 1:
        parser.error("--horizon must be at least 1")
    for flag, v in (("--hw", args.hw), ("--pw", args.pw), ("--slot", args.slot), ("--duration", args.duration)):
        if v <= 0:
            parser.error(f"{flag} must be positive")
    if str(args.bw_scale).strip().lower() != "auto":
        try:
            float(args.bw_scale)
        except ValueError:
            parser.error(f"--bw-scale: expected a number or 'auto', got {args.bw_scale!r}")
    jobs = _plan_jobs(args, parser, vps, schedulers)
    workers = args.jobs if sweep else 1
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_job, j) for j in jobs]
            results = [f.result() for f in futures]   # fixed order reduction
    else:
        results = [_run_job(j) for j in jobs]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_outputs(out, jobs, results, not args.no_figures)
    print(f"{len(jobs)} run(s) written to {out}")
    return 0


def cmd_report(args, parser) -> int:
    _require(parser, args, "--out")
    out = Path(args.out)
    files = sorted(out.glob("metrics_*.csv"))
    if not files:
        raise FileNotFoundError(f"no metrics_*.csv files in {out}")
    runs: dict[str, dict[str, list]] = {}
    first: dict[str, list] = {}
    for f in files:
        parts = f.stem.split("_")
        trace, label = "_".join(parts[1:-2]), f"{parts[-2]} {parts[-1]}"
        m = read_metrics(f)
        runs.setdefault(trace, {})[label] = m
        if parts[-2] != "preload":
            first.setdefault(trace, m)
    rows = read_summary(out / "summary.csv") if (out / "summary.csv").exists() else []
    render_figures(out, rows, runs, first)
    print(f"figures for {len(files)} run(s) written to {out}")
    return 0


def cmd_inspect(args, parser) -> int:
    _require(parser, args, "--scene")
    pose = _floats(args.pose, "--pose", parser, 6)
    scene = load_scene(args.scene)
    costs = build_cost_table(scene, CostModel())
    vp = template_viewport(args).replace(position=pose[:3], orientation=pose[3:])
    for k in args.splat or ():
        if not 0 <= k < len(scene):
            parser.error(f"--splat {k} outside [0, {len(scene)})")
    util = build_utility_table(scene, [vp], args.closeness)
    table = util.delta_U[:, 1:, 0]
    print("object,layer,splats,delta_bytes,version_bytes,utility")
    for r, j in enumerate(costs.objects):
        for l in range(1, costs.num_layers + 1):
            u = object_utility(scene, l, j, vp, args.closeness)
            print(f"{j},{l},{costs.counts[r, l]},{costs.delta_c[r, l]},{costs.c[r, l]},{u:.10g}")
    for k in args.splat or ():
        t = splat_utility(scene[k], vp, args.closeness)
        print(f"splat {k}: closeness {t.closeness:.10g} overlap {t.overlap:.10g} opacity {t.opacity:.10g} "
              f"utility {t.utility:.10g}" + (" degenerate" if t.degenerate else ""))
    budget = int(args.bw * 1e6 / 8)
    inst = build_instance(DownloadState(costs), table, costs, budget, args.resolution)
    dec = schedule_knapsack(inst)
    print(f"knapsack: {len(dec.picks)} layer(s), {dec.bytes_used}/{budget} bytes, value {dec.value:.10g}")
    if inst.num_options <= BRUTE_FORCE_LIMIT:
        print(f"brute force value {brute_force_schedule(inst).value:.10g}")
    if args.grid:
        for (j, l), v in grid_lookup(load_grid(args.grid), vp).items():
            print(f"grid object {j} layer {l}: {v:.10g}")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "preprocess": cmd_preprocess,
    "grid": cmd_grid,
    "simulate": cmd_simulate,
    "sweep": lambda a, p: cmd_simulate(a, p, sweep=True),
    "report": cmd_report,
    "inspect": cmd_inspect,
}


def main(argv=None) -> int:
    level = logging.getLevelName(os.environ.get(LOG_ENV, "WARNING").upper())
    logging.basicConfig(level=level if isinstance(level, int) else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.error("a command is required")
    try:
        config = read_config(args.config) if args.config else {}
    except UsageError as exc:
        parser.error(str(exc))
    _resolve(args, parser, config)
    try:
        return COMMANDS[args.command](args, parser)
    except (SceneError, SimulationError, ValueError, OSError, KeyError) as exc:
        print(f"gsdeliver: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
