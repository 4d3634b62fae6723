"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line."""
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from gsdeliver.cli import CONFIG_OPTIONS, DEFAULT_BW_SCALE, TARGET_MEAN_MBPS, bundled_bandwidth_path
from gsdeliver.layering import partition_layers, prune_to_target, significance_fn
from gsdeliver.predict import (SAMPLE_RATE, BandwidthTrace, PredictorConfig, generate_bandwidth_trace,
                               generate_synthetic_trace, harmonic_mean, load_bandwidth_trace, predict_bandwidth,
                               predict_viewport)
from gsdeliver.scene import CostTable, random_scene
from gsdeliver.sched import (BRUTE_FORCE_LIMIT, DownloadState, Pick, brute_force_schedule, choice_matrix,
                             progressive_on_instance, random_feasible, schedule_knapsack, sort_on_instance, z_to_x)
from gsdeliver.sim import SceneContext, SimConfig, emit_report, run_simulation
from gsdeliver.utility import (GRID_ORIENTATIONS_PER_AXIS, GRID_POSITIONS_PER_AXIS, UtilityTable, Viewport,
                               precompute_grid, splat_utility, wrap_angle)
from instances import DATA, random_instance, toy_run
from oracles import harmonic, random_onscreen_splat, significance_take

SEEDS = range(200)


@pytest.fixture(scope="module")
def instances():
    return [random_instance(s) for s in SEEDS]


def test_knapsack_optimality(criterion, instances):
    with criterion(1, "knapsack DP equals brute force on 200 instances in < 5 s"):
        start = time.perf_counter()
        for inst, costs, _, _ in instances:
            assert len(costs.objects) <= 4 and costs.num_layers <= 4
            assert inst.budget // inst.resolution <= 60
            assert all(inst.cells(o.cost) <= 50 for g in inst.groups for o in g.options)
            assert inst.num_options <= BRUTE_FORCE_LIMIT
            assert schedule_knapsack(inst).value == brute_force_schedule(inst).value
        elapsed = time.perf_counter() - start
        assert elapsed < 5.0, f"{elapsed:.2f}s"


def _random_schedule(rng, costs, S):
    """Per-slot layer downloads applied through DownloadState; returns x and inclusive residency y."""
    J, L = len(costs.objects), costs.num_layers
    state = DownloadState(costs)
    x = np.zeros((J, L, S))
    y = np.zeros((J, L, S))
    for t in range(S):
        budget = int(rng.integers(0, int(costs.delta_c.sum()) + 1))
        for r in rng.permutation(J):
            while state.resident[r] < L and rng.random() < 0.6:
                l = int(state.resident[r]) + 1
                b = int(costs.delta_c[r, l])
                if b > budget:
                    break
                budget -= b
                state.apply(Pick(costs.objects[r], l, bytes=b))
                x[r, l - 1, t] = 1
        y[:, :, t] = np.arange(1, L + 1)[None, :] <= state.resident[:, None]
    return x, y


def test_objective_identity(criterion):
    with criterion(2, "sum dU*y equals sum cumulative-dU*x on 100 random tables"):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            J, L, S = (int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 6)))
            costs = CostTable.from_bytes(list(range(J)), rng.integers(1, 500, size=(J, L)))
            table = UtilityTable.from_delta(costs.objects, rng.uniform(-0.3, 1.0, size=(J, L, S)))
            x, y = _random_schedule(rng, costs, S)
            lhs = float((table.delta_U[:, 1:] * y).sum())
            rhs = float((table.cum_delta_U[:, 1:] * x).sum())
            assert rhs == pytest.approx(lhs, rel=1e-9, abs=1e-12)


def test_choice_substitution(criterion, instances):
    with criterion(3, "knapsack choices map to feasible per-layer downloads with equal objective"):
        for inst, costs, state, cum in instances:
            dec = schedule_knapsack(inst)
            z = choice_matrix(inst, dec, costs.objects, costs.num_layers)
            x = z_to_x(z, state.resident)
            assert set(np.unique(z)) <= {0, 1} and np.all(z.sum(axis=1) <= 1)
            assert set(np.unique(x)) <= {0, 1}
            held = np.arange(costs.num_layers + 1)[None, :] <= state.resident[:, None]
            # once only: nothing already held is fetched again
            assert not np.any(x.astype(bool) & held)
            # precedence: layer l+1 only with layer l held or fetched in the same slot
            have = held | x.astype(bool)
            assert np.all(have[:, :-1] >= have[:, 1:])
            spent = (x * costs.delta_c).sum(axis=1)
            assert spent.sum() == dec.bytes_used <= inst.budget
            assert sum(inst.cells(int(b)) for b in spent if b) <= inst.budget // inst.resolution
            objective = float((x[:, 1:] * cum).sum())
            assert objective == pytest.approx(dec.value, rel=1e-12, abs=1e-15)
            after = state.copy()
            after.apply_decision(dec)
            assert np.array_equal(after.resident, np.where(z.any(axis=1), z.argmax(axis=1), state.resident))


def test_per_slot_dominance(criterion):
    with criterion(4, "knapsack beats progressive, sort and 20 random decisions in each of 50 slots"):
        scene = random_scene(3000, num_objects=5, layer_targets=[600, 1500, 2200, 3000], extent=2.5, seed=4)
        ctx = SceneContext(scene)
        vp = generate_synthetic_trace("ellipse", 55, seed=4, radius=6.0)
        bw = generate_bandwidth_trace(60, seed=4, mean=0.08)
        # viewport-independent bundle score for the sort heuristic
        score = {}
        for j, l, o in zip(scene.object_ids.tolist(), scene.layer_ids.tolist(), scene.opacities.tolist()):
            score[(j, l)] = score.get((j, l), 0.0) + o
        seen = []
        run_simulation(ctx, vp, bw, "knapsack", SimConfig(trace_duration=50, start_offsets=(1.0,)),
                       on_decision=lambda k, inst, d: seen.append((inst, d)))
        assert len(seen) == 50
        assert sum(1 for inst, _ in seen if inst.groups) >= 40
        rng = np.random.default_rng(0)
        for inst, dec in seen:
            tol = 1e-12 * max(1.0, abs(dec.value))
            rivals = [progressive_on_instance(inst), sort_on_instance(inst, score)]
            rivals += [random_feasible(inst, rng) for _ in range(20)]
            for other in rivals:
                assert dec.value >= other.value - tol


def _history(poses):
    return [Viewport(position=tuple(p[:3]), orientation=tuple(wrap_angle(np.asarray(p[3:]))),
                     timestamp=k / SAMPLE_RATE) for k, p in enumerate(poses)]


def test_predictor_fidelity(criterion):
    with criterion(5, "harmonic mean, constant trace, yaw wraparound and linear 6DoF prediction"):
        rng = np.random.default_rng(5)
        # (a) the harmonic mean over random history windows
        trace = generate_bandwidth_trace(120, seed=5, mean=20.0)
        for _ in range(100):
            now = float(rng.uniform(1.0, 119.0))
            top = math.floor(now * 36)
            vals = np.interp([k / 36 for k in range(top - 17, top + 1)], trace.times, trace.mbps)
            assert predict_bandwidth(trace, now) == pytest.approx(harmonic(vals), rel=1e-9)
            raw = rng.uniform(0.1, 100.0, size=int(rng.integers(1, 40)))
            assert harmonic_mean(raw) == pytest.approx(len(raw) / np.sum(1.0 / raw), rel=1e-9)
        # (b) constant inputs give constant outputs
        flat = BandwidthTrace([0.0, 10.0], [7.5, 7.5])
        assert predict_bandwidth(flat, 4.0) == pytest.approx(7.5, rel=1e-15)
        still = _history([[1.0, 2.0, 3.0, 170.0, 10.0, -5.0]] * 18)
        assert all(np.array_equal(vp.pose, still[-1].pose) for vp in predict_viewport(still))
        # (c) yaw crossing +-180 at 120 deg/s never jumps
        truth = [[0, 0, 0, 150.0 + 120.0 * k / SAMPLE_RATE, 0, 0] for k in range(8 * 36)]
        for end in range(18, len(truth) - 36):
            hist = _history(truth[end - 18:end])
            yaws = [hist[-1].orientation[0]] + [vp.orientation[0] for vp in predict_viewport(hist)]
            assert np.all(np.abs(wrap_angle(np.diff(yaws))) <= 30.0)
        # (d) linear motion in all six coordinates is extrapolated exactly
        for _ in range(20):
            start = np.concatenate([rng.uniform(-5, 5, 3), rng.uniform(-180, 180, 1), rng.uniform(-30, 30, 1),
                                    rng.uniform(-180, 180, 1)])
            slope = np.concatenate([rng.uniform(-0.05, 0.05, 3), rng.uniform(-3, 3, 3) * [1, 0.1, 1]])
            poses = [start + k * slope for k in range(18 + 36)]
            out = predict_viewport(_history(poses[:18]))
            assert len(out) == 36
            for vp, p in zip(out, poses[18:]):
                assert np.allclose(vp.position, p[:3], atol=1e-6)
                assert np.all(np.abs(wrap_angle(np.asarray(vp.orientation) - p[3:])) < 1e-6)


def test_projection_oracle(criterion):
    with criterion(6, "overlap within 5% of pixel counting for 50 splats; behind-camera scores 0"):
        rng = np.random.default_rng(6)
        for _ in range(50):
            s, vp, oracle = random_onscreen_splat(rng, 160, 120)
            assert splat_utility(s, vp).overlap == pytest.approx(oracle, rel=0.05)
        for _ in range(50):
            s, vp, _ = random_onscreen_splat(rng, 160, 120)
            behind = np.asarray(vp.position) + vp.rotation() @ np.array([0.0, 0.0, rng.uniform(0.02, 8.0)])
            t = splat_utility(replace(s, position=tuple(float(v) for v in behind)), vp)
            assert t.utility == 0.0 and t.overlap == 0.0


def test_pruning_and_partitioning(criterion):
    with criterion(7, "single-round pruning equals sort-and-take; 180k splits into four 45k layers"):
        rng = np.random.default_rng(7)
        sample = [Viewport(position=(0.0, 0.0, 6.0), width=128, height=128),
                  Viewport(position=(6.0, 1.0, 0.0), orientation=(90.0, -10.0, 0.0), width=128, height=128)]
        score = significance_fn(sample)
        for seed in range(30):
            n = int(rng.integers(2, 400))
            r = float(rng.uniform(0.1, 0.9))
            d = int(rng.integers(max(1, math.ceil(n * (1 - r))), n + 1))
            scene = random_scene(n, num_objects=3, extent=2.0, seed=seed)
            out = prune_to_target(scene, d, r, score)
            expect = significance_take(score(scene).tolist(), scene.splat_index.tolist(), d)
            assert len(out) == d
            assert np.array_equal(out.positions, scene.positions[expect])
        big = random_scene(180000, num_objects=8, seed=7)
        parted = partition_layers(big, [45000, 90000, 135000, 180000])
        assert np.bincount(parted.layer_ids, minlength=5)[1:].tolist() == [45000] * 4


@pytest.fixture(scope="module")
def big_grid():
    scene = random_scene(180000, num_objects=8, layer_targets=[45000, 90000, 135000, 180000], seed=8)
    bounds = [(-7.0, -1.0, -7.0), (7.0, 1.0, 7.0)]
    grid = precompute_grid(scene, bounds, 8, splats_per_bundle=1)
    return scene, grid


def test_end_to_end(criterion, big_grid, tmp_path):
    with criterion(8, "golden toy run, byte-identical reruns, 180k-splat 60 s run in < 10 s"):
        toy_run(tmp_path / "toy.csv")
        assert (tmp_path / "toy.csv").read_bytes() == (DATA / "golden_toy_metrics.csv").read_bytes()
        scene, grid = big_grid
        vp = generate_synthetic_trace("circle", 62, seed=8, radius=6.0)
        bw = load_bandwidth_trace(bundled_bandwidth_path(), DEFAULT_BW_SCALE)
        cfg = SimConfig(trace_duration=60, start_offsets=(1.0,), use_grid=True)
        ctx = SceneContext(scene, utility=grid)
        start = time.perf_counter()
        first = run_simulation(ctx, vp, bw, "knapsack", cfg)
        elapsed = time.perf_counter() - start
        second = run_simulation(SceneContext(scene, utility=grid), vp, bw, "knapsack", cfg)
        emit_report(first.metrics, tmp_path / "a.csv")
        emit_report(second.metrics, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert len(first.metrics) == 60 and first.metrics[-1].resident_splats > 0
        assert elapsed < 10.0, f"{elapsed:.2f}s"


def test_parameter_audit(criterion, big_grid):
    with criterion(9, "defaults hw 0.5 s, pw 1 s, 36 Hz, T 1 s, grid 1000x1728, scaled trace mean 11.8 Mbps"):
        p, s = PredictorConfig(), SimConfig()
        assert (p.hw, p.pw, SAMPLE_RATE, s.slot_duration) == (0.5, 1.0, 36, 1.0)
        assert (s.hw, s.pw, s.trace_duration) == (0.5, 1.0, 60.0)
        assert [CONFIG_OPTIONS[k][3] for k in ("hw", "pw", "slot")] == [0.5, 1.0, 1.0]
        assert (GRID_POSITIONS_PER_AXIS ** 3, GRID_ORIENTATIONS_PER_AXIS ** 3) == (1000, 1728)
        assert big_grid[1].values.shape[:2] == (1000, 1728)
        scaled = load_bandwidth_trace(bundled_bandwidth_path(), DEFAULT_BW_SCALE)
        assert abs(scaled.mean - TARGET_MEAN_MBPS) <= 0.1
        assert TARGET_MEAN_MBPS == 11.8
