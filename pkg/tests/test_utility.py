import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gsdeliver.scene import Splat, random_scene, scene_from_splats
from gsdeliver.utility import (
    DirectUtility, SplatArrays, UtilityTable, Viewport, build_utility_table, clipped_ellipse_area, cumulative_utility,
    euler_to_matrix, grid_lookup, load_grid, object_utility, orientation_lattice, position_lattice,
    precompute_grid, save_grid, splat_terms, splat_utility, wrap_angle,
)
from oracles import (camera_matrix, ellipse_pi_over_16, pixel_overlap, random_onscreen_splat, reverse_cumsum_loop,
                     splat_cov)

ID = (1.0, 0.0, 0.0, 0.0)


def _sp(pos, scale=(1.0, 1.0, 1.0), rot=ID, opacity=1.0, obj=0, layer=1, idx=0):
    return Splat(pos, scale, rot, opacity, ((0.0, 0.0, 0.0),), obj, layer, idx)


def test_viewport_validation_and_wrap():
    with pytest.raises(ValueError):
        Viewport(fov_y=180.0)
    with pytest.raises(ValueError):
        Viewport(width=0)
    vp = Viewport(orientation=(180.0, 190.0, -540.0))
    assert vp.orientation == (-180.0, -170.0, -180.0)
    assert wrap_angle(359.0) == -1.0


@pytest.mark.parametrize("ypr", [(0, 0, 0), (30, 0, 0), (0, 25, 0), (0, 0, 40), (-120, 35, 170), (75, -80, -10)])
def test_rotation_matches_intrinsic_yxz(ypr):
    assert np.allclose(euler_to_matrix(ypr), camera_matrix(ypr), atol=1e-12)


def test_camera_looks_down_negative_z():
    vp = Viewport()
    ahead = splat_utility(_sp((0, 0, -3), scale=(0.1, 0.1, 0.1)), vp)
    assert ahead.overlap > 0
    turned = Viewport(orientation=(90.0, 0.0, 0.0))
    # yaw +90 turns the camera to face -x
    assert splat_utility(_sp((-3, 0, 0), scale=(0.1, 0.1, 0.1)), turned).overlap > 0
    assert splat_utility(_sp((3, 0, 0), scale=(0.1, 0.1, 0.1)), turned).overlap == 0


def test_unit_splat_two_metres_ahead():
    vp = Viewport(fov_y=90.0, width=1024, height=1024)
    t = splat_utility(_sp((0.0, 0.0, -2.0), opacity=0.8), vp)
    assert t.closeness == pytest.approx(1 / 3)
    assert t.overlap == pytest.approx(ellipse_pi_over_16(), rel=1e-12)
    oracle = pixel_overlap(np.array([0, 0, -2.0]), np.eye(3), np.zeros(3), (0, 0, 0), vp.focal, 1024, 1024, 1)
    assert t.overlap == pytest.approx(oracle, rel=0.01)
    assert t.utility == pytest.approx(t.closeness * t.overlap * 0.8, rel=0, abs=0)


def test_behind_camera_and_zero_opacity():
    vp = Viewport()
    assert splat_utility(_sp((0, 0, 2.0)), vp).utility == 0.0
    assert splat_utility(_sp((0, 0, -0.005)), vp).overlap == 0.0
    assert splat_utility(_sp((0, 0, -2.0), opacity=0.0), vp).utility == 0.0


def test_offscreen_splat_has_no_overlap():
    vp = Viewport(fov_y=60.0)
    t = splat_utility(_sp((50.0, 0.0, -2.0), scale=(0.1, 0.1, 0.1)), vp)
    assert t.overlap == 0.0 and t.closeness > 0


def test_degenerate_covariance_flagged():
    arrays = object.__new__(SplatArrays)
    arrays.positions = np.array([[0.3, 0.2, -2.0], [0.3, 0.2, -2.0]])
    v = np.array([1.0, 2.0, 0.5])
    arrays.cov = np.stack([np.outer(v, v), np.eye(3) * 0.01])  # rank one, then isotropic
    arrays.opacities = np.ones(2)
    vp = Viewport()
    _, ovl, deg = splat_terms(arrays, np.zeros((1, 3)), vp.rotation()[None], vp.focal, vp.width, vp.height)
    assert deg[0].tolist() == [True, False]
    assert ovl[0, 0] == 0.0 and ovl[0, 1] > 0


def test_thin_splat_keeps_small_area():
    t = splat_utility(_sp((0, 0, -2.0), scale=(1.0, 1e-9, 1.0)), Viewport())
    assert not t.degenerate and 0 < t.overlap < 1e-9


def test_ray_closeness_mode():
    vp = Viewport()
    s = _sp((3.0, 0.0, -4.0), scale=(0.1, 0.1, 0.1))
    assert splat_utility(s, vp).closeness == pytest.approx(1 / 6)
    assert splat_utility(s, vp, closeness_mode="ray").closeness == pytest.approx(1 / 4)
    with pytest.raises(ValueError):
        splat_utility(s, vp, closeness_mode="far")


def test_clipped_area_against_quadrants():
    # circle of radius 10 centred on the right edge keeps half its area
    a = clipped_ellipse_area(np.array([50.0]), np.array([0.0]), np.array([100.0]), np.array([0.0]),
                             np.array([100.0]), 50.0, 50.0)
    assert a[0] == pytest.approx(math.pi * 100 / 2, rel=1e-9)
    # centred on a corner keeps a quarter
    a = clipped_ellipse_area(np.array([50.0]), np.array([50.0]), np.array([100.0]), np.array([0.0]),
                             np.array([100.0]), 50.0, 50.0)
    assert a[0] == pytest.approx(math.pi * 100 / 4, rel=1e-9)


def test_projection_matches_pixel_oracle():
    rng = np.random.default_rng(11)
    for _ in range(20):
        s, vp, oracle = random_onscreen_splat(rng, 160, 120)
        assert splat_utility(s, vp).overlap == pytest.approx(oracle, rel=0.05)


def test_object_utility_sums_splats():
    vp = Viewport()
    splats = [_sp((0.2, 0.0, -3.0), (0.3, 0.2, 0.1), obj=4, idx=0, opacity=0.7),
              _sp((-0.5, 0.4, -5.0), (0.2, 0.2, 0.5), obj=4, idx=1, opacity=0.4),
              _sp((0.1, -0.3, -2.5), (0.1, 0.3, 0.2), obj=4, layer=2, idx=2, opacity=0.9)]
    scene = scene_from_splats(splats, 2, [2, 3])
    each = [splat_utility(s, vp).utility for s in splats]
    assert object_utility(scene, 0, 4, vp) == 0.0
    assert object_utility(scene, 1, 4, vp) == pytest.approx(each[0] + each[1], rel=1e-6)
    assert object_utility(scene, 2, 4, vp) == pytest.approx(sum(each), rel=1e-6)
    with pytest.raises(KeyError):
        object_utility(scene, 1, 5, vp)
    with pytest.raises(ValueError):
        object_utility(scene, 3, 4, vp)


def test_single_splat_object_equals_splat_utility():
    s = _sp((0.3, 0.1, -2.0), (0.2, 0.3, 0.1), opacity=0.6)
    scene = scene_from_splats([s], 1, [1])
    assert object_utility(scene, 1, 0, Viewport()) == pytest.approx(splat_utility(s, Viewport()).utility, rel=1e-6)


def test_cumulative_examples():
    assert cumulative_utility(np.array([3.0, 2.0, 1.0]))[0] == 6.0
    one = np.array([[[2.5]]])
    assert np.array_equal(cumulative_utility(one), one)


def test_utility_table_consistency():
    scene = random_scene(300, num_objects=3, layer_targets=[100, 200, 300], extent=3.0, seed=5)
    vps = [Viewport(position=(0, 0, 6.0 - t), timestamp=float(t)) for t in range(4)]
    table = build_utility_table(scene, vps)
    assert table.U.shape == (3, 4, 4)
    assert np.all(table.U[:, 0] == 0)
    assert np.allclose(np.cumsum(table.delta_U, axis=1), table.U, rtol=1e-9, atol=1e-15)
    assert np.allclose(table.cum_delta_U, reverse_cumsum_loop(table.delta_U), rtol=1e-9, atol=1e-15)
    direct = DirectUtility(scene)
    assert np.allclose(table.delta_U[:, 1:, 2], direct.layer_utilities(vps[2]))
    with pytest.raises(ValueError):
        build_utility_table(scene, [])


def test_negative_layers_flagged():
    t = UtilityTable.from_delta([7], [[[1.0, -0.5]]])
    assert t.negative_layers == [(7, 1, 1)]


def test_grid_lattice_sizes():
    _, pos = position_lattice(((0, 0, 0), (1, 1, 1)))
    _, ori = orientation_lattice()
    assert pos.shape == (1000, 3) and ori.shape == (1728, 3)
    assert np.all((pos > 0) & (pos < 1))
    with pytest.raises(ValueError):
        position_lattice(((0, 0, 0), (1, 0, 1)))


def _small_grid(tmp_path=None):
    scene = random_scene(40, num_objects=2, layer_targets=[20, 40], extent=1.0, seed=2)
    grid = precompute_grid(scene, ((-3, -3, -3), (3, 3, 3)), template=Viewport(width=64, height=48),
                           positions_per_axis=3, orientations_per_axis=4)
    return scene, grid


def test_grid_exact_sample_identity():
    scene, grid = _small_grid()
    direct = DirectUtility(scene)
    for p in (0, 13, 26):
        for o in (0, 21, 63):
            vp = grid.template.replace(position=tuple(grid.positions[p]), orientation=tuple(grid.orientations[o]))
            assert grid.nearest(vp) == (p, o)
            assert np.allclose(grid.layer_utilities(vp), direct.layer_utilities(vp), rtol=1e-5, atol=1e-9)
            lookup = grid_lookup(grid, vp)
            assert lookup[(grid.objects[1], 2)] == pytest.approx(float(grid.values[p, o, 1, 1]))


def test_grid_nearest_neighbour_with_wraparound():
    _, grid = _small_grid()
    # yaw samples are -180, -90, 0, 90; 170 is nearest to -180 across the seam
    p0 = tuple(grid.positions[0])
    vp = grid.template.replace(position=p0, orientation=(170.0, -40.0, 10.0))
    ref = grid.template.replace(position=p0, orientation=(-180.0, -22.5, 0.0))
    assert grid.nearest(vp) == grid.nearest(ref)
    # midpoint-ish position maps to the closer lattice point
    mid = grid.template.replace(position=(-1.9, -2.1, 0.1), orientation=(0, 0, 0))
    assert grid.nearest(mid)[0] == grid.nearest(grid.template.replace(position=(-2, -2, 0)))[0]


def test_grid_save_load(tmp_path):
    _, grid = _small_grid()
    save_grid(grid, tmp_path / "g.bin")
    back = load_grid(tmp_path / "g.bin")
    assert np.array_equal(back.values, grid.values)
    assert back.objects == grid.objects and back.template == grid.template
    (tmp_path / "bad.bin").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_grid(tmp_path / "bad.bin")


def test_grid_is_deterministic():
    _, a = _small_grid()
    _, b = _small_grid()
    assert np.array_equal(a.values, b.values) and np.all(np.isfinite(a.values))


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_utility_monotone_in_opacity(a, b, x, y):
    lo, hi = sorted((a, b))
    vp = Viewport()
    u_lo = splat_utility(_sp((x, y, -3.0), (0.2, 0.3, 0.1), opacity=lo), vp).utility
    u_hi = splat_utility(_sp((x, y, -3.0), (0.2, 0.3, 0.1), opacity=hi), vp).utility
    assert u_lo <= u_hi


@settings(max_examples=60, deadline=None)
@given(st.floats(0.5, 20.0), st.floats(0.0, 10.0), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5),
       st.sampled_from(["camera", "ray"]))
def test_closeness_non_increasing_along_ray(d, extra, x, y, mode):
    vp = Viewport()
    ray = np.array([x, y, -1.0])
    near = splat_utility(_sp(tuple(ray * d)), vp, mode).closeness
    far = splat_utility(_sp(tuple(ray * (d + extra))), vp, mode).closeness
    assert far <= near + 1e-15
    assert 0 < far <= 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_utility_is_product_and_zero_iff(seed):
    rng = np.random.default_rng(seed)
    s = _sp(tuple(rng.uniform(-4, 4, 3)), tuple(rng.uniform(0.01, 1, 3)), opacity=float(rng.choice([0, 0.5, 1])))
    vp = Viewport(orientation=tuple(rng.uniform(-180, 180, 3)), width=200, height=100)
    t = splat_utility(s, vp)
    assert t.utility == t.closeness * t.overlap * t.opacity
    assert (t.utility == 0) == (t.overlap == 0 or t.opacity == 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 5), st.integers(0, 10_000))
def test_version_telescoping(J, L, S, seed):
    rng = np.random.default_rng(seed)
    delta = rng.normal(size=(J, L, S))
    t = UtilityTable.from_delta(range(J), delta)
    for l in range(L + 1):
        assert np.allclose(t.delta_U[:, :l + 1].sum(axis=1), t.U[:, l], rtol=1e-9, atol=1e-12)
