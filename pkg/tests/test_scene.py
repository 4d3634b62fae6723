import os
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gsdeliver.scene import (CostModel, CostTable, Scene, SceneFormatError, SceneInvariantError, Splat,
                             build_cost_table, load_scene, random_scene, save_scene, scene_from_splats)


def _splat(k, obj=0, layer=1, rot=(1.0, 0.0, 0.0, 0.0)):
    return Splat((float(k), 0.0, 0.0), (0.1, 0.1, 0.1), rot, 0.5, ((0.1, 0.2, 0.3),), obj, layer, k)


def test_splat_invariants():
    with pytest.raises(SceneInvariantError):
        Splat((0, 0, 0), (1, 1, 1), (1, 1, 0, 0), 0.5, ((0, 0, 0),))
    with pytest.raises(SceneInvariantError):
        Splat((0, 0, 0), (1, 1, 1), (1, 0, 0, 0), 1.5, ((0, 0, 0),))
    with pytest.raises(SceneInvariantError):
        Splat((0, 0, 0), (1, 0, 1), (1, 0, 0, 0), 0.5, ((0, 0, 0),))
    with pytest.raises(SceneInvariantError):
        Splat((0, 0, 0), (1, 1, 1), (1, 0, 0, 0), 0.5, ((0, 0, 0),) * 2)


def test_four_layer_binary_scene(tmp_path):
    targets = [45000, 90000, 135000, 180000]
    scene = random_scene(180000, layer_targets=targets, seed=3)
    path = tmp_path / "s.l3gs"
    save_scene(scene, path)
    back = load_scene(path)
    assert back.num_layers == 4
    assert back.layer_targets == tuple(targets)
    assert back == scene


def test_empty_scene_round_trip(tmp_path):
    scene = scene_from_splats([], 1, [0])
    assert len(scene) == 0
    for name in ("e.csv", "e.l3gs"):
        save_scene(scene, tmp_path / name)
        assert load_scene(tmp_path / name) == scene


def test_layer_target_mismatch_names_layer(tmp_path):
    # 3 splats, header claims two of them in a single layer
    path = tmp_path / "bad.csv"
    lines = ["# layers=1 targets=2 sh_degree=0",
             "idx,x,y,z,sx,sy,sz,qw,qx,qy,qz,opacity,obj,layer,sh0r,sh0g,sh0b"]
    for k in range(3):
        lines.append(f"{k},{k},0,0,0.1,0.1,0.1,1,0,0,0,0.5,0,1,0,0,0")
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(SceneInvariantError, match="layer 1"):
        load_scene(path)


def test_invariant_error_names_splat():
    with pytest.raises(SceneInvariantError, match="splat 1"):
        Scene(np.zeros((2, 3)), np.ones((2, 3)), [[1, 0, 0, 0], [0.5, 0.5, 0.5, 0.4]], [0.5, 0.5],
              np.zeros((2, 1, 3)), [0, 0], [1, 1])


def test_csv_parse_error_has_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("# layers=1 targets=1 sh_degree=0\n"
                    "idx,x,y,z,sx,sy,sz,qw,qx,qy,qz,opacity,obj,layer,sh0r,sh0g,sh0b\n"
                    "0,zero,0,0,0.1,0.1,0.1,1,0,0,0,0.5,0,1,0,0,0\n")
    with pytest.raises(SceneFormatError, match="line 3"):
        load_scene(path)


def test_binary_parse_errors(tmp_path):
    scene = random_scene(10, seed=1)
    path = tmp_path / "s.l3gs"
    save_scene(scene, path)
    data = path.read_bytes()
    (tmp_path / "magic.l3gs").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(SceneFormatError, match="offset 0"):
        load_scene(tmp_path / "magic.l3gs")
    (tmp_path / "short.l3gs").write_bytes(data[:-5])
    with pytest.raises(SceneFormatError, match="offset"):
        load_scene(tmp_path / "short.l3gs")


def test_binary_header_layout(tmp_path):
    scene = random_scene(6, layer_targets=[2, 6], sh_degree=1, seed=2)
    path = tmp_path / "s.l3gs"
    save_scene(scene, path)
    data = path.read_bytes()
    assert data[:4] == b"L3GS"
    assert struct.unpack_from("<HHB", data, 4) == (1, 2, 1)
    assert struct.unpack_from("<2I", data, 9) == (2, 6)
    rec = 4 + 12 + 12 + 16 + 4 + 4 + 2 + 4 * 3 * 4
    assert len(data) == 17 + 6 * rec


def test_loaded_scene_sorted_by_layer_then_index(tmp_path):
    splats = [_splat(0, layer=2), _splat(1, layer=1), _splat(2, layer=2), _splat(3, layer=1)]
    scene = scene_from_splats(splats, 2, [2, 4])
    save_scene(scene, tmp_path / "s.csv")
    back = load_scene(tmp_path / "s.csv")
    assert back.splat_index.tolist() == [1, 3, 0, 2]
    assert back.layer_ids.tolist() == [1, 1, 2, 2]


def test_quaternion_binary_bit_exact(tmp_path):
    s = Splat((0.1, 0.2, 0.3), (0.01, 0.02, 0.03), (0.5, 0.5, 0.5, 0.5), 0.25, ((0.0, 0.0, 0.0),), 0, 1, 0)
    scene = scene_from_splats([s], 1, [1])
    save_scene(scene, tmp_path / "q.l3gs")
    back = load_scene(tmp_path / "q.l3gs")
    assert back.rotations.tobytes() == np.array([[0.5, 0.5, 0.5, 0.5]], dtype=np.float32).tobytes()


@pytest.mark.parametrize("suffix", [".csv", ".l3gs"])
def test_round_trip_is_identity(tmp_path, suffix):
    scene = random_scene(200, num_objects=3, layer_targets=[50, 120, 200], sh_degree=3, seed=9)
    save_scene(scene, tmp_path / f"s{suffix}")
    assert load_scene(tmp_path / f"s{suffix}") == scene


def test_save_to_read_only_path(tmp_path):
    ro = tmp_path / "ro"
    ro.mkdir()
    os.chmod(ro, 0o500)
    try:
        if os.access(ro, os.W_OK):
            pytest.skip("running with permissions that ignore directory modes")
        with pytest.raises(OSError):
            save_scene(random_scene(3, seed=0), ro / "s.l3gs")
    finally:
        os.chmod(ro, 0o700)


def test_cost_table_hand_example():
    splats = [_splat(k, obj=7, layer=1) for k in range(10)] + [_splat(10 + k, obj=7, layer=2) for k in range(5)]
    costs = build_cost_table(scene_from_splats(splats, 2, [10, 15]), CostModel())
    assert costs.cost(7, 1) == 2360
    assert costs.cost(7, 2) == 3540
    assert costs.delta(7, 2) == 1180


def test_cost_table_absent_layer_is_zero():
    splats = [_splat(0, obj=0, layer=1), _splat(1, obj=1, layer=1), _splat(2, obj=1, layer=2)]
    costs = build_cost_table(scene_from_splats(splats, 2, [2, 3]))
    assert costs.delta(0, 2) == 0
    assert costs.delta(1, 2) == 236
    with pytest.raises(KeyError):
        costs.cost(5, 1)


def test_full_scene_total_bytes():
    scene = random_scene(180000, layer_targets=[45000, 90000, 135000, 180000], seed=4)
    costs = build_cost_table(scene)
    # 180000 splats x 236 bytes
    assert costs.version_cost(4) == 42_480_000
    assert int(costs.c[:, 4].sum()) == 180000 * 236


def test_cost_model_validation():
    with pytest.raises(ValueError):
        CostModel(bytes_full=50, bytes_compact=56)
    assert CostModel().sh_upgrade_bytes == 180


def test_cost_table_from_bytes():
    t = CostTable.from_bytes([0, 1], [[10, 20], [5, 0]])
    assert t.c.tolist() == [[0, 10, 30], [0, 5, 5]]


scene_params = st.tuples(st.integers(0, 60), st.integers(1, 4), st.integers(1, 4), st.integers(0, 10_000))


def _scene(params):
    n, objects, L, seed = params
    rng = np.random.default_rng(seed)
    cuts = np.sort(rng.integers(0, n + 1, size=L - 1)).tolist() + [n]
    return random_scene(n, num_objects=objects, layer_targets=cuts, seed=seed)


@settings(max_examples=40, deadline=None)
@given(scene_params)
def test_costs_never_double_count(params):
    scene = _scene(params)
    costs = build_cost_table(scene)
    assert int(costs.c[:, -1].sum()) == scene.layer_targets[-1] * costs.model.bytes_full
    assert np.all(costs.delta_c >= 0)
    # per-object layer counts add up to each layer size
    d = (0,) + scene.layer_targets
    for l in range(1, scene.num_layers + 1):
        assert int(costs.counts[:, l].sum()) == d[l] - d[l - 1]


@settings(max_examples=40, deadline=None)
@given(scene_params, st.integers(1, 4))
def test_prefix_is_valid_scene(params, l):
    scene = _scene(params)
    l = min(l, scene.num_layers)
    sub = scene.prefix(l)
    assert sub.num_layers == l
    assert len(sub) == scene.layer_targets[l - 1]
    assert np.all(sub.layer_ids <= l)


@settings(max_examples=25, deadline=None)
@given(scene_params)
def test_binary_round_trip_property(tmp_path_factory, params):
    scene = _scene(params)
    path = tmp_path_factory.mktemp("rt") / "s.l3gs"
    save_scene(scene, path)
    assert load_scene(path) == scene
