import json
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mstsplat import synth
from mstsplat.scene import (
    HEADER_TERMINATOR,
    MultiScaleTexture,
    PoseOffsets,
    Scene,
    SceneError,
    Surfel,
    decode_scene,
    encode_scene,
    initial_low_texture,
    load_offsets,
    load_pose,
    load_scene,
    read_header,
    save_offsets,
    save_pose,
    save_scene,
    validate_scene,
    SkeletonPose,
)


def _random_valid(rng, n):
    s = synth.random_scene(n, rng, joint_count=3)
    w = rng.uniform(0.1, 1, size=(n, 4)).astype(np.float32)
    w /= w.sum(1, keepdims=True, dtype=np.float32)
    w[:, 0] = 1 - w[:, 1:].sum(1, dtype=np.float32)
    s.skin_weight[:] = w
    s.skin_joint[:] = rng.integers(0, 3, size=(n, 4))
    s.metadata["note"] = "random"
    return s


def test_empty_scene(tmp_path):
    p = tmp_path / "empty.mss"
    save_scene(Scene.empty(), p)
    data = p.read_bytes()
    header, start = read_header(data)
    assert header["surfel_count"] == 0
    assert header["blob_bytes"] == 0
    assert len(data) == start
    assert len(load_scene(p)) == 0


def test_round_trip_is_bit_exact(tmp_path, rng):
    s = _random_valid(rng, 17)
    p = tmp_path / "s.mss"
    save_scene(s, p)
    back = load_scene(p)
    assert back == s
    assert validate_scene(back) == []
    # identical scenes give identical bytes
    q = tmp_path / "t.mss"
    save_scene(back, q)
    assert p.read_bytes() == q.read_bytes()


@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 6))
@settings(max_examples=15, deadline=None)
def test_round_trip_property(seed, n):
    s = _random_valid(np.random.default_rng(seed), n)
    back = decode_scene(encode_scene(s))
    assert back == s
    assert validate_scene(back) == []


def test_special_float_values_round_trip():
    s = synth.random_scene(2, np.random.default_rng(0))
    s.tex_high[0, 0, 0] = [np.finfo(np.float32).max, np.finfo(np.float32).tiny, -0.0, 1e-45]
    back = decode_scene(encode_scene(s))
    assert back.tex_high.tobytes() == s.tex_high.tobytes()


def test_header_and_blob_layout(tmp_path):
    s = synth.random_scene(3, np.random.default_rng(1))
    data = encode_scene(s)
    header, start = read_header(data)
    assert data[start - 2:start] == HEADER_TERMINATOR
    assert header["endianness"] == "little"
    assert [f for f, _ in header["record_fields"]] == ["id", "mu", "scale", "rot", "sh", "skin_joint",
                                                       "skin_weight"]
    blob = np.frombuffer(data[start:], dtype="<f4")
    # first record starts with id then mu
    assert blob[0] == s.ids[0]
    np.testing.assert_array_equal(blob[1:4], s.mu[0])
    # textures follow all records, row-major and RGBA-interleaved
    off = 3 * 30
    np.testing.assert_array_equal(blob[off:off + 16 * 16 * 4], s.tex_low[0].ravel())


def test_large_scene_blob_size(tmp_path):
    n = 20000
    s = synth.bench_scene(n)
    p = tmp_path / "big.mss"
    save_scene(s, p)
    per = 1 + 3 + 2 + 4 + 12 + 4 + 4 + 16 * 16 * 4 + 32 * 32 * 4
    header, start = read_header(p.read_bytes()[:4096])
    assert header["blob_bytes"] == n * per * 4
    assert os.path.getsize(p) - start == n * per * 4


def test_truncated_blob(tmp_path):
    data = encode_scene(synth.random_scene(2, np.random.default_rng(2)))
    with pytest.raises(SceneError, match=r"truncated blob: expected (\d+) bytes, got (\d+)") as e:
        decode_scene(data[:-4])
    exp, got = map(int, e.value.args[0].split("expected ")[1].split(" bytes, got "))
    assert exp - got == 4


def test_header_blob_mismatch():
    data = encode_scene(synth.random_scene(2, np.random.default_rng(2)))
    header, start = read_header(data)
    header["blob_bytes"] += 4
    forged = json.dumps(header).encode() + HEADER_TERMINATOR + data[start:]
    with pytest.raises(SceneError, match="size mismatch"):
        decode_scene(forged)


def test_non_unit_rotation_rejected():
    s = synth.random_scene(2, np.random.default_rng(3))
    data = bytearray(encode_scene(s))
    _, start = read_header(bytes(data))
    blob = np.frombuffer(bytes(data[start:]), dtype="<f4").copy()
    blob[30 + 6:30 + 10] = [2, 0, 0, 0]  # second surfel's rot
    data[start:] = blob.tobytes()
    with pytest.raises(SceneError, match="non-unit rotation") as e:
        decode_scene(bytes(data))
    assert f"surfel {s.ids[1]}" in str(e.value)


def test_save_refuses_invalid_scene(tmp_path):
    s = synth.random_scene(2, np.random.default_rng(4))
    s.scale[1, 0] = 0
    with pytest.raises(SceneError, match=f"surfel {s.ids[1]}"):
        save_scene(s, tmp_path / "x.mss")


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        save_scene(Scene.empty(), tmp_path / "missing" / "dir" / "x.mss")


def test_validate_examples():
    s = synth.random_scene(3, np.random.default_rng(5))
    assert validate_scene(s) == []
    s.scale[1] = (0.0, 0.1)
    d = validate_scene(s)
    assert len(d) == 1 and d[0].rule == "scale components > 0" and d[0].surfel_id == s.ids[1]

    s = synth.random_scene(3, np.random.default_rng(5))
    s.skin_weight[2, :2] = (0.5, 0.6)
    d = validate_scene(s)
    assert [x.rule for x in d] == ["weights sum to 1"]
    assert d[0].surfel_id == s.ids[2]


def test_validate_other_rules():
    s = synth.random_scene(3, np.random.default_rng(6), joint_count=2)
    s.skin_joint[0, 0] = 5
    s.tex_low[1, 0, 0, 3] = 1.5
    s.ids[2] = s.ids[0]
    rules = {d.rule for d in validate_scene(s)}
    assert {"joint index < joint_count", "low alpha in [0, 1]", "unique id"} <= rules


def test_surfel_view_round_trip(rng):
    s = _random_valid(rng, 4)
    back = Scene.from_surfels(s.surfels, joint_count=s.joint_count, metadata=s.metadata)
    assert back == s


def test_initial_texture():
    tex = MultiScaleTexture.initial()
    assert tex.low.shape == (16, 16, 4) and tex.high.shape == (32, 32, 4)
    assert not tex.high.any()
    assert not tex.low[..., :3].any()
    a = tex.low[..., 3]
    # centred bump: symmetric, peak near 0.9 at the middle, decaying outward
    np.testing.assert_allclose(a, a.T)
    np.testing.assert_allclose(a, a[::-1, ::-1])
    assert 0.8 < a[7, 7] <= 0.9 and a[0, 0] < 0.1
    np.testing.assert_array_equal(initial_low_texture(), tex.low)


def test_pose_offsets_zeros_and_files(tmp_path):
    off = PoseOffsets.zeros(3)
    assert off.dr.tolist() == [[1, 0, 0, 0]] * 3
    off.dx[1] = (0.5, 0, 0)
    off.dc[2] = -0.25
    p = tmp_path / "off.bin"
    save_offsets([7], [10, 11, 12], [off], p)
    back = load_offsets(p)[7]
    np.testing.assert_array_equal(back.dx, off.dx)
    np.testing.assert_array_equal(back.dc, off.dc)


def test_pose_file(tmp_path):
    pose = SkeletonPose.identity(2)
    pose.joints[1, :, 3] = (1, 2, 3)
    p = tmp_path / "pose.json"
    save_pose(pose, p)
    np.testing.assert_array_equal(load_pose(p).joints, pose.joints)
    bad = SkeletonPose.identity(1)
    bad.joints[0, 0, 0] = 2.0
    save_pose(bad, p)
    with pytest.raises(SceneError, match="orthonormal"):
        load_pose(p)


def test_surfel_dataclass_defaults():
    s = Surfel(id=1, mu=np.zeros(3), scale=np.ones(2), rot=np.array([1.0, 0, 0, 0]), sh=np.zeros((4, 3)),
               tex=MultiScaleTexture.initial())
    assert s.skin == [(0, 1.0)]
