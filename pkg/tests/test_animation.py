import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mstsplat import quaternion as quat, synth
from mstsplat.animation import SCALE_FLOOR, apply_offsets, gram_schmidt, lbs_pose, pose_scene
from mstsplat.scene import PoseOffsets, Scene, SkeletonPose


def _scene(mu, rot=None, joints=1, skin=None):
    n = len(mu)
    rot = np.tile([1.0, 0, 0, 0], (n, 1)) if rot is None else rot
    s = Scene(ids=np.arange(n), mu=mu, scale=np.full((n, 2), 0.5), rot=rot, sh=np.zeros((n, 4, 3)),
              tex_low=np.zeros((n, 16, 16, 4)), tex_high=np.zeros((n, 32, 32, 4)), joint_count=joints)
    if skin is not None:
        for i, pairs in enumerate(skin):
            s.skin_joint[i] = 0
            s.skin_weight[i] = 0
            for k, (j, w) in enumerate(pairs):
                s.skin_joint[i, k] = j
                s.skin_weight[i, k] = w
    return s


def _rz(deg):
    a = np.radians(deg)
    return np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1]])


def test_identity_pose_is_exact(rng):
    s = synth.random_scene(30, rng, joint_count=2)
    s.skin_joint[:, 1] = 1
    s.skin_weight[:, :2] = 0.5
    posed = lbs_pose(s, SkeletonPose.identity(2))
    np.testing.assert_array_equal(posed.mu, s.mu.astype(np.float64))
    q = s.rot.astype(np.float64)
    assert np.all(np.minimum(np.abs(posed.rot - q).max(1), np.abs(posed.rot + q).max(1)) < 1e-7)
    np.testing.assert_array_equal(posed.scale, s.scale)


def test_single_joint_rotation():
    s = _scene(np.array([[1.0, 0, 0]]))
    A = np.zeros((1, 3, 4))
    A[0, :, :3] = _rz(90)
    posed = lbs_pose(s, SkeletonPose(A))
    np.testing.assert_allclose(posed.mu[0], [0, 1, 0], atol=1e-7)
    np.testing.assert_allclose(quat.to_matrix(posed.rot[0]), _rz(90), atol=1e-7)


def test_translation_blend():
    s = _scene(np.zeros((1, 3)), joints=2, skin=[[(0, 0.5), (1, 0.5)]])
    pose = SkeletonPose.identity(2)
    pose.joints[1, :, 3] = (2, 0, 0)
    np.testing.assert_allclose(lbs_pose(s, pose).mu[0], [1, 0, 0])


def test_singular_blend_substitutes_identity():
    s = _scene(np.array([[1.0, 0, 0]]), joints=2, skin=[[(0, 0.5), (1, 0.5)]])
    pose = SkeletonPose.identity(2)
    pose.joints[1, :, :3] = -np.eye(3)  # blended linear part is zero
    posed = lbs_pose(s, pose)
    assert len(posed.diagnostics) == 1 and posed.diagnostics[0].rule == "singular blended transform"
    np.testing.assert_allclose(posed.rot[0], [1, 0, 0, 0])


def test_rigid_composition(rng):
    s = synth.random_scene(20, rng)
    G = np.zeros((1, 3, 4))
    R = quat.to_matrix(quat.normalize(rng.normal(size=4)))
    G[0, :, :3] = R
    G[0, :, 3] = rng.normal(size=3)
    posed = lbs_pose(s, SkeletonPose(G))
    np.testing.assert_allclose(posed.mu, s.mu.astype(np.float64) @ R.T + G[0, :, 3], atol=1e-6)
    np.testing.assert_allclose(quat.to_matrix(posed.rot), R @ quat.to_matrix(s.rot.astype(np.float64)),
                               atol=1e-6)


def test_gram_schmidt_column_order():
    lin = np.array([[[2.0, 1.0, 0], [0, 1.0, 0], [0, 0, 3.0]]])
    R, singular = gram_schmidt(lin)
    assert not singular[0]
    np.testing.assert_allclose(R[0][:, 0], [1, 0, 0])
    np.testing.assert_allclose(R[0].T @ R[0], np.eye(3), atol=1e-12)


def test_offsets_examples():
    s = _scene(np.array([[0.0, 0, 0], [1.0, 2, 3]]))
    posed = lbs_pose(s, None)
    zero = apply_offsets(posed, PoseOffsets.zeros(2))
    np.testing.assert_array_equal(zero.mu, posed.mu)
    np.testing.assert_array_equal(zero.rot, posed.rot)
    np.testing.assert_array_equal(zero.scale, posed.scale)

    off = PoseOffsets.zeros(2)
    off.dx[:, 1] = 0.1
    np.testing.assert_allclose(apply_offsets(posed, off).mu, posed.mu + [0, 0.1, 0])

    off = PoseOffsets.zeros(2)
    off.ds[:] = -1
    np.testing.assert_array_equal(apply_offsets(posed, off).scale, SCALE_FLOOR)


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_offsets_invertible(seed):
    rng = np.random.default_rng(seed)
    s = synth.random_scene(5, rng)
    posed = lbs_pose(s, None)
    off = PoseOffsets(dx=rng.normal(size=(5, 3)), dr=quat.normalize(rng.normal(size=(5, 4))),
                      ds=rng.uniform(-0.01, 0.01, size=(5, 2)), dc=rng.normal(size=5))
    inv = PoseOffsets(dx=-off.dx, dr=quat.conjugate(off.dr), ds=-off.ds, dc=-off.dc)
    back = apply_offsets(apply_offsets(posed, off), inv)
    np.testing.assert_allclose(back.mu, posed.mu, atol=1e-6)
    np.testing.assert_allclose(back.scale, posed.scale, atol=1e-6)
    np.testing.assert_allclose(np.abs((back.rot * posed.rot).sum(1)), 1.0, atol=1e-6)
    np.testing.assert_allclose(back.dc, 0.0, atol=1e-12)


def test_pose_scene_applies_offsets_after_lbs():
    s = _scene(np.array([[1.0, 0, 0]]))
    A = np.zeros((1, 3, 4))
    A[0, :, :3] = _rz(90)
    off = PoseOffsets.zeros(1)
    off.dx[0] = (0.5, 0, 0)
    posed = pose_scene(s, SkeletonPose(A, off))
    # offset is added in posed space, not rotated with the joint
    np.testing.assert_allclose(posed.mu[0], [0.5, 1, 0], atol=1e-7)


def test_offset_length_mismatch():
    s = _scene(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        apply_offsets(lbs_pose(s, None), PoseOffsets.zeros(3))
