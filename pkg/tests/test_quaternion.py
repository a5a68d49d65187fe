import numpy as np
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from mstsplat import quaternion as quat

unit_quats = st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(
    lambda q: np.linalg.norm(q) > 0.1).map(lambda q: quat.normalize(np.array(q)))


def _scipy(q):
    # scipy stores (x, y, z, w)
    return Rotation.from_quat(np.roll(q, -1))


@given(unit_quats)
@settings(max_examples=60, deadline=None)
def test_to_matrix_matches_scipy(q):
    np.testing.assert_allclose(quat.to_matrix(q), _scipy(q).as_matrix(), atol=1e-12)


@given(unit_quats)
@settings(max_examples=60, deadline=None)
def test_from_matrix_round_trip(q):
    back = quat.from_matrix(quat.to_matrix(q))
    assert back[0] >= 0
    assert min(np.abs(back - q).max(), np.abs(back + q).max()) < 1e-9


@given(unit_quats, unit_quats)
@settings(max_examples=60, deadline=None)
def test_multiply_composes_rotations(a, b):
    np.testing.assert_allclose(quat.to_matrix(quat.multiply(a, b)),
                               quat.to_matrix(a) @ quat.to_matrix(b), atol=1e-12)


def test_conjugate_inverts():
    q = quat.normalize([0.3, -0.2, 0.9, 0.1])
    np.testing.assert_allclose(quat.multiply(q, quat.conjugate(q)), quat.IDENTITY, atol=1e-15)


def test_rotate_vectors_batched():
    q = quat.normalize(np.array([[1, 0, 0, 1.0], [1, 0, 0, 0.0]]))
    v = np.array([[1.0, 0, 0], [0, 2.0, 0]])
    np.testing.assert_allclose(quat.rotate(q, v), [[0, 1, 0], [0, 2, 0]], atol=1e-15)
