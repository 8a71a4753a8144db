"""Geometry: Lie-algebra maps, relative transforms, quaternion metric."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxplan.errors import DegenerateRotation
from voxplan.geometry import (
    RigidTransform,
    Rotation3,
    Twist6,
    UnitQuaternion,
    quaternion_angle,
    relative_transform,
    se3_exp,
    se3_log,
)
from voxplan.oracles import se3_log_vector_series


def random_twist(rng, max_angle=math.pi - 0.01):
    omega = rng.normal(size=3)
    norm = np.linalg.norm(omega)
    if norm > 0:
        omega = omega / norm * rng.uniform(0.0, max_angle)
    v = rng.normal(size=3)
    return Twist6(v, omega)


class TestSe3Log:
    def test_identity(self):
        xi = se3_log(RigidTransform.identity())
        np.testing.assert_array_equal(xi.v, np.zeros(3))
        np.testing.assert_array_equal(xi.omega, np.zeros(3))

    def test_pure_translation(self):
        t = RigidTransform.from_translation((1.0, 2.0, 3.0))
        xi = se3_log(t)
        np.testing.assert_allclose(xi.v, [1.0, 2.0, 3.0], atol=1e-12)
        np.testing.assert_array_equal(xi.omega, np.zeros(3))

    def test_quarter_turn_against_series_oracle(self):
        t = RigidTransform(Rotation3.rot_z(math.pi / 2), (1.0, 0.0, 0.0))
        expected = se3_log_vector_series(t.as_matrix())
        xi = se3_log(t)
        np.testing.assert_allclose(xi.as_vector(), expected, atol=1e-9)

    def test_random_transforms_against_series_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            t = se3_exp(random_twist(rng, max_angle=2.5))
            expected = se3_log_vector_series(t.as_matrix())
            np.testing.assert_allclose(se3_log(t).as_vector(), expected, atol=1e-9)

    def test_rejects_angle_near_pi(self):
        t = RigidTransform(Rotation3.rot_z(math.pi), (0.0, 0.0, 0.0))
        with pytest.raises(DegenerateRotation):
            se3_log(t)
        almost = RigidTransform(Rotation3.rot_x(math.pi - 1e-9), np.zeros(3))
        with pytest.raises(DegenerateRotation):
            se3_log(almost)

    def test_small_angle_continuity(self):
        # No jump across the series switch: compare against the zero-angle
        # limit V = I at theta = 1e-7.
        theta = 1e-7
        t = np.array([0.3, -0.2, 0.5])
        transform = RigidTransform(Rotation3.rot_z(theta), t)
        xi = se3_log(transform)
        k = np.array([[0.0, -theta, 0.0], [theta, 0.0, 0.0], [0.0, 0.0, 0.0]])
        v_limit = (np.eye(3) - 0.5 * k) @ t
        assert np.abs(xi.v - v_limit).max() <= 1e-10
        assert np.abs(xi.omega - [0.0, 0.0, theta]).max() <= 1e-10


class TestSe3Exp:
    def test_identity(self):
        t = se3_exp(Twist6(np.zeros(3), np.zeros(3)))
        np.testing.assert_allclose(t.as_matrix(), np.eye(4), atol=1e-15)

    def test_pure_rotation_about_z(self):
        t = se3_exp(Twist6(np.zeros(3), (0.0, 0.0, math.pi)))
        np.testing.assert_allclose(
            t.rotation.matrix, np.diag([-1.0, -1.0, 1.0]), atol=1e-12
        )
        np.testing.assert_allclose(t.translation, np.zeros(3), atol=1e-15)

    def test_round_trip(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            xi = random_twist(rng)
            back = se3_log(se3_exp(xi))
            np.testing.assert_allclose(back.as_vector(), xi.as_vector(), atol=1e-9)

    @settings(max_examples=50, deadline=None, derandomize=True)
    @given(st.integers(min_value=0, max_value=2**32 - 1))
    def test_round_trip_property(self, seed):
        xi = random_twist(np.random.default_rng(seed))
        back = se3_log(se3_exp(xi))
        np.testing.assert_allclose(back.as_vector(), xi.as_vector(), atol=1e-9)


class TestRelativeTransform:
    def test_coincident_frames(self):
        rng = np.random.default_rng(11)
        t = se3_exp(random_twist(rng))
        rel = relative_transform(t, t)
        np.testing.assert_allclose(rel.as_matrix(), np.eye(4), atol=1e-12)

    def test_identity_goal(self):
        rng = np.random.default_rng(13)
        t = se3_exp(random_twist(rng))
        rel = relative_transform(RigidTransform.identity(), t)
        np.testing.assert_allclose(rel.as_matrix(), t.as_matrix(), atol=1e-15)

    def test_translation_difference(self):
        goal = RigidTransform.from_translation((1.0, 0.0, 0.0))
        current = RigidTransform.from_translation((3.0, 0.0, 0.0))
        rel = relative_transform(goal, current)
        # Oracle: direct 4x4 product inv(goal) @ current.
        expected = np.linalg.inv(goal.as_matrix()) @ current.as_matrix()
        np.testing.assert_allclose(rel.as_matrix(), expected, atol=1e-12)
        np.testing.assert_allclose(rel.translation, [2.0, 0.0, 0.0], atol=1e-12)

    def test_matches_matrix_product(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            goal = se3_exp(random_twist(rng))
            current = se3_exp(random_twist(rng))
            rel = relative_transform(goal, current)
            expected = np.linalg.inv(goal.as_matrix()) @ current.as_matrix()
            np.testing.assert_allclose(rel.as_matrix(), expected, atol=1e-9)

    def test_error_is_left_invariant(self):
        rng = np.random.default_rng(19)
        for _ in range(20):
            goal = se3_exp(random_twist(rng, max_angle=1.5))
            current = se3_exp(random_twist(rng, max_angle=1.5))
            a = se3_exp(random_twist(rng, max_angle=1.5))
            xi = se3_log(relative_transform(goal, current))
            xi_moved = se3_log(relative_transform(a @ goal, a @ current))
            np.testing.assert_allclose(
                xi_moved.as_vector(), xi.as_vector(), atol=1e-9
            )


class TestQuaternionAngle:
    def test_identical(self):
        q = UnitQuaternion(0.3, 0.5, -0.2, 0.7)
        assert quaternion_angle(q, q) == 0.0

    def test_double_cover(self):
        q = UnitQuaternion(0.3, 0.5, -0.2, 0.7)
        neg = UnitQuaternion(-q.w, -q.x, -q.y, -q.z)
        assert quaternion_angle(q, neg) == pytest.approx(0.0, abs=1e-12)

    def test_quarter_turn(self):
        a = UnitQuaternion.identity()
        b = Rotation3.rot_z(math.pi / 2).to_quaternion()
        assert b.w == pytest.approx(math.cos(math.pi / 4), abs=1e-12)
        assert quaternion_angle(a, b) == pytest.approx(math.pi / 2, abs=1e-12)

    def test_symmetric_nonnegative_and_definite(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            ra = se3_exp(random_twist(rng)).rotation
            rb = se3_exp(random_twist(rng)).rotation
            qa, qb = ra.to_quaternion(), rb.to_quaternion()
            ang = quaternion_angle(qa, qb)
            assert ang >= 0.0
            assert ang == pytest.approx(quaternion_angle(qb, qa), abs=1e-15)
            # Zero iff the rotations agree: check via the relative rotation angle.
            rel_angle = (ra.inverse() @ rb).angle()
            assert ang == pytest.approx(rel_angle, abs=1e-7)

    def test_round_trip_through_rotation(self):
        rng = np.random.default_rng(29)
        for _ in range(50):
            r = se3_exp(random_twist(rng)).rotation
            q = r.to_quaternion()
            np.testing.assert_allclose(q.to_rotation().matrix, r.matrix, atol=1e-12)


class TestConstructionInvariants:
    def test_rotation_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            Rotation3(np.eye(3) * 1.001)

    def test_rotation_rejects_reflection(self):
        with pytest.raises(ValueError):
            Rotation3(np.diag([1.0, 1.0, -1.0]))

    def test_inverse_composes_to_identity(self):
        rng = np.random.default_rng(31)
        t = se3_exp(random_twist(rng))
        np.testing.assert_allclose(
            (t.inverse() @ t).as_matrix(), np.eye(4), atol=1e-9
        )

    def test_composition_associative(self):
        rng = np.random.default_rng(37)
        a, b, c = (se3_exp(random_twist(rng)) for _ in range(3))
        left = ((a @ b) @ c).as_matrix()
        right = (a @ (b @ c)).as_matrix()
        np.testing.assert_allclose(left, right, atol=1e-12)

    def test_values_are_immutable(self):
        t = RigidTransform.identity()
        with pytest.raises(ValueError):
            t.translation[0] = 1.0
        with pytest.raises(ValueError):
            t.rotation.matrix[0, 0] = 2.0

    def test_pose_vec7_round_trip(self):
        rng = np.random.default_rng(41)
        t = se3_exp(random_twist(rng))
        back = RigidTransform.from_vec7(t.to_vec7())
        np.testing.assert_allclose(back.as_matrix(), t.as_matrix(), atol=1e-12)
