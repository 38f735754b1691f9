import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bioloc.geometry import (CellIndex, NetworkGeometry, Pose, PoseDelta,
                             apply_delta, compose_delta, normalize_angle,
                             normalize_angles)


class TestNormalizeAngle:
    def test_identity(self):
        assert normalize_angle(0.0) == 0.0

    def test_three_pi_wraps_to_minus_pi(self):
        assert normalize_angle(3 * math.pi) == pytest.approx(-math.pi)

    def test_lower_boundary_kept(self):
        assert normalize_angle(-math.pi) == -math.pi

    def test_upper_boundary_excluded(self):
        assert normalize_angle(math.pi) == -math.pi

    def test_rejects_non_finite(self):
        for bad in (math.inf, -math.inf, math.nan):
            with pytest.raises(ValueError):
                normalize_angle(bad)

    @given(st.floats(-10.0, 10.0), st.integers(-10, 10))
    def test_periodic_and_idempotent(self, a, k):
        base = normalize_angle(a)
        assert -math.pi <= base < math.pi
        assert normalize_angle(a + 2 * math.pi * k) == pytest.approx(base, abs=1e-9)
        assert normalize_angle(base) == base

    def test_array_variant_agrees_with_scalar(self):
        angles = np.linspace(-9.0, 9.0, 101)
        vec = normalize_angles(angles)
        ref = np.array([normalize_angle(a) for a in angles])
        assert np.allclose(vec, ref, atol=1e-9)
        assert vec.min() >= -math.pi and vec.max() < math.pi


class TestPose:
    def test_theta_normalized_on_construction(self):
        assert Pose(0, 0, 3 * math.pi).theta == pytest.approx(-math.pi)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Pose(math.nan, 0, 0)


class TestPoseToCell:
    def test_origin_maps_to_center(self, default_geom):
        assert default_geom.pose_to_cell(Pose(0, 0, 0)) == CellIndex(50, 50, 18)

    def test_hand_evaluated_quantization(self, default_geom):
        # floor(1.23/0.1 + 50) = 62, floor(-0.51/0.1 + 50) = 44,
        # floor((pi/18)/(pi/18) + 18) = 19
        c = default_geom.pose_to_cell(Pose(1.23, -0.51, math.pi / 18))
        assert c == CellIndex(62, 44, 19)

    def test_theta_wrap_at_minus_pi(self, default_geom):
        # floor(-0.05/0.1 + 50) = 49; theta -pi gives index 0 after wrap
        c = default_geom.pose_to_cell(Pose(-0.05, 0.0, -math.pi))
        assert c == CellIndex(49, 50, 0)

    def test_out_of_extent_names_the_axis(self, default_geom):
        with pytest.raises(ValueError, match="x axis"):
            default_geom.pose_to_cell(Pose(5.0, 0, 0))
        with pytest.raises(ValueError, match="y axis"):
            default_geom.pose_to_cell(Pose(0, -5.01, 0))


class TestCellToPose:
    def test_center_cell(self, default_geom):
        p = default_geom.cell_to_pose(CellIndex(50, 50, 18))
        assert (p.x, p.y) == pytest.approx((0.05, 0.05))
        assert p.theta == pytest.approx(math.pi / 36)

    def test_corner_cell(self, default_geom):
        p = default_geom.cell_to_pose(CellIndex(0, 0, 0))
        assert (p.x, p.y) == pytest.approx((-4.95, -4.95))
        assert p.theta == pytest.approx(-math.pi * 35 / 36)

    def test_round_trip_exact_on_all_cells(self, small_geom):
        for xp in range(small_geom.n_xy):
            for yp in range(small_geom.n_xy):
                for tp in range(small_geom.n_theta):
                    c = CellIndex(xp, yp, tp)
                    assert small_geom.pose_to_cell(small_geom.cell_to_pose(c)) == c

    def test_invalid_index_rejected(self, default_geom):
        with pytest.raises(ValueError):
            default_geom.cell_to_pose(CellIndex(100, 0, 0))


class TestNetworkGeometry:
    def test_theta_axis_must_cover_full_circle(self):
        with pytest.raises(ValueError):
            NetworkGeometry(0.1, 0.2, 10, 36)

    def test_rejects_degenerate_sizes(self):
        with pytest.raises(ValueError):
            NetworkGeometry(0.0, 2 * math.pi / 4, 10, 4)
        with pytest.raises(ValueError):
            NetworkGeometry(0.1, 2 * math.pi, 10, 1)

    def test_quantize_arrays_matches_scalar(self, default_geom):
        rng = np.random.default_rng(7)
        xs = rng.uniform(-4.9, 4.9, 200)
        ys = rng.uniform(-4.9, 4.9, 200)
        ts = rng.uniform(-math.pi, math.pi, 200)
        xp, yp, tp, ok = default_geom.quantize_arrays(xs, ys, ts)
        assert ok.all()
        for i in range(200):
            c = default_geom.pose_to_cell(Pose(xs[i], ys[i], ts[i]))
            assert (xp[i], yp[i], tp[i]) == c.as_tuple()


class TestComposeDelta:
    def test_zero_motion(self):
        p = Pose(1.2, -0.3, 0.7)
        d = compose_delta(p, p)
        assert (d.dx, d.dy, d.dtheta, d.forward, d.lateral) == (0, 0, 0, 0, 0)

    def test_aligned_frames(self):
        d = compose_delta(Pose(0, 0, 0), Pose(1, 0, 0))
        assert (d.dx, d.dy, d.dtheta) == (1, 0, 0)
        assert (d.forward, d.lateral) == pytest.approx((1, 0))

    def test_rotated_frame(self):
        # moving +1 m in world y while facing +y is pure forward motion
        d = compose_delta(Pose(0, 0, math.pi / 2), Pose(0, 1, math.pi / 2))
        assert (d.dx, d.dy) == pytest.approx((0, 1))
        assert d.forward == pytest.approx(1)
        assert d.lateral == pytest.approx(0, abs=1e-12)

    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-3, 3),
           st.floats(-5, 5), st.floats(-5, 5), st.floats(-3, 3))
    def test_apply_delta_inverts(self, x0, y0, t0, x1, y1, t1):
        prev, cur = Pose(x0, y0, t0), Pose(x1, y1, t1)
        back = apply_delta(prev, compose_delta(prev, cur))
        assert back.x == pytest.approx(cur.x, abs=1e-9)
        assert back.y == pytest.approx(cur.y, abs=1e-9)
        assert normalize_angle(back.theta - cur.theta) == pytest.approx(0, abs=1e-9)

    def test_from_robot_frame_round_trip(self):
        d = PoseDelta.from_robot_frame(0.5, -0.1, 0.2, ref_heading=1.1)
        prev = Pose(2.0, 3.0, 1.1)
        d2 = compose_delta(prev, apply_delta(prev, d))
        assert d2.forward == pytest.approx(0.5)
        assert d2.lateral == pytest.approx(-0.1)
