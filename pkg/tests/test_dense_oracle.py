"""Sparse network vs dense full-array reference, per cell to 1e-9."""

import math

import numpy as np
import pytest

from bioloc.geometry import CellIndex, NetworkGeometry, Pose, PoseDelta
from bioloc.pose_cells import KernelConfig, PoseCellNetwork

from dense_ref import DenseNet, dense_from_sparse, max_cell_difference

GEOM8 = NetworkGeometry(k_xy=0.1, k_theta=2 * math.pi / 8, n_xy=8, n_theta=8)


def random_state(rng, n_cells=20):
    return {(int(rng.integers(0, 8)), int(rng.integers(0, 8)),
             int(rng.integers(0, 8))): float(v)
            for v in rng.uniform(0.05, 1.0, n_cells)}


def random_delta(rng):
    return PoseDelta.from_robot_frame(float(rng.uniform(-0.15, 0.15)),
                                      float(rng.uniform(-0.05, 0.05)),
                                      float(rng.uniform(-0.8, 0.8)),
                                      ref_heading=float(rng.uniform(-3, 3)))


def run_sequence(seed, boundary_mode, n_ops=8, prune_epsilon=0.0):
    rng = np.random.default_rng(seed)
    net = PoseCellNetwork(GEOM8, prune_epsilon=prune_epsilon,
                          boundary_mode=boundary_mode)
    net.seed_cells(random_state(rng))
    dense = dense_from_sparse(net)
    k = KernelConfig(sigma_exc_xy=0.8, sigma_exc_theta=0.7, coeff_exc=0.1,
                     sigma_inh_xy=1.3, sigma_inh_theta=1.2, coeff_inh=0.08,
                     truncation_radius=3)
    for _ in range(n_ops):
        op = rng.integers(0, 7)
        if op == 0:
            d = random_delta(rng)
            net.path_integrate(d, mode="literal")
            dense.path_integrate(d, mode="literal")
        elif op == 1:
            d = random_delta(rng)
            net.path_integrate(d, mode="per_heading")
            dense.path_integrate(d, mode="per_heading")
        elif op == 2:
            net.excite(k)
            dense.excite(k)
        elif op == 3:
            net.inhibit(k)
            dense.inhibit(k)
        elif op == 4:
            net.global_inhibit(1e-3)
            dense.global_inhibit(1e-3)
        elif op == 5:
            field = rng.uniform(0.2, 1.0, dense.a.shape)
            net.apply_observation_values(lambda xp, yp, tp: field[xp, yp, tp])
            dense.apply_observation(field)
        else:
            if len(net) and dense.a.sum() > 0:
                net.normalize()
                dense.normalize()
        diff = max_cell_difference(net, dense)
        assert diff <= 1e-9, f"op {op} diverged by {diff}"
    return net, dense


@pytest.mark.parametrize("mode", ["wrap", "clamp"])
@pytest.mark.parametrize("seed", range(30))
def test_random_sequences_match(seed, mode):
    run_sequence(seed, mode)


@pytest.mark.parametrize("seed", range(5))
def test_sequences_with_pruning_match(seed):
    # sparse and dense apply the same prune rule, so results still agree
    run_sequence(1000 + seed, "wrap", prune_epsilon=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_estimate_matches_dense(seed):
    rng = np.random.default_rng(50 + seed)
    net = PoseCellNetwork(GEOM8, prune_epsilon=0.0)
    net.seed_cells(random_state(rng))
    dense = dense_from_sparse(net)
    pose, conf = net.estimate(packet_radius_xy=2, packet_radius_theta=1)
    cx, cy, ct, dconf = dense.estimate(radius_xy=2, radius_theta=1)
    assert pose.x == pytest.approx(cx, abs=1e-9)
    assert pose.y == pytest.approx(cy, abs=1e-9)
    assert math.sin(pose.theta - ct) == pytest.approx(0.0, abs=1e-9)
    assert conf == pytest.approx(dconf, abs=1e-9)
