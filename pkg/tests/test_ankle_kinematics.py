import math

import numpy as np
import pytest

from exogait.ankle_kinematics import (AnkleChainParams, ShankAttitude,
                                      foot_orientation, rot_axis,
                                      solve_level_foot)
from exogait.errors import AttitudeSingular


def mat_oracle(shank: ShankAttitude, q_sa, q_ha,
               chain: AnkleChainParams):
    """Explicit rotation-matrix product, written out independently."""
    def rx(a):
        return np.array([[1, 0, 0],
                         [0, math.cos(a), -math.sin(a)],
                         [0, math.sin(a), math.cos(a)]])

    def ry(a):
        return np.array([[math.cos(a), 0, math.sin(a)],
                         [0, 1, 0],
                         [-math.sin(a), 0, math.cos(a)]])

    def rz(a):
        return np.array([[math.cos(a), -math.sin(a), 0],
                         [math.sin(a), math.cos(a), 0],
                         [0, 0, 1]])

    def axis_angle(axis, ang):
        # quaternion-based, distinct from the Rodrigues form in the module
        ax = np.asarray(axis, float)
        w = math.cos(ang / 2.0)
        xyz = math.sin(ang / 2.0) * ax
        x, y, z = xyz
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ])

    R = rz(shank.yaw) @ rx(shank.roll) @ ry(shank.pitch)
    R = R @ axis_angle(chain.sagittal_axis, q_sa)
    R = R @ axis_angle(chain.henke_axis, q_ha)
    roll = math.asin(R[2, 1])
    pitch = math.atan2(-R[2, 0], R[2, 2])
    return roll, pitch


def test_level_shank_identity():
    r, p = foot_orientation(ShankAttitude(), 0.0, 0.0)
    assert r == 0.0
    assert p == 0.0


def test_pitched_shank_cancelled_by_sagittal_joint():
    chain = AnkleChainParams()
    shank = ShankAttitude(pitch=math.radians(10.0))
    r, p = foot_orientation(shank, -math.radians(10.0), 0.0, chain)
    ro, po = mat_oracle(shank, -math.radians(10.0), 0.0, chain)
    assert r == pytest.approx(ro, abs=1e-14)
    assert p == pytest.approx(po, abs=1e-14)
    assert abs(r) <= 1e-12
    assert abs(p) <= 1e-12


def test_rolled_shank_cancelled_by_henke_joint():
    chain = AnkleChainParams()
    shank = ShankAttitude(roll=math.radians(5.0))
    r, p = foot_orientation(shank, 0.0, -math.radians(5.0), chain)
    ro, po = mat_oracle(shank, 0.0, -math.radians(5.0), chain)
    assert r == pytest.approx(ro, abs=1e-14)
    assert p == pytest.approx(po, abs=1e-14)
    assert abs(r) <= 1e-12
    assert abs(p) <= 1e-12


def test_orientation_matches_matrix_oracle_random():
    rng = np.random.default_rng(3)
    chain = AnkleChainParams()
    for _ in range(50):
        shank = ShankAttitude(*rng.normal(0.0, 0.25, 3))
        qsa, qha = rng.normal(0.0, 0.4, 2)
        got = foot_orientation(shank, qsa, qha, chain)
        want = mat_oracle(shank, qsa, qha, chain)
        assert np.allclose(got, want, atol=1e-12)


def test_solver_trivial_at_level():
    q_sa, q_ha = solve_level_foot(ShankAttitude())
    assert q_sa == 0.0
    assert q_ha == 0.0


def test_solver_round_trip_in_cone():
    rng = np.random.default_rng(4)
    chain = AnkleChainParams()
    for _ in range(60):
        # sample within a 30 degree cone of level
        roll, pitch = rng.uniform(-0.5, 0.5, 2) * math.radians(30) / 0.5 * 0.5
        shank = ShankAttitude(roll=roll, pitch=pitch,
                              yaw=rng.uniform(-0.3, 0.3))
        q_sa, q_ha = solve_level_foot(shank, chain)
        r, p = foot_orientation(shank, q_sa, q_ha, chain)
        assert abs(r) <= 1e-9
        assert abs(p) <= 1e-9


def test_solver_decouples_with_canonical_axes():
    rng = np.random.default_rng(5)
    for _ in range(30):
        roll, pitch = rng.uniform(-0.4, 0.4, 2)
        shank = ShankAttitude(roll=roll, pitch=pitch, yaw=0.0)
        q_sa, q_ha = solve_level_foot(shank)
        assert q_sa == pytest.approx(-pitch, abs=1e-9)
        assert q_ha == pytest.approx(-roll, abs=1e-9)


def test_solver_continuity():
    eps = 1e-4
    s0 = ShankAttitude(roll=0.1, pitch=-0.2, yaw=0.05)
    s1 = ShankAttitude(roll=0.1 + eps, pitch=-0.2, yaw=0.05)
    a0 = solve_level_foot(s0)
    a1 = solve_level_foot(s1)
    assert abs(a1[0] - a0[0]) <= 1e-2
    assert abs(a1[1] - a0[1]) <= 1e-2


def test_oblique_axes_round_trip():
    ax = np.array([0.15, 0.98, -0.1])
    ax /= np.linalg.norm(ax)
    hx = np.array([0.99, 0.1, 0.05])
    hx /= np.linalg.norm(hx)
    chain = AnkleChainParams(tuple(ax), tuple(hx))
    shank = ShankAttitude(roll=0.12, pitch=-0.2, yaw=0.1)
    q_sa, q_ha = solve_level_foot(shank, chain)
    r, p = foot_orientation(shank, q_sa, q_ha, chain)
    assert abs(r) <= 1e-9
    assert abs(p) <= 1e-9


def test_chain_validation():
    with pytest.raises(ValueError):
        AnkleChainParams((0.0, 2.0, 0.0), (1.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        AnkleChainParams((1.0, 0.0, 0.0), (1.0, 0.0, 0.0))


def test_gimbal_lock_raises():
    R_lock = rot_axis((1.0, 0.0, 0.0), math.pi / 2)
    with pytest.raises(AttitudeSingular):
        from exogait.ankle_kinematics import _extract_roll_pitch
        _extract_roll_pitch(R_lock)
