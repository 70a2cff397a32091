import math

import numpy as np
import pytest

from exogait.errors import ParseError
from exogait.model import (Configuration, FootGeometry, LinkParams,
                           RobotParams, center_of_mass, default_params,
                           forward_kinematics, load_robot_toml,
                           save_robot_toml)


def trig_chain_oracle(q, p):
    """Independent point-by-point trig evaluation of the foot points.

    Written against the documented convention only: local (lx, lz) at pitch
    t maps to (lx cos t + lz sin t, -lx sin t + lz cos t); limbs extend along
    local -z.
    """
    bx, bz, pel, hr, kr, ar, hl, kl, al = q
    out = {}
    for leg, (hq, kq, aq) in (("r", (hr, kr, ar)), ("l", (hl, kl, al))):
        th_thigh = pel + hq
        th_shank = th_thigh + kq
        th_foot = th_shank + aq
        L1 = p.thigh_r.length if leg == "r" else p.thigh_l.length
        L2 = p.shank_r.length if leg == "r" else p.shank_l.length
        kx = bx - L1 * math.sin(th_thigh)
        kz = bz - L1 * math.cos(th_thigh)
        ax = kx - L2 * math.sin(th_shank)
        az = kz - L2 * math.cos(th_shank)

        def world(lx, lz):
            c, s = math.cos(th_foot), math.sin(th_foot)
            return (ax + lx * c + lz * s, az - lx * s + lz * c)

        out[f"ankle_{leg}"] = (ax, az)
        out[f"heel_{leg}"] = world(-p.foot.x_h, -p.foot.z_a)
        out[f"toe_{leg}"] = world(p.foot.x_t, -p.foot.z_a)
    return out


def test_upright_symmetric_zero_config():
    p = default_params()
    q = Configuration(base_z=0.94)
    fs = forward_kinematics(q, p)
    assert fs.ankle_r[1] == pytest.approx(fs.ankle_l[1])
    # ankles sit z_a above the sole points
    assert fs.ankle_r[1] - fs.heel_r[1] == pytest.approx(p.foot.z_a)
    assert fs.ankle_r[1] - fs.toe_r[1] == pytest.approx(p.foot.z_a)
    assert fs.foot_pitch(0) == 0.0
    assert fs.foot_pitch(1) == 0.0


def test_pure_pelvis_pitch_rotates_every_link():
    p = default_params()
    alpha = 0.31
    q = Configuration(base_z=1.0, pelvis_pitch=alpha)
    fs = forward_kinematics(q, p)
    assert np.allclose(fs.pitches, alpha)


def test_foot_points_match_trig_oracle():
    p = default_params()
    rng = np.random.default_rng(11)
    for _ in range(25):
        qv = rng.normal(0.0, 0.5, 9)
        fs = forward_kinematics(Configuration.from_array(qv), p)
        oracle = trig_chain_oracle(qv, p)
        for leg, heel, toe, ankle in (("r", fs.heel_r, fs.toe_r, fs.ankle_r),
                                      ("l", fs.heel_l, fs.toe_l, fs.ankle_l)):
            assert np.allclose(heel, oracle[f"heel_{leg}"], atol=1e-12)
            assert np.allclose(toe, oracle[f"toe_{leg}"], atol=1e-12)
            assert np.allclose(ankle, oracle[f"ankle_{leg}"], atol=1e-12)


def test_default_gait_phase0_heel_toe_oracle():
    from exogait.gait import evaluate, load_default_gait
    p = default_params()
    g = load_default_gait()
    pos, _, _ = evaluate(g, 0.0)
    qv = np.concatenate([[0.0, 0.9, 0.0], pos])
    fs = forward_kinematics(Configuration.from_array(qv), p)
    oracle = trig_chain_oracle(qv, p)
    assert fs.heel_r[1] == pytest.approx(oracle["heel_r"][1], abs=1e-12)
    assert fs.toe_l[1] == pytest.approx(oracle["toe_l"][1], abs=1e-12)


def test_com_symmetric_standing_on_midline():
    p = default_params()
    q = Configuration(base_x=0.37, base_z=0.94)
    com, _ = center_of_mass(q, p)
    # symmetric legs: feet straddle the midline at base_x + foot com offset
    fs = forward_kinematics(q, p)
    mid = 0.5 * (fs.ankle_r[0] + fs.ankle_l[0])
    foot_off = 2 * p.foot_r.mass * p.foot_r.com[0] / p.total_mass
    torso_off = p.torso.mass * p.torso.com[0] / p.total_mass
    assert com[0] == pytest.approx(mid + foot_off + torso_off, abs=1e-12)


def test_com_point_mass_variant():
    base = default_params()
    eps = 1e-9
    tiny = dict(length=0.44, com=(0.0, -0.2), inertia=1e-12)
    kw = {}
    for name in ("thigh_r", "shank_r", "foot_r", "thigh_l", "shank_l",
                 "foot_l"):
        lk = base.link(name)
        kw[name] = LinkParams(eps, lk.length, lk.com, 1e-12)
    p = RobotParams(torso=LinkParams(55.0, 0.0, (0.0, 0.30), 2.5),
                    total_mass=55.0 + 6 * eps, **kw)
    q = Configuration(base_x=0.2, base_z=1.1, pelvis_pitch=0.1, hip_r=0.4,
                      knee_r=0.8, hip_l=-0.3, knee_l=0.2)
    com, _ = center_of_mass(q, p)
    # torso COM in world
    c, s = math.cos(0.1), math.sin(0.1)
    tx = 0.2 + 0.30 * s
    tz = 1.1 + 0.30 * c
    assert com[0] == pytest.approx(tx, abs=1e-9)
    assert com[1] == pytest.approx(tz, abs=1e-9)


def test_com_jacobian_matches_finite_differences():
    p = default_params()
    rng = np.random.default_rng(5)
    h = 1e-6
    for _ in range(100):
        qv = rng.normal(0.0, 0.6, 9)
        _, J = center_of_mass(Configuration.from_array(qv), p)
        Jfd = np.zeros((2, 9))
        for k in range(9):
            qp = qv.copy()
            qp[k] += h
            qm = qv.copy()
            qm[k] -= h
            cp, _ = center_of_mass(Configuration.from_array(qp), p)
            cm, _ = center_of_mass(Configuration.from_array(qm), p)
            Jfd[:, k] = (cp - cm) / (2 * h)
        assert np.abs(J - Jfd).max() <= 1e-6


def test_translation_equivariance():
    p = default_params()
    rng = np.random.default_rng(6)
    qv = rng.normal(0.0, 0.4, 9)
    fs0 = forward_kinematics(Configuration.from_array(qv), p)
    shift = np.array([1.7, -0.45])
    qv2 = qv.copy()
    qv2[0] += shift[0]
    qv2[1] += shift[1]
    fs1 = forward_kinematics(Configuration.from_array(qv2), p)
    assert np.allclose(fs1.origins, fs0.origins + shift, atol=1e-12)
    assert np.allclose(fs1.heel_r, fs0.heel_r + shift, atol=1e-12)
    assert np.allclose(fs1.toe_l, fs0.toe_l + shift, atol=1e-12)
    assert np.allclose(fs1.pitches, fs0.pitches)


def test_mirror_symmetry_leg_swap():
    p = default_params()
    rng = np.random.default_rng(7)
    qv = rng.normal(0.0, 0.4, 9)
    qv[2] = 0.0
    q = Configuration.from_array(qv)
    fs = forward_kinematics(q, p)
    fss = forward_kinematics(q.swap_legs(), p)
    assert np.allclose(fss.ankle_r, fs.ankle_l, atol=1e-14)
    assert np.allclose(fss.heel_l, fs.heel_r, atol=1e-14)
    assert np.allclose(fss.toe_r, fs.toe_l, atol=1e-14)


def test_robot_params_validation():
    with pytest.raises(ValueError):
        FootGeometry(x_h=-0.1)
    with pytest.raises(ValueError):
        FootGeometry(cop_box_half_x=0.2)
    with pytest.raises(ValueError):
        RobotParams(total_mass=50.0)  # inconsistent with link masses
    p = default_params()
    msum = sum(p.link(n).mass for n in
               ("torso", "thigh_r", "shank_r", "foot_r", "thigh_l",
                "shank_l", "foot_l"))
    assert abs(msum - p.total_mass) <= 1e-9


def test_robot_toml_roundtrip(tmp_path):
    p = default_params()
    path = tmp_path / "robot.toml"
    save_robot_toml(p, path)
    p2 = load_robot_toml(path)
    assert p2 == p


def test_robot_toml_missing_field(tmp_path):
    p = default_params()
    path = tmp_path / "robot.toml"
    save_robot_toml(p, path)
    text = path.read_text().replace("total_mass", "totally_mass")
    path.write_text(text)
    with pytest.raises(ParseError, match="total_mass"):
        load_robot_toml(path)
