import math
from dataclasses import replace

import numpy as np
import pytest

from exogait import _core
from exogait.dynamics import (ContactWrench, FrictionStatus, HybridSystemSpec,
                              State, Terrain, bias_forces, constrained_accel,
                              friction_check, hybrid_run, impact_map,
                              mass_matrix, relabel_legs, stance_anchor)
from exogait.model import Configuration, DomainLabel, default_params


def stance_state(p, qj, base_z=0.85, pel=0.0):
    """Right-stance state with the ankle exactly at (0, z_a), foot flat."""
    q = np.zeros(9)
    q[1] = base_z
    q[2] = pel
    q[3:9] = qj
    q[5] = -(pel + q[3] + q[4])   # flat right foot
    pts, _ = _core.foot_points(q, p.packed())
    q[0] -= pts[0, 2, 0]
    q[1] += p.foot.z_a - pts[0, 2, 1]
    return q


def static_torques(q, side, p):
    """Static inverse dynamics oracle: torques + wrench with vdot = v = 0."""
    P = p.packed()
    _M, bias = _core.mass_bias(q, np.zeros(9), P, p.gravity_vector())
    _m, _cg, origins, pitches, Jorg, svec, *_ = _core._assemble(
        q, np.zeros(9), P)
    li = 3 + 3 * side
    J = np.vstack([Jorg[li, 0], Jorg[li, 1], svec[li]])
    A = np.zeros((9, 9))
    A[3:9, 0:6] = np.eye(6)
    A[:, 6:9] = J.T
    sol = np.linalg.solve(A, bias)
    return sol[:6], sol[6:]


def test_bias_at_rest_is_gravity():
    p = default_params()
    rng = np.random.default_rng(0)
    for _ in range(20):
        q = Configuration.from_array(rng.normal(0, 0.5, 9))
        b = bias_forces(q, np.zeros(9), p)
        assert abs(b[0]) <= 1e-10
        assert b[1] == pytest.approx(p.total_mass * p.gravity, abs=1e-9)


def test_mass_matrix_spd_100_random():
    p = default_params()
    rng = np.random.default_rng(1)
    for _ in range(100):
        q = Configuration.from_array(rng.normal(0, 0.6, 9))
        M = mass_matrix(q, p)
        assert np.allclose(M, M.T, atol=1e-12)
        assert np.linalg.eigvalsh(M).min() > 0.0


def test_skew_symmetry_finite_difference_mdot():
    p = default_params()
    rng = np.random.default_rng(2)
    h = 1e-4
    for _ in range(20):
        qv = rng.normal(0, 0.5, 9)
        v = rng.normal(0, 1.0, 9)

        def mdot(step):
            Mp = mass_matrix(Configuration.from_array(qv + step * v), p)
            Mm = mass_matrix(Configuration.from_array(qv - step * v), p)
            return (Mp - Mm) / (2 * step)

        # Richardson-extrapolated finite-difference dM/dt
        Mdot = (4.0 * mdot(h / 2) - mdot(h)) / 3.0
        q = Configuration.from_array(qv)
        Cv = bias_forces(q, v, p) - bias_forces(q, np.zeros(9), p)
        val = v @ Mdot @ v - 2.0 * (v @ Cv)
        assert abs(val) <= 1e-8


def test_static_equilibrium_accel_and_weight():
    p = default_params()
    q = stance_state(p, [0.05, 0.12, 0.0, -0.3, 0.5, -0.2])
    tau, lam = static_torques(q, 0, p)
    st = State(q, np.zeros(9))
    vd, w = constrained_accel(st, tau, DomainLabel.RIGHT_STANCE, p)
    assert np.abs(vd).max() <= 1e-6
    assert w.fz == pytest.approx(p.total_mass * p.gravity, rel=1e-9)
    # at static equilibrium the COP sits under the COM
    com, _ = _core.com_jacobian(q, p.packed())
    assert w.copx(1.0) == pytest.approx(com[0], abs=1e-9)


def test_passive_energy_audit_constrained():
    p = replace(default_params(), stop_stiffness=0.0, stop_damping=0.0)
    P = p.packed()
    q = stance_state(p, [0.05, 0.25, 0.0, -0.3, 0.6, -0.1])
    rng = np.random.default_rng(3)
    v = rng.normal(0, 0.2, 9)
    v, _, _ = _core.impact(q, v, P, 0)
    gvec = p.gravity_vector()
    E0 = _core.total_energy(q, v, P, gvec)
    anchor = np.array([0.0, p.foot.z_a, 0.0])
    baum = np.array([20.0, 20.0])
    limits = p.limits_array()
    for _ in range(500):
        q, v, ok = _core.rk4_step(q, v, np.zeros(6), np.zeros(3), P, gvec, 0,
                                  anchor, baum, limits, 0.0, 0.0, 1e-3)
        assert ok
    E1 = _core.total_energy(q, v, P, gvec)
    assert abs(E1 - E0) / abs(E0) <= 1e-5


def test_ballistic_energy_drift():
    p = replace(default_params(), stop_stiffness=0.0, stop_damping=0.0)
    P = p.packed()
    q = np.array([0.0, 5.0, 0.05, 0.2, 0.8, -0.1, -0.3, 0.9, 0.08])
    rng = np.random.default_rng(4)
    v = np.concatenate([[0.3, 1.0, 0.2], rng.normal(0, 0.3, 6)])
    gvec = p.gravity_vector()
    E0 = _core.total_energy(q, v, P, gvec)
    for _ in range(1000):
        q, v = _core.rk4_step_free(q, v, np.zeros(6), np.zeros(3), P, gvec,
                                   p.limits_array(), 0.0, 0.0, 1e-3)
    E1 = _core.total_energy(q, v, P, gvec)
    assert abs(E1 - E0) / abs(E0) <= 1e-6


def test_locked_legs_compound_pendulum_oracle():
    """Freeze five joints by computed torque; the remaining stance-ankle
    acceleration must match the rigid compound pendulum about the ankle."""
    p = default_params()
    P = p.packed()
    q = stance_state(p, [0.06, 0.2, 0.0, -0.25, 0.5, -0.25], pel=0.03)
    st = State(q, np.zeros(9))

    # affine map: vdot = a0 + A5 @ tau5 (five non-ankle joint torques)
    def accel(tau6):
        vd, _ = constrained_accel(State(q, np.zeros(9)), tau6,
                                  DomainLabel.RIGHT_STANCE, p)
        return vd

    a0 = accel(np.zeros(6))
    cols = []
    idx5 = [0, 1, 3, 4, 5]          # all actuated joints except stance ankle
    for j in idx5:
        e = np.zeros(6)
        e[j] = 1.0
        cols.append(accel(e) - a0)
    A5 = np.array(cols).T           # (9, 5)
    joint_rows = [3 + j for j in idx5]
    tau5 = np.linalg.solve(A5[joint_rows, :], -a0[joint_rows])
    tau6 = np.zeros(6)
    for j, t in zip(idx5, tau5):
        tau6[j] = t
    vd = accel(tau6)
    assert np.abs(vd[joint_rows]).max() <= 1e-8

    # analytic compound pendulum about the fixed ankle point; the stance
    # foot is pinned to the ground and does not rotate with the body
    _m, _cg, origins, pitches, _Jo, _sv, coms, _Jl, _g1, _g2 = \
        _core._assemble(q, np.zeros(9), P)
    ankle = origins[3]
    I_a = 0.0
    m_moment = 0.0
    for i in range(7):
        if i == 3:
            continue
        m_i = P[i]
        I_i = P[7 + i]
        r = coms[i] - ankle
        I_a += I_i + m_i * (r @ r)
        m_moment += m_i * p.gravity * r[0]
    # positive pitch-about-ankle rotation = -q_ankle direction; gravity
    # moment about the ankle tips the body toward +x when the COM is ahead
    theta_dd = m_moment / I_a
    assert vd[5] == pytest.approx(-theta_dd, rel=1e-6, abs=1e-8)


def test_friction_check_examples():
    assert friction_check(ContactWrench(0.0, 500.0, 0.0), 0.6) \
        is FrictionStatus.OK
    assert friction_check(ContactWrench(300.0, 400.0, 0.0), 0.6) \
        is FrictionStatus.SLIP_VIOLATION
    assert friction_check(ContactWrench(10.0, 0.0, 0.0), 0.6) \
        is FrictionStatus.LIFT_VIOLATION


def test_impact_zero_velocity_fixed_point():
    p = default_params()
    q = stance_state(p, [0.05, 0.12, 0.0, -0.3, 0.5, -0.2])
    st = impact_map(State(q, np.zeros(9)), DomainLabel.RIGHT_STANCE, p)
    assert np.allclose(st.v, 0.0)
    assert np.allclose(st.q, q)


def test_impact_constraint_velocity_and_energy_100_random():
    p = default_params()
    P = p.packed()
    rng = np.random.default_rng(5)
    for _ in range(100):
        q = rng.normal(0, 0.5, 9)
        v = rng.normal(0, 1.0, 9)
        side = int(rng.integers(0, 2))
        vplus, lam, ok = _core.impact(q, v, P, side)
        assert ok
        _m, _cg, origins, pitches, Jorg, svec, *_ = _core._assemble(
            q, np.zeros(9), P)
        li = 3 + 3 * side
        J = np.vstack([Jorg[li, 0], Jorg[li, 1], svec[li]])
        assert np.abs(J @ vplus).max() <= 1e-10
        M, _ = _core.mass_bias(q, np.zeros(9), P, p.gravity_vector())
        ke_pre = 0.5 * v @ M @ v
        ke_post = 0.5 * vplus @ M @ vplus
        assert ke_post <= ke_pre + 1e-12


def test_impact_idempotent_on_consistent_states():
    p = default_params()
    P = p.packed()
    rng = np.random.default_rng(6)
    for _ in range(20):
        q = rng.normal(0, 0.5, 9)
        v = rng.normal(0, 1.0, 9)
        v1, _, _ = _core.impact(q, v, P, 1)
        v2, lam2, _ = _core.impact(q, v1, P, 1)
        assert np.abs(v2 - v1).max() <= 1e-12
        assert np.abs(lam2).max() <= 1e-9


def test_relabel_involution():
    st = State(np.arange(9.0), np.arange(9.0) + 10)
    st2 = relabel_legs(relabel_legs(st))
    assert np.array_equal(st.q, st2.q)
    assert np.array_equal(st.v, st2.v)


def test_hybrid_feedforward_hold_runs_to_max_time():
    p = default_params()
    q = stance_state(p, [0.05, 0.12, 0.0, -0.3, 0.5, -0.2])
    tau_ff, _ = static_torques(q, 0, p)

    class Hold:
        def compute(self, t, sensors, probe):
            return tau_ff, {}

        def on_domain_switch(self, t, d):
            pass

    spec = HybridSystemSpec()
    tr = hybrid_run(State(q, np.zeros(9)), Hold(), spec, p, max_steps=5,
                    max_time=1.0)
    assert tr.termination == "max_time"
    assert tr.steps_completed == 0
    assert np.abs(tr.q[-1] - q).max() <= 1e-6


def test_hybrid_run_deterministic():
    from exogait.control import ControllerConfig, WalkingController
    from exogait.gait import load_default_gait, load_default_pelvis, \
        nominal_state
    p = default_params()
    g = load_default_gait()
    ref = load_default_pelvis()
    out = []
    for _ in range(2):
        ctl = WalkingController(g, ref, ControllerConfig(), p)
        tr = hybrid_run(nominal_state(g, ref, p), ctl, HybridSystemSpec(), p,
                        max_steps=3, max_time=3.0)
        out.append(tr)
    a, b = out
    assert np.array_equal(a.q, b.q)
    assert np.array_equal(a.v, b.v)
    assert np.array_equal(a.tau, b.tau)
    assert np.array_equal(a.wrench, b.wrench)


def test_baumgarte_keeps_constraint_tight_during_walk():
    from exogait.control import ControllerConfig, WalkingController
    from exogait.gait import load_default_gait, load_default_pelvis, \
        nominal_state
    p = default_params()
    g = load_default_gait()
    ref = load_default_pelvis()
    ctl = WalkingController(g, ref, ControllerConfig(), p)
    spec = HybridSystemSpec()
    tr = hybrid_run(nominal_state(g, ref, p), ctl, spec, p, max_steps=6,
                    max_time=6.0)
    assert tr.steps_completed >= 4
    P = p.packed()
    # steady-stance hold: after the touchdown snap settles (Baumgarte
    # beta = 20/s, so ~5 time constants for a millimetre mismatch), the
    # stance foot pose must not drift
    settle = 0.30
    bounds = [0.0] + [e.t for e in tr.events] + [tr.t[-1]]
    worst_pos = 0.0
    worst_pitch = 0.0
    for s in range(len(bounds) - 1):
        t0, t1 = bounds[s], bounds[s + 1]
        if t1 - t0 < settle + 0.05:
            continue
        sel = np.where((tr.t >= t0 + settle) & (tr.t < t1))[0]
        ref_pose = None
        for k in sel:
            side = int(tr.domain[k])
            pts, fp = _core.foot_points(tr.q[k], P)
            pose = (pts[side, 2, 0], pts[side, 2, 1], fp[side])
            if ref_pose is None:
                ref_pose = pose
                continue
            worst_pos = max(worst_pos, abs(pose[0] - ref_pose[0]),
                            abs(pose[1] - ref_pose[1]))
            worst_pitch = max(worst_pitch, abs(pose[2] - ref_pose[2]))
    assert worst_pos <= 1e-4
    assert worst_pitch <= 1e-4


def test_terrain_geometry():
    t = Terrain.ramp(math.radians(2.0))
    assert t.height(0.0) == pytest.approx(0.0, abs=1e-9)
    assert t.height(1.0) == pytest.approx(math.tan(math.radians(2.0)),
                                          rel=1e-9)
    assert t.foot_pitch_target(0.5) == pytest.approx(-math.radians(2.0))
    flat = Terrain.flat()
    assert flat.height(12.3) == 0.0
    assert flat.slope(-4.0) == 0.0


def test_stance_anchor_snaps_to_corner():
    p = default_params()
    q = stance_state(p, [0.05, 0.12, 0.0, -0.3, 0.5, -0.2])
    anchor = stance_anchor(q, 0, Terrain.flat(), p)
    assert anchor[0] == pytest.approx(0.0, abs=1e-12)
    assert anchor[1] == pytest.approx(p.foot.z_a, abs=1e-12)
    assert anchor[2] == 0.0
