"""Closed-loop walking properties of the controller stack."""

import math
from dataclasses import replace

import numpy as np
import pytest

from exogait.control import ControllerConfig, WalkingController, build_sensors
from exogait.dynamics import (ContactWrench, HybridSystemSpec, State,
                              Terrain, hybrid_run)
from exogait.gait import load_default_gait, load_default_pelvis, nominal_state
from exogait.model import DomainLabel, default_params


@pytest.fixture(scope="module")
def walk_trace():
    p = default_params()
    g = load_default_gait()
    ref = load_default_pelvis()
    ctl = WalkingController(g, ref, ControllerConfig(), p)
    spec = HybridSystemSpec(terrain=Terrain.ramp(math.radians(1.0)))
    tr = hybrid_run(nominal_state(g, ref, p, terrain=spec.terrain), ctl,
                    spec, p.scale_masses(1.02), max_steps=10, max_time=10.0)
    assert tr.steps_completed >= 8
    return tr


def test_cop_contained_at_every_loaded_sample(walk_trace):
    p = default_params()
    cfg = ControllerConfig()
    fz = walk_trace.wrench[:, 1]
    my = walk_trace.wrench[:, 2]
    loaded = fz >= cfg.fz_epsilon
    cop = -my[loaded] / fz[loaded]
    lo = -cfg.alpha * p.foot.x_h
    hi = cfg.alpha * p.foot.x_t
    assert cop.min() >= lo - 1e-9
    assert cop.max() <= hi + 1e-9


def test_swing_foot_pitch_small(walk_trace):
    sw = walk_trace.diag["swing_foot_pitch"]
    rms = math.degrees(float(np.sqrt(np.mean(sw ** 2))))
    assert rms <= 1.0


def _nominal_sensors(p, g, ref, stance_side):
    st = nominal_state(g, ref, p)
    w = ContactWrench(0.0, p.total_mass * p.gravity, 0.0)
    return build_sensors(st, stance_side, {stance_side: w}, p)


def test_blend_continuity_across_switch():
    p = default_params()
    g = load_default_gait()
    ref = load_default_pelvis()
    cfg = ControllerConfig(blend_window=0.05)
    ctl = WalkingController(g, ref, cfg, p)
    sensors = _nominal_sensors(p, g, ref, 0)
    t_pre = 0.9 * g.step_duration
    tau_pre, _ = ctl.compute(t_pre, sensors, None)
    ctl.on_domain_switch(t_pre, DomainLabel.LEFT_STANCE)
    # same sensor snapshot immediately after the switch
    tau_post, _ = ctl.compute(t_pre, sensors, None)
    assert np.abs(tau_post - tau_pre).max() <= 1e-9


def test_flag_isolation_changes_only_its_channels():
    p = default_params()
    g = load_default_gait()
    ref = load_default_pelvis()
    sensors = _nominal_sensors(p, g, ref, 0)
    t = 0.4 * g.step_duration
    st_ankle, sw_ankle = 2, 5

    def out(cfg):
        ctl = WalkingController(g, ref, cfg, p)
        tau, _ = ctl.compute(t, sensors, None)
        return tau

    base = out(ControllerConfig())
    no_ik = out(ControllerConfig(swing_ik_on=False))
    d = np.nonzero(np.abs(no_ik - base) > 1e-12)[0]
    assert set(d) <= {sw_ankle}
    no_loop = out(ControllerConfig(pelvis_loop_on=False))
    d = np.nonzero(np.abs(no_loop - base) > 1e-12)[0]
    assert set(d) <= {st_ankle}
    no_filter = out(ControllerConfig(cop_filter_on=False))
    d = np.nonzero(np.abs(no_filter - base) > 1e-12)[0]
    assert set(d) <= {st_ankle}


def test_flags_off_equals_pure_joint_pd():
    p = default_params()
    g = load_default_gait()
    ref = load_default_pelvis()
    cfg = ControllerConfig(swing_ik_on=False, cop_filter_on=False,
                           pelvis_loop_on=False)
    ctl = WalkingController(g, ref, cfg, p)
    sensors = _nominal_sensors(p, g, ref, 0)
    t = 0.3 * g.step_duration
    tau, _ = ctl.compute(t, sensors, None)
    from exogait.gait import evaluate
    q_des, qd_des, _ = evaluate(g, ctl.phase(t))
    want = np.array(cfg.kp) * (q_des - sensors.joint_pos) \
        + np.array(cfg.kd) * (qd_des - sensors.joint_vel)
    want = np.clip(want, -p.torque_limit_array(), p.torque_limit_array())
    assert np.abs(tau - want).max() <= 1e-12


def test_impact_detect_fires_near_geometric_event(walk_trace):
    """Force-threshold detection agrees with the geometric guard within 5 ms."""
    from exogait.control import impact_detect
    p = default_params()
    cfg = ControllerConfig()
    thr = cfg.resolve_threshold(p)
    for ev in walk_trace.events[1:4]:
        # find the first sample at/after the event where the (newly) swing
        # foot load crosses the threshold as stance load ramps on the other
        k_ev = int(np.searchsorted(walk_trace.t, ev.t))
        fired = None
        for k in range(max(k_ev - 6, 0), min(k_ev + 6, len(walk_trace.t))):
            side = int(walk_trace.domain[k])
            w = ContactWrench(*walk_trace.wrench[k])
            sensors = build_sensors(State(walk_trace.q[k], walk_trace.v[k]),
                                    1 - side, {side: w}, p)
            # from the pre-switch perspective the landing foot is swing
            if impact_detect(sensors, thr):
                fired = walk_trace.t[k]
                break
        assert fired is not None
        assert abs(fired - ev.t) <= 5e-3


def test_metrics_invariant_to_sampling_rate():
    from exogait.analysis import metrics
    p = default_params()
    g = load_default_gait()
    ref = load_default_pelvis()
    vals = []
    for dt in (1e-3, 5e-4):
        ctl = WalkingController(g, ref, ControllerConfig(), p)
        spec = HybridSystemSpec(dt=dt)
        tr = hybrid_run(nominal_state(g, ref, p), ctl, spec, p, max_steps=4,
                        max_time=4.0)
        m = metrics(tr, g, ref, p)
        vals.append(m.pelvis_pitch_rmse)
    assert abs(vals[0] - vals[1]) <= 0.01 * max(abs(vals[1]), 1e-9)


def test_velocity_blowup_flagged_as_diverged():
    p = default_params()
    g = load_default_gait()
    ref = load_default_pelvis()
    ctl = WalkingController(g, ref, ControllerConfig(), p)
    spec = HybridSystemSpec(velocity_bound=1.5)
    tr = hybrid_run(nominal_state(g, ref, p), ctl, spec, p, max_steps=5,
                    max_time=5.0)
    assert tr.termination == "diverged"


def test_golden_gait_report_regression():
    """Frozen constraint report of the shipped gait (regression fixture)."""
    from exogait.gait import validate
    p = default_params()
    rep = validate(load_default_gait(), p,
                   pelvis_ref=load_default_pelvis())
    assert rep.all_ok
    assert rep.min_clearance == pytest.approx(0.07338, abs=2e-4)
    assert rep.friction_margin == pytest.approx(60.35, abs=0.5)
    assert rep.cop_excursion == pytest.approx(0.03453, abs=2e-4)
    assert rep.periodicity_residual == pytest.approx(0.00100, abs=2e-4)
