#!/usr/bin/env python3
"""Dev tool: construct the kinematic seed gait, polish it, and record the
pelvis reference. Writes src/exogait/data/default_gait.json + default_pelvis.json.
"""

import argparse
import sys
from dataclasses import replace

import numpy as np

sys.path.insert(0, "src")

from exogait import _core  # noqa: E402
from exogait.control import ControllerConfig, WalkingController  # noqa: E402
from exogait.dynamics import HybridSystemSpec, Terrain, hybrid_run  # noqa: E402
from exogait.gait import (GaitTrajectory, PelvisRef, evaluate, nominal_state,  # noqa: E402
                          save_gait, save_pelvis_ref, validate)
from exogait.model import default_params  # noqa: E402


def leg_ik(dx, dz, L1, L2):
    """Joint-space (thigh_pitch, knee_flexion) for a hip->ankle offset.

    Knee placed forward of the hip-ankle line (human-like flexion).
    """
    r = np.hypot(dx, dz)
    r = np.clip(r, abs(L1 - L2) + 1e-6, L1 + L2 - 1e-9)
    th_leg = np.arctan2(-dx, -dz)
    cos_int = (L1**2 + L2**2 - r**2) / (2 * L1 * L2)
    interior = np.arccos(np.clip(cos_int, -1.0, 1.0))
    q_knee = np.pi - interior
    cos_g1 = (L1**2 + r**2 - L2**2) / (2 * L1 * r)
    g1 = np.arccos(np.clip(cos_g1, -1.0, 1.0))
    th_thigh = th_leg - g1
    return th_thigh, q_knee


def smoothstep5(t):
    t = np.clip(t, 0.0, 1.0)
    return 10 * t**3 - 15 * t**4 + 6 * t**5


def build_seed(p, step_len=0.18, T=0.8, hip_h=0.82, clearance=0.085,
               land_depth=0.02, pelvis_des=0.0, land_phase=0.92,
               com_back=0.0, n=121):
    L1, L2 = p.thigh_r.length, p.shank_r.length
    za = p.foot.z_a
    tau = np.linspace(0.0, 1.0, n)
    # hip follows the inverted-pendulum orbit over the stance foot so the
    # center of pressure stays near the ankle; com_back biases the whole
    # window backward for toe-bound margin
    om = np.sqrt(p.gravity / hip_h)
    x0 = -0.5 * step_len - com_back
    x1 = +0.5 * step_len - com_back
    v0 = om * (x1 - x0 * np.cosh(om * T)) / np.sinh(om * T)
    hip_x = x0 * np.cosh(om * T * tau) + (v0 / om) * np.sinh(om * T * tau)
    hip_z = np.full(n, hip_h)
    # swing completes by land_phase and descends with finite speed so the
    # touchdown phase stays consistent under tracking sag
    tp = np.clip(tau / land_phase, 0.0, 1.0)
    sw_x = -step_len + 2 * step_len * smoothstep5(tp)
    brake = np.where(tp > 0.6, ((tp - 0.6) / 0.4)**2, 0.0)
    sw_z = za + clearance * np.sin(np.pi * tp)**2 - land_depth * brake \
        - 2 * land_depth * np.clip((tau - land_phase) / max(1 - land_phase, 1e-6), 0, 1)

    joints = np.zeros((n, 6))
    for i in range(n):
        # stance = right at (0, za)
        th_t, qk = leg_ik(0.0 - hip_x[i], za - hip_z[i], L1, L2)
        qh = th_t - pelvis_des
        qa = -(pelvis_des + qh + qk)   # flat stance foot
        joints[i, 0:3] = (qh, qk, qa)
        th_t, qk = leg_ik(sw_x[i] - hip_x[i], sw_z[i] - hip_z[i], L1, L2)
        qh = th_t - pelvis_des
        qa = -(pelvis_des + qh + qk)   # level swing foot
        joints[i, 3:6] = (qh, qk, qa)
    return tau, joints


def bezier_fit(tau, y, dy0=None, dy1=None):
    """Degree-5 Bernstein least squares with exact endpoint interpolation.

    dy0/dy1 (phase derivatives) additionally pin the endpoint slopes.
    """
    from math import comb
    B = np.zeros((len(tau), 6))
    for j in range(6):
        B[:, j] = comb(5, j) * tau**j * (1 - tau)**(5 - j)
    c = np.zeros(6)
    c[0], c[5] = y[0], y[-1]
    if dy0 is not None and dy1 is not None:
        c[1] = c[0] + dy0 / 5.0
        c[4] = c[5] - dy1 / 5.0
        resid = y - B[:, [0, 1, 4, 5]] @ c[[0, 1, 4, 5]]
        sol, *_ = np.linalg.lstsq(B[:, 2:4], resid, rcond=None)
        c[2:4] = sol
    else:
        resid = y - B[:, 0] * c[0] - B[:, 5] * c[5]
        sol, *_ = np.linalg.lstsq(B[:, 1:5], resid, rcond=None)
        c[1:5] = sol
    return c


def fit_gait(p, **kw):
    tau, joints = build_seed(p, **kw)
    coeffs = np.vstack([bezier_fit(tau, joints[:, j]) for j in range(6)])
    return GaitTrajectory(coeffs=coeffs, step_duration=kw.get("T", 0.8),
                          step_length=kw.get("step_len", 0.18))


def trial(gait, pelvis_ref, p, cfg, steps=12, terrain=None, label=""):
    initial = nominal_state(gait, pelvis_ref, p)
    ctl = WalkingController(gait, pelvis_ref, cfg, p)
    spec = HybridSystemSpec(terrain=terrain or Terrain.flat())
    tr = hybrid_run(initial, ctl, spec, p, max_steps=steps,
                    max_time=(steps + 1.5) * gait.step_duration)
    print(f"[{label}] steps={tr.steps_completed} term={tr.termination} "
          f"t_end={tr.t[-1]:.2f} pel_range=({tr.q[:,2].min():+.3f},"
          f"{tr.q[:,2].max():+.3f})")
    return tr


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=12)
    ap.add_argument("--save", action="store_true")
    ap.add_argument("--step-len", type=float, default=0.18)
    ap.add_argument("--T", type=float, default=0.8)
    ap.add_argument("--hip-h", type=float, default=0.82)
    ap.add_argument("--clearance", type=float, default=0.085)
    args = ap.parse_args()

    p = default_params()
    gait = fit_gait(p, step_len=args.step_len, T=args.T, hip_h=args.hip_h,
                    clearance=args.clearance)
    ref = PelvisRef.constant(0.0, gait.step_duration)
    cfg = ControllerConfig()

    trial(gait, ref, p, cfg, steps=args.steps, label="full flat")
    cfg_off = replace(cfg, swing_ik_on=False, cop_filter_on=False,
                      pelvis_loop_on=False)
    trial(gait, ref, p, cfg_off, steps=args.steps, label="off  flat")

    rep = validate(gait, p)
    print("validate:", rep.to_dict())

    if args.save:
        save_gait(gait, "src/exogait/data/default_gait.json")
        save_pelvis_ref(ref, "src/exogait/data/default_pelvis.json")
        print("saved")


if __name__ == "__main__":
    main()
