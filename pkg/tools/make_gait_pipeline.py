#!/usr/bin/env python3
"""Dev pipeline: kinematic seed -> full-controller cycle refit -> pure-PD
orbit closure (two phases) -> shipped gait + pelvis reference artifacts."""

import sys

import numpy as np
from scipy.optimize import least_squares

sys.path.insert(0, "src")
sys.path.insert(0, "tools")

from close_orbit import linear_pelvis_ref, make_residual_fn  # noqa: E402
from design_gait import bezier_fit, fit_gait  # noqa: E402
from exogait.control import ControllerConfig, WalkingController  # noqa: E402
from exogait.dynamics import HybridSystemSpec, hybrid_run  # noqa: E402
from exogait.gait import (GaitTrajectory, PelvisRef, nominal_state,  # noqa: E402
                          save_gait, save_pelvis_ref, validate)
from exogait.model import default_params  # noqa: E402

KPJ = 6000.0
KA, KDA = 200.0, 15.0
RUN_CFG = ControllerConfig(kp=(KPJ, KPJ, KA, KPJ, KPJ, KA),
                           kd=(240.0, 240.0, KDA, 240.0, 240.0, KDA),
                           pelvis_kp=4000.0, pelvis_kd=1000.0)
PD_CFG = ControllerConfig(kp=RUN_CFG.kp, kd=RUN_CFG.kd, swing_ik_on=False,
                          cop_filter_on=False, pelvis_loop_on=False)


def refit_cycle(p, gait, ref, step_index_frac=0.5):
    ctl = WalkingController(gait, ref, RUN_CFG, p)
    initial = nominal_state(gait, ref, p)
    tr = hybrid_run(initial, ctl, HybridSystemSpec(), p, max_steps=30,
                    max_time=25.0)
    if tr.steps_completed < 8:
        raise RuntimeError(f"cycle run too short: {tr.steps_completed}")
    bounds = [0.0] + [e.t for e in tr.events]
    right = [i for i in range(tr.steps_completed)
             if tr.domain[np.searchsorted(tr.t,
                                          0.5 * (bounds[i] + bounds[i + 1]))] == 0]
    i = right[int(len(right) * step_index_frac)]
    t0, t1 = bounds[i], bounds[i + 1]
    dur = t1 - t0
    sel = (tr.t >= t0) & (tr.t <= t1)
    ph = (tr.t[sel] - t0) / dur
    joints = tr.q[sel][:, 3:9]
    jvel = tr.v[sel][:, 3:9]
    pel = tr.q[sel][:, 2]
    pelv = tr.v[sel][:, 2]
    coeffs = np.vstack([
        bezier_fit(ph, joints[:, j], dy0=jvel[0, j] * dur,
                   dy1=jvel[-1, j] * dur) for j in range(6)])
    adv = (tr.events[i].state_post.q[0] - tr.events[i - 1].state_post.q[0]
           if i > 0 else gait.step_length)
    g2 = GaitTrajectory(coeffs=coeffs, step_duration=dur,
                        step_length=float(abs(adv)))
    r2 = PelvisRef(bezier_fit(ph, pel, dy0=pelv[0] * dur,
                              dy1=pelv[-1] * dur), dur)
    return g2, r2, tr.steps_completed


def close(x0, p, step_length, w_clear, w_cop, w_fric, clear_target,
          cop_target, fric_target, max_nfev):
    fn = make_residual_fn(p, PD_CFG, step_length, w_clear=w_clear,
                          w_cop=w_cop, w_fric=w_fric,
                          clear_target=clear_target, cop_target=cop_target,
                          fric_target=fric_target)
    res = least_squares(fn, x0, diff_step=1e-4, max_nfev=max_nfev,
                        xtol=1e-14, ftol=1e-13, gtol=1e-14)
    r = fn(res.x)
    print(f"  closure: |err|={np.linalg.norm(r[:18]):.3e} "
          f"penalties={np.round(r[18:], 5)} T={res.x[36]:.4f}")
    return res.x


def main():
    p = default_params()
    seed = fit_gait(p, step_len=0.15, T=0.75, hip_h=0.79, clearance=0.18,
                    land_phase=0.88, com_back=0.02)
    ref0 = PelvisRef.constant(0.0, seed.step_duration)
    print("refitting realized cycle...")
    g2, r2, steps = refit_cycle(p, seed, ref0)
    print(f"  cycle steps={steps} T={g2.step_duration:.4f} "
          f"adv={g2.step_length:.4f}")

    x = np.concatenate([g2.coeffs.ravel(),
                        [g2.step_duration, r2.value(0.0), r2.rate(0.0)]])
    print("phase 1: pure closure")
    x = close(x, p, g2.step_length, 0.0, 0.0, 0.0, 0.0, 1.0, -1e9, 1500)
    print("phase 2: light polish")
    x = close(x, p, g2.step_length, 2.0, 6.0, 0.01, 0.080, 0.044, 5.0, 2500)
    print("phase 3: re-close")
    x = close(x, p, g2.step_length, 0.5, 1.5, 0.003, 0.078, 0.045, 4.0, 3000)

    gait = GaitTrajectory(coeffs=x[:36].reshape(6, 6), step_duration=x[36],
                          step_length=g2.step_length)
    ref_lin = linear_pelvis_ref(x[37], x[38], x[36])

    # refit the pelvis reference over the closed orbit for the runtime loop
    ctl = WalkingController(gait, ref_lin, PD_CFG, p)
    tr = hybrid_run(nominal_state(gait, ref_lin, p), ctl, HybridSystemSpec(),
                    p, max_steps=1, max_time=2 * gait.step_duration)
    t1 = tr.events[0].t
    sel = tr.t <= t1
    ph = tr.t[sel] / t1
    pel = tr.q[sel][:, 2]
    pelv = tr.v[sel][:, 2]
    ref = PelvisRef(bezier_fit(ph, pel, dy0=pelv[0] * t1, dy1=pelv[-1] * t1),
                    gait.step_duration)

    rep = validate(gait, p, controller_config=PD_CFG, pelvis_ref=ref)
    print("validate:", {k: (round(v, 4) if isinstance(v, float) else v)
                        for k, v in rep.to_dict().items()})

    ctl = WalkingController(gait, ref, RUN_CFG, p)
    tr = hybrid_run(nominal_state(gait, ref, p), ctl, HybridSystemSpec(), p,
                    max_steps=30, max_time=25.0)
    print("full-controller walk:", tr.steps_completed, tr.termination)

    np.save("/tmp/gait_final_x.npy", x)
    save_gait(gait, "src/exogait/data/default_gait.json")
    save_pelvis_ref(ref, "src/exogait/data/default_pelvis.json")
    print("saved artifacts")


if __name__ == "__main__":
    main()
