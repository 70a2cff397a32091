#!/usr/bin/env python3
"""Dev tool: close the pure-PD walking orbit with Gauss-Newton shooting.

Unknowns: 6x6 Bezier coefficients, step duration, initial pelvis pitch and
rate. Residual: Poincare section error after one step (legs relabeled,
stance ankle re-zeroed) plus hinge penalties for clearance / COP box /
friction margin.
"""

import sys

import numpy as np
from scipy.optimize import least_squares

sys.path.insert(0, "src")

from exogait import _core  # noqa: E402
from exogait.control import ControllerConfig, WalkingController  # noqa: E402
from exogait.dynamics import HybridSystemSpec, State, hybrid_run  # noqa: E402
from exogait.gait import (GaitTrajectory, PelvisRef, _section_state,  # noqa: E402
                          nominal_state)
from exogait.model import DomainLabel, default_params  # noqa: E402


def linear_pelvis_ref(pel0, rate0, T):
    c = pel0 + np.arange(6) * (rate0 * T / 5.0)
    return PelvisRef(c, T)


def simulate_step(x, p, vcfg, step_length):
    coeffs = x[:36].reshape(6, 6)
    T = x[36]
    gait = GaitTrajectory(coeffs=coeffs, step_duration=T,
                          step_length=step_length)
    ref = linear_pelvis_ref(x[37], x[38], T)
    initial = nominal_state(gait, ref, p)
    ctl = WalkingController(gait, ref, vcfg, p)
    tr = hybrid_run(initial, ctl, HybridSystemSpec(), p, max_steps=1,
                    max_time=2.0 * T)
    return gait, ref, tr


def make_residual_fn(p, vcfg, step_length, w_clear=30.0, w_cop=40.0,
                     w_fric=0.05, clear_target=0.075, cop_target=0.042,
                     fric_target=10.0, w_pelvis_flat=0.0):
    P = p.packed()

    def resid(x):
        T = x[36]
        if T < 0.3 or T > 1.2:
            return np.full(21, 10.0)
        try:
            gait, ref, tr = simulate_step(x, p, vcfg, step_length)
        except Exception:
            return np.full(21, 10.0)
        if len(tr.events) < 1:
            return np.full(21, 10.0)
        ev = tr.events[0]
        x0 = _section_state(State(tr.q[0], tr.v[0]), 0, p)
        x1 = _section_state(ev.state_post, DomainLabel.side(ev.new_domain), p)
        r = x1.stacked() - x0.stacked()

        t1 = ev.t
        ph = tr.t / t1
        mid = (ph >= 0.3) & (ph <= 0.7)
        min_clear = np.inf
        for q in tr.q[mid]:
            pts, _ = _core.foot_points(q, P)
            min_clear = min(min_clear, pts[1, 0, 1], pts[1, 1, 1])
        fz = tr.wrench[:, 1]
        fx = tr.wrench[:, 0]
        fric = np.min(p.mu * fz - np.abs(fx))
        valid = fz >= 1.0
        cop = np.where(valid, -tr.wrench[:, 2] / np.maximum(fz, 1.0), 0.0)
        cop_exc = np.max(np.abs(cop))
        extra = np.array([
            w_clear * max(0.0, clear_target - min_clear),
            w_cop * max(0.0, cop_exc - cop_target),
            w_fric * max(0.0, fric_target - fric),
        ])
        if w_pelvis_flat > 0.0:
            idx = np.linspace(0, len(tr.t) - 1, 8).astype(int)
            pel = tr.q[idx, 2]
            flat = w_pelvis_flat * (pel - pel.mean())
            extra = np.concatenate([extra, flat])
        return np.concatenate([r, extra])

    return resid


def main():
    p = default_params()
    kpj = 6000
    ka, kda = 200, 15
    vcfg = ControllerConfig(kp=(kpj, kpj, ka, kpj, kpj, ka),
                            kd=(240, 240, kda, 240, 240, kda),
                            swing_ik_on=False, cop_filter_on=False,
                            pelvis_loop_on=False)

    seed = sys.argv[1] if len(sys.argv) > 1 else "/tmp/gait1.npy"
    coeffs = np.load(seed)
    if coeffs.size >= 39:
        x0 = coeffs[:39]
    else:
        refc = np.load("/tmp/ref1.npy")
        T0 = 0.5997320632934571
        ref = PelvisRef(refc, T0)
        x0 = np.concatenate([coeffs.ravel()[:36], [T0, ref.value(0.0),
                                                   ref.rate(0.0)]])

    fn = make_residual_fn(p, vcfg, step_length=0.1523)
    r0 = fn(x0)
    print("initial: |section err| =", np.linalg.norm(r0[:18]),
          "penalties:", np.round(r0[18:], 4))

    res = least_squares(fn, x0, diff_step=1e-4, max_nfev=4000,
                        xtol=1e-14, ftol=1e-12, gtol=1e-14, verbose=2)
    r1 = fn(res.x)
    print("final: |section err| =", np.linalg.norm(r1[:18]),
          "penalties:", np.round(r1[18:], 4), "T:", res.x[36],
          "pel0:", res.x[37], "rate0:", res.x[38])
    np.save("/tmp/gait_closed.npy", res.x)


if __name__ == "__main__":
    main()
