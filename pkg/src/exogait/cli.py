"""Command-line harness: walk / balance / gait / analyze subcommands.

Exit codes: 0 success, 1 usage or config error, 2 fall, 3 constraint-check
failure. The EXOGAIT_LOG environment variable sets the log level.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, balance as bal, gait as gaitmod
from .ankle_kinematics import ShankAttitude, solve_level_foot
from .control import WalkingController
from .dynamics import State, hybrid_run
from .errors import ExogaitError, ScenarioError
from .model import Configuration, center_of_mass, default_params
from .scenario import Scenario, load_scenario

log = logging.getLogger("exogait")


def _setup_logging():
    level = os.environ.get("EXOGAIT_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)


def run_walk(sc: Scenario, outdir: Path) -> int:
    outdir.mkdir(parents=True, exist_ok=True)
    plant = sc.plant_params()
    initial = gaitmod.nominal_state(sc.gait, sc.pelvis_ref, sc.params,
                                    terrain=sc.terrain)
    ctl = WalkingController(sc.gait, sc.pelvis_ref, sc.controller, sc.params)
    spec = sc.system_spec(allow_impacts=True)
    trace = hybrid_run(initial, ctl, spec, plant, max_steps=sc.max_steps,
                       max_time=sc.max_time)
    m = analysis.metrics(trace, sc.gait, sc.pelvis_ref, plant,
                         fz_epsilon=sc.controller.fz_epsilon)
    trace.to_csv(outdir / "trace.csv")
    trace.events_to_json(outdir / "events.json")
    payload = dict(m.to_dict())
    payload["termination"] = trace.termination
    payload["seed"] = sc.seed
    _write_json(outdir / "metrics.json", payload)
    return 2 if trace.fell else 0


def _balance_pipeline(sc: Scenario, outdir: Path):
    if sc.balance_data and Path(sc.balance_data).exists():
        eq, clf = bal.load_balance_data(sc.balance_data)
        if sc.balance_mode == "clf-qp" and clf is None:
            raise ScenarioError("balance.data lacks CLF data for clf-qp mode")
        return eq, clf
    eq = bal.find_equilibrium(sc.params)
    clf = None
    if sc.balance_mode == "clf-qp":
        gains = bal.hold_gains_for(eq.stance)
        A, B = bal.linearize(eq, sc.params, gains)
        clf = bal.ClfData.build(A, B)
        f = bal.make_closed_loop_dynamics(eq, sc.params, gains)
        clf.r = bal.estimate_validity_ball(clf, f, seed=sc.seed)
    bal.save_balance_data(eq, clf, outdir / "balance.json")
    return eq, clf


def run_balance(sc: Scenario, outdir: Path) -> int:
    outdir.mkdir(parents=True, exist_ok=True)
    eq, clf = _balance_pipeline(sc, outdir)
    cfg = bal.BalanceConfig(mode=sc.balance_mode,
                            pelvis_loop_on=sc.controller.pelvis_loop_on,
                            cop_filter_on=sc.controller.cop_filter_on,
                            cop_exact_guard=sc.controller.cop_exact_guard,
                            alpha=sc.controller.alpha,
                            fz_epsilon=sc.controller.fz_epsilon,
                            u_box=sc.balance_u_box)
    ctl = bal.BalanceController(eq, sc.params, cfg, clf=clf)
    plant = sc.plant_params()
    spec = sc.system_spec(allow_impacts=False)
    initial = State(eq.q.copy(), np.zeros(9))
    trace = hybrid_run(initial, ctl, spec, plant, max_steps=1,
                       max_time=sc.max_time)
    trace.to_csv(outdir / "trace.csv")
    trace.events_to_json(outdir / "events.json")

    heel = trace.diag.get("f_heel", np.zeros(len(trace.t)))
    toe = trace.diag.get("f_toe", np.zeros(len(trace.t)))
    fz = trace.wrench[:, 1]
    valid = fz >= sc.controller.fz_epsilon
    cop = np.where(valid, -trace.wrench[:, 2] / np.maximum(fz, 1e-9), 0.0)
    # pelvis deviation in the world frame (coordinates live in the platform
    # frame when a tilt profile is active)
    plat_fn = sc.disturbance.platform_fn()
    plat = (np.array([plat_fn(t) for t in trace.t]) if plat_fn
            else np.zeros(len(trace.t)))
    world_pitch = trace.q[:, 2] + plat
    payload = {
        "mode": sc.balance_mode,
        "termination": trace.termination,
        "min_normal_force_n": float(np.minimum(heel, toe).min()),
        "max_pelvis_dev_rad": float(np.max(np.abs(world_pitch - eq.q[2]))),
        "max_foot_pitch_dev_rad": float(np.max(np.abs(plat))),
        "cop_min_m": float(cop.min()),
        "cop_max_m": float(cop.max()),
        "seed": sc.seed,
    }
    if sc.balance_mode == "clf-qp":
        payload["V_final"] = float(trace.diag["V"][-1])
        payload["x_norm_final"] = float(trace.diag["x_norm"][-1])
    _write_json(outdir / "balance_metrics.json", payload)
    return 2 if trace.fell else 0


def run_gait_check(sc: Scenario, outdir: Path, mu_override=None) -> int:
    outdir.mkdir(parents=True, exist_ok=True)
    p = sc.params
    if mu_override is not None:
        from dataclasses import replace
        p = replace(p, mu=float(mu_override))
    gait = sc.gait or gaitmod.load_default_gait()
    ref = sc.pelvis_ref or gaitmod.load_default_pelvis()
    report = gaitmod.validate(gait, p, pelvis_ref=ref)
    _write_json(outdir / "gait_report.json", report.to_dict())
    return 0 if report.all_ok else 3


def run_gait_search(sc: Scenario, outdir: Path, budget: int) -> int:
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        result = gaitmod.search(sc.gait or gaitmod.load_default_gait(),
                                sc.params, budget=budget,
                                pelvis_ref=(sc.pelvis_ref
                                            or gaitmod.load_default_pelvis()))
    except ExogaitError as exc:
        log.error("gait search failed: %s", exc)
        return 1
    gaitmod.save_gait(result.gait, outdir / "gait.json")
    payload = dict(result.report.to_dict())
    payload["objective"] = result.objective
    payload["n_evals"] = result.n_evals
    payload["budget_exhausted"] = result.budget_exhausted
    _write_json(outdir / "search_report.json", payload)
    return 0


def run_analyze_impact(args, outdir: Path) -> int:
    outdir.mkdir(parents=True, exist_ok=True)
    p = default_params()
    comx = args.comx
    comz = args.comz
    if comx is None:
        comx = p.foot.x_t + p.foot.cop_box_half_x
    if comz is None:
        q = Configuration(base_z=p.thigh_r.length + p.shank_r.length
                          + p.foot.z_a)
        com, _ = center_of_mass(q, p)
        comz = float(com[1])
    params = analysis.ImpactAnalysisParams(comx=comx, comz=comz, g=p.gravity)
    rows = analysis.velocity_curve(params, math.radians(args.theta_min_deg),
                                   math.radians(args.theta_max_deg), args.n)
    analysis.velocity_curve_to_csv(rows, outdir / "impact_angle.csv")
    return 0


def run_analyze_ik_demo(args, outdir: Path) -> int:
    outdir.mkdir(parents=True, exist_ok=True)
    amp = math.radians(args.amp_deg)
    n = args.n
    rows = []
    guess = (0.0, 0.0)
    for k in range(n):
        t = k / max(n - 1, 1) * args.duration
        roll = amp * math.sin(2.0 * math.pi * t / 4.0)
        pitch = amp * math.sin(2.0 * math.pi * t / 5.0 + 0.7)
        shank = ShankAttitude(roll=roll, pitch=pitch, yaw=0.0)
        q_sa, q_ha = solve_level_foot(shank, initial_guess=guess)
        guess = (q_sa, q_ha)
        from .ankle_kinematics import foot_orientation
        fr, fp = foot_orientation(shank, q_sa, q_ha)
        rows.append((t, roll, pitch, q_sa, q_ha, fr, fp))
    with open(outdir / "ik_demo.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "shank_roll", "shank_pitch", "q_sa", "q_ha",
                    "foot_roll", "foot_pitch"])
        for row in rows:
            w.writerow([repr(float(v)) for v in row])
    return 0


def _scenario_from_args(args, mode=None) -> Scenario:
    if args.config:
        sc = load_scenario(args.config, seed_override=args.seed)
    else:
        sc = Scenario()
        if args.seed is not None:
            sc.seed = args.seed
    if mode is not None:
        sc.mode = mode
    if sc.mode == "walk" and sc.gait is None:
        sc.gait = gaitmod.load_default_gait()
        sc.pelvis_ref = gaitmod.load_default_pelvis()
    return sc


def _run_many(fn, sc_factory, outdir: Path, runs: int) -> int:
    if runs <= 1:
        return fn(sc_factory(0), outdir)
    codes = []
    with concurrent.futures.ProcessPoolExecutor(
            max_workers=min(runs, os.cpu_count() or 1)) as ex:
        futs = {}
        for i in range(runs):
            sub = outdir / f"run_{i:04d}"
            futs[ex.submit(fn, sc_factory(i), sub)] = i
        for fut in concurrent.futures.as_completed(futs):
            codes.append(fut.result())
    return max(codes)


def main(argv=None) -> int:
    _setup_logging()
    ap = argparse.ArgumentParser(prog="exogait",
                                 description="planar exoskeleton walking "
                                             "and balance simulator")
    ap.add_argument("--config", type=str, default=None,
                    help="scenario TOML file")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", type=str, default="out")
    ap.add_argument("--runs", type=int, default=1)
    sub = ap.add_subparsers(dest="cmd", required=True)

    sub.add_parser("walk", help="run the walking scenario")
    sub.add_parser("balance", help="run the static balance scenario")

    gp = sub.add_parser("gait", help="gait tools")
    gsub = gp.add_subparsers(dest="gait_cmd", required=True)
    gc = gsub.add_parser("check")
    gc.add_argument("--mu", type=float, default=None)
    gs = gsub.add_parser("search")
    gs.add_argument("--budget", type=int, default=500)

    apz = sub.add_parser("analyze", help="analysis tools")
    asub = apz.add_subparsers(dest="analyze_cmd", required=True)
    ai = asub.add_parser("impact-angle")
    ai.add_argument("--comx", type=float, default=None)
    ai.add_argument("--comz", type=float, default=None)
    ai.add_argument("--theta-min-deg", type=float, default=0.0)
    ai.add_argument("--theta-max-deg", type=float, default=6.0)
    ai.add_argument("--n", type=int, default=61)
    ik = asub.add_parser("ik-demo")
    ik.add_argument("--amp-deg", type=float, default=10.0)
    ik.add_argument("--duration", type=float, default=10.0)
    ik.add_argument("--n", type=int, default=201)

    args = ap.parse_args(argv)
    outdir = Path(args.out)

    try:
        if args.cmd == "walk":
            def factory(i):
                return _scenario_from_args(
                    argparse.Namespace(config=args.config,
                                       seed=(args.seed or 0) + i
                                       if (args.seed is not None or args.runs > 1)
                                       else args.seed), "walk")
            return _run_many(run_walk, factory, outdir, args.runs)
        if args.cmd == "balance":
            def factory(i):
                return _scenario_from_args(
                    argparse.Namespace(config=args.config,
                                       seed=(args.seed or 0) + i
                                       if (args.seed is not None or args.runs > 1)
                                       else args.seed), "balance")
            return _run_many(run_balance, factory, outdir, args.runs)
        if args.cmd == "gait":
            sc = _scenario_from_args(args)
            if args.gait_cmd == "check":
                return run_gait_check(sc, outdir, mu_override=args.mu)
            return run_gait_search(sc, outdir, budget=args.budget)
        if args.cmd == "analyze":
            if args.analyze_cmd == "impact-angle":
                if args.comz is not None and args.comz <= 0:
                    log.error("comz must be > 0")
                    return 1
                return run_analyze_impact(args, outdir)
            return run_analyze_ik_demo(args, outdir)
    except (ScenarioError, ExogaitError, OSError, ValueError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    raise SystemExit(main())
