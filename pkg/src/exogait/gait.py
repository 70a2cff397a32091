"""Periodic nominal gaits: Bezier joint trajectories, constraint validation,
and a single-shooting Nelder-Mead polish.

A gait file describes one step with the right leg as stance; the left-stance
step is its mirror. Joint order matches the actuated coordinates:
hip_r, knee_r, ankle_r, hip_l, knee_l, ankle_l.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np
from scipy.optimize import minimize

from .errors import ParseError, PhaseOutOfRange, SchemaVersionMismatch
from .model import JOINT_NAMES, DomainLabel, RobotParams

SCHEMA_VERSION = 1
DEGREE = 5


@dataclass(frozen=True)
class GaitTrajectory:
    """Degree-5 Bezier coefficients per actuated joint over phase in [0, 1]."""

    coeffs: np.ndarray          # (6, 6)
    step_duration: float        # s
    step_length: float          # m
    joint_names: tuple = JOINT_NAMES

    def __post_init__(self):
        object.__setattr__(self, "coeffs",
                           np.asarray(self.coeffs, dtype=float).reshape(6, 6))
        if self.step_duration <= 0.0:
            raise ValueError("step_duration must be > 0")


def _decasteljau(ctrl: np.ndarray, tau: float) -> np.ndarray:
    pts = ctrl.copy()
    n = pts.shape[-1]
    for r in range(1, n):
        pts = (1.0 - tau) * pts[..., : n - r] + tau * pts[..., 1: n - r + 1]
    return pts[..., 0]


def evaluate(gait: GaitTrajectory, tau: float):
    """Joint positions, velocities and accelerations at phase tau.

    Velocities/accelerations are time-scaled by the step duration.
    """
    if tau < -1e-12 or tau > 1.0 + 1e-12:
        raise PhaseOutOfRange(f"phase {tau} outside [0, 1]")
    tau = min(max(tau, 0.0), 1.0)
    c = gait.coeffs
    d1 = DEGREE * np.diff(c, axis=1)
    d2 = (DEGREE - 1) * np.diff(d1, axis=1)
    pos = _decasteljau(c, tau)
    vel = _decasteljau(d1, tau) / gait.step_duration
    acc = _decasteljau(d2, tau) / gait.step_duration ** 2
    return pos, vel, acc


def mirror(gait: GaitTrajectory) -> GaitTrajectory:
    """The same step executed by the opposite stance leg."""
    c = gait.coeffs
    swapped = np.vstack([c[3:6], c[0:3]])
    return replace(gait, coeffs=swapped)


def save_gait(gait: GaitTrajectory, path):
    payload = {
        "schema_version": SCHEMA_VERSION,
        "joint_names": list(gait.joint_names),
        "bezier": [[float(x) for x in row] for row in gait.coeffs],
        "step_duration_s": float(gait.step_duration),
        "step_length_m": float(gait.step_length),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)


def _load_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def load_gait(path) -> GaitTrajectory:
    raw = _load_json(path)
    for fieldname in ("schema_version", "joint_names", "bezier",
                      "step_duration_s", "step_length_m"):
        if fieldname not in raw:
            raise ParseError(f"{path}: missing field '{fieldname}'")
    if raw["schema_version"] != SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"{path}: schema_version {raw['schema_version']} != {SCHEMA_VERSION}")
    bez = np.asarray(raw["bezier"], dtype=float)
    if bez.shape != (6, 6):
        raise ParseError(f"{path}: bezier must be 6x6, got {bez.shape}")
    return GaitTrajectory(coeffs=bez,
                          step_duration=float(raw["step_duration_s"]),
                          step_length=float(raw["step_length_m"]),
                          joint_names=tuple(raw["joint_names"]))


@dataclass(frozen=True)
class PelvisRef:
    """Desired pelvis pitch over the step phase (recorded alongside a gait).

    init_pitch / init_rate pin the nominal initial pelvis state; they default
    to the reference curve's own endpoint so a bare curve stays consistent.
    """

    coeffs: np.ndarray          # (6,)
    step_duration: float
    init_pitch: float | None = None
    init_rate: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "coeffs",
                           np.asarray(self.coeffs, dtype=float).reshape(6))

    def value(self, tau: float) -> float:
        tau = min(max(tau, 0.0), 1.0)
        return float(_decasteljau(self.coeffs[None, :], tau)[0])

    def rate(self, tau: float) -> float:
        tau = min(max(tau, 0.0), 1.0)
        d1 = DEGREE * np.diff(self.coeffs[None, :], axis=1)
        return float(_decasteljau(d1, tau)[0]) / self.step_duration

    def initial_pitch(self) -> float:
        return self.value(0.0) if self.init_pitch is None else self.init_pitch

    def initial_rate(self) -> float:
        return self.rate(0.0) if self.init_rate is None else self.init_rate

    @staticmethod
    def constant(value: float, step_duration: float) -> "PelvisRef":
        return PelvisRef(np.full(6, float(value)), step_duration)


def save_pelvis_ref(ref: PelvisRef, path):
    payload = {
        "schema_version": SCHEMA_VERSION,
        "bezier": [float(x) for x in ref.coeffs],
        "step_duration_s": float(ref.step_duration),
    }
    if ref.init_pitch is not None:
        payload["init_pitch_rad"] = float(ref.init_pitch)
    if ref.init_rate is not None:
        payload["init_rate_rad_s"] = float(ref.init_rate)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)


def load_pelvis_ref(path) -> PelvisRef:
    raw = _load_json(path)
    for fieldname in ("schema_version", "bezier", "step_duration_s"):
        if fieldname not in raw:
            raise ParseError(f"{path}: missing field '{fieldname}'")
    if raw["schema_version"] != SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"{path}: schema_version {raw['schema_version']} != {SCHEMA_VERSION}")
    ip = raw.get("init_pitch_rad")
    ir = raw.get("init_rate_rad_s")
    return PelvisRef(np.asarray(raw["bezier"], float),
                     float(raw["step_duration_s"]),
                     init_pitch=None if ip is None else float(ip),
                     init_rate=None if ir is None else float(ir))


def default_gait_path():
    return resources.files("exogait.data") / "default_gait.json"


def default_pelvis_path():
    return resources.files("exogait.data") / "default_pelvis.json"


def load_default_gait() -> GaitTrajectory:
    return load_gait(default_gait_path())


def load_default_pelvis() -> PelvisRef:
    return load_pelvis_ref(default_pelvis_path())


# ---------------------------------------------------------------------------
# Nominal initial state and constraint validation


def nominal_state(gait: GaitTrajectory, pelvis_ref: PelvisRef,
                  p: RobotParams, terrain=None,
                  domain: str = DomainLabel.RIGHT_STANCE):
    """Initial state at phase 0 with the stance ankle placed on the terrain.

    Velocities are made exactly consistent with the stance constraint via the
    plastic projection.
    """
    from . import _core
    from .dynamics import State, Terrain, impact_map, stance_anchor

    terrain = terrain or Terrain.flat()
    side = DomainLabel.side(domain)
    pos, vel, _ = evaluate(gait, 0.0)
    q = np.zeros(9)
    q[2] = pelvis_ref.initial_pitch()
    q[3:9] = pos
    pts, _fp = _core.foot_points(q, p.packed())
    ankle = pts[side, 2]
    # place the stance ankle z_a above the ground at x = 0
    q[0] -= ankle[0]
    q[1] += terrain.height(0.0) + p.foot.z_a - ankle[1]
    v = np.zeros(9)
    v[2] = pelvis_ref.initial_rate()
    v[3:9] = vel
    # base velocity from the position-level constraint rows
    _m, _cg, _org, _pit, Jorg, _sv, _coms, _Jl, _g1, _g2 = _core._assemble(
        q, v, p.packed())
    li = 3 + 3 * side
    Jb = np.vstack([Jorg[li, 0], Jorg[li, 1]])
    rhs = -(Jb[:, 2:9] @ v[2:9])
    v[0:2] = rhs
    st = impact_map(State(q, v), domain, p)
    return st


@dataclass(frozen=True)
class GaitConstraintReport:
    min_clearance: float
    friction_margin: float
    cop_excursion: float
    periodicity_residual: float
    clearance_ok: bool
    friction_ok: bool
    cop_ok: bool
    periodicity_ok: bool
    completed: bool
    steps: int

    @property
    def all_ok(self) -> bool:
        return (self.clearance_ok and self.friction_ok and self.cop_ok
                and self.periodicity_ok and self.completed)

    def to_dict(self) -> dict:
        return {
            "min_clearance_m": self.min_clearance,
            "friction_margin_n": self.friction_margin,
            "cop_excursion_m": self.cop_excursion,
            "periodicity_residual": self.periodicity_residual,
            "clearance_ok": self.clearance_ok,
            "friction_ok": self.friction_ok,
            "cop_ok": self.cop_ok,
            "periodicity_ok": self.periodicity_ok,
            "completed": self.completed,
            "steps": self.steps,
        }


def _section_state(state, side, p):
    """Poincare section coordinates: legs relabeled to the reference stance,
    stance ankle translated to x = 0."""
    from . import _core
    from .dynamics import State, relabel_legs

    st = relabel_legs(State(state.q.copy(), state.v.copy())) if side == 1 \
        else State(state.q.copy(), state.v.copy())
    pts, _ = _core.foot_points(st.q, p.packed())
    st.q[0] -= pts[0, 2, 0]
    return st


def validate(gait: GaitTrajectory, p: RobotParams, controller_config=None,
             pelvis_ref: PelvisRef | None = None,
             clearance_margin: float = 0.065,
             periodicity_tol: float = 0.05,
             fz_epsilon: float = 1.0) -> GaitConstraintReport:
    """Run two steps under pure joint PD and score the constraint suite."""
    from .control import ControllerConfig, WalkingController
    from .dynamics import HybridSystemSpec, hybrid_run

    cfg = controller_config or ControllerConfig()
    # pure tracking with a crisp role swap: the check scores the gait, not
    # the runtime smoothing
    cfg = replace(cfg, swing_ik_on=False, cop_filter_on=False,
                  pelvis_loop_on=False, blend_window=0.0)
    ref = pelvis_ref or PelvisRef.constant(0.0, gait.step_duration)
    initial = nominal_state(gait, ref, p)
    ctl = WalkingController(gait, ref, cfg, p)
    spec = HybridSystemSpec()
    trace = hybrid_run(initial, ctl, spec, p, max_steps=2,
                       max_time=3.0 * gait.step_duration)

    completed = trace.steps_completed >= 2 and not trace.fell
    if not completed:
        return GaitConstraintReport(0.0, -1.0e9, 1.0e9, 1.0e9,
                                    False, False, False, False, False,
                                    trace.steps_completed)

    # swing clearance over the mid-phase window of each step
    from . import _core
    T = gait.step_duration
    bounds = [0.0] + [e.t for e in trace.events]
    min_clear = np.inf
    for s in range(2):
        t0, t1 = bounds[s], bounds[s + 1]
        sel = (trace.t >= t0) & (trace.t <= t1)
        phases = (trace.t[sel] - t0) / T
        mid = (phases >= 0.3) & (phases <= 0.7)
        qs = trace.q[sel][mid]
        side = trace.domain[sel][mid]
        for q, sd in zip(qs, side):
            pts, _ = _core.foot_points(q, p.packed())
            sw = 1 - int(sd)
            min_clear = min(min_clear,
                            pts[sw, 0, 1], pts[sw, 1, 1])

    fz = trace.wrench[:, 1]
    fx = trace.wrench[:, 0]
    friction_margin = float(np.min(p.mu * fz - np.abs(fx)))
    valid = fz >= fz_epsilon
    cop = np.where(valid, -trace.wrench[:, 2] / np.maximum(fz, fz_epsilon),
                   0.0)
    cop_exc = float(np.max(np.abs(cop)))

    ev = trace.events[0]
    x0 = _section_state(
        type(ev.state_post)(trace.q[0], trace.v[0]),
        DomainLabel.side(DomainLabel.RIGHT_STANCE), p)
    x1 = _section_state(ev.state_post,
                        DomainLabel.side(ev.new_domain), p)
    residual = float(np.linalg.norm(x1.stacked() - x0.stacked()))

    return GaitConstraintReport(
        min_clearance=float(min_clear),
        friction_margin=friction_margin,
        cop_excursion=cop_exc,
        periodicity_residual=residual,
        clearance_ok=bool(min_clear >= clearance_margin),
        friction_ok=bool(friction_margin > 0.0),
        cop_ok=bool(cop_exc <= p.foot.cop_box_half_x),
        periodicity_ok=bool(residual <= periodicity_tol),
        completed=True,
        steps=trace.steps_completed)


@dataclass(frozen=True)
class SearchWeights:
    residual: float = 1.0
    clearance: float = 200.0
    friction: float = 1.0e-3
    cop: float = 500.0
    torque: float = 0.0
    clearance_margin: float = 0.065


@dataclass
class SearchResult:
    gait: GaitTrajectory
    report: GaitConstraintReport
    objective: float
    n_evals: int
    budget_exhausted: bool


def _gait_objective(gait, p, weights, pelvis_ref, cfg):
    """Periodicity^2 plus constraint penalties plus mean squared torque."""
    from .control import ControllerConfig, WalkingController
    from .dynamics import HybridSystemSpec, hybrid_run

    try:
        initial = nominal_state(gait, pelvis_ref, p)
        ctl = WalkingController(gait, pelvis_ref, cfg, p)
        trace = hybrid_run(initial, ctl, HybridSystemSpec(), p, max_steps=2,
                           max_time=3.0 * gait.step_duration)
    except Exception:
        return 1.0e6, None
    if trace.steps_completed < 2 or trace.fell:
        return 1.0e5 + 1.0e4 * (2 - trace.steps_completed), trace

    from . import _core
    T = gait.step_duration
    bounds = [0.0] + [e.t for e in trace.events]
    min_clear = np.inf
    for s in range(2):
        t0, t1 = bounds[s], bounds[s + 1]
        sel = (trace.t >= t0) & (trace.t <= t1)
        phases = (trace.t[sel] - t0) / T
        mid = (phases >= 0.3) & (phases <= 0.7)
        for q, sd in zip(trace.q[sel][mid], trace.domain[sel][mid]):
            pts, _ = _core.foot_points(q, p.packed())
            sw = 1 - int(sd)
            min_clear = min(min_clear, pts[sw, 0, 1], pts[sw, 1, 1])
    fz = trace.wrench[:, 1]
    fx = trace.wrench[:, 0]
    fric_margin = np.min(p.mu * fz - np.abs(fx))
    valid = fz >= 1.0
    cop = np.where(valid, -trace.wrench[:, 2] / np.maximum(fz, 1.0), 0.0)
    cop_exc = np.max(np.abs(cop))

    ev = trace.events[0]
    x0 = _section_state(type(ev.state_post)(trace.q[0], trace.v[0]), 0, p)
    x1 = _section_state(ev.state_post, DomainLabel.side(ev.new_domain), p)
    residual = float(np.linalg.norm(x1.stacked() - x0.stacked()))

    obj = weights.residual * residual ** 2
    obj += weights.clearance * max(0.0, weights.clearance_margin - min_clear) ** 2
    obj += weights.friction * max(0.0, -fric_margin) ** 2
    obj += weights.cop * max(0.0, cop_exc - p.foot.cop_box_half_x) ** 2
    obj += weights.torque * float(np.mean(trace.tau ** 2))
    return obj, trace


def search(seed_gait: GaitTrajectory, p: RobotParams,
           weights: SearchWeights | None = None, budget: int = 500,
           pelvis_ref: PelvisRef | None = None,
           controller_config=None) -> SearchResult:
    """Nelder-Mead over the Bezier coefficients; never worse than the seed."""
    from .control import ControllerConfig

    weights = weights or SearchWeights()
    ref = pelvis_ref or PelvisRef.constant(0.0, seed_gait.step_duration)
    cfg = controller_config or ControllerConfig()
    cfg = replace(cfg, swing_ik_on=False, cop_filter_on=False,
                  pelvis_loop_on=False, blend_window=0.0)

    evals = [0]

    def f(x):
        evals[0] += 1
        g = replace(seed_gait, coeffs=x.reshape(6, 6))
        val, _ = _gait_objective(g, p, weights, ref, cfg)
        return val

    x0 = seed_gait.coeffs.ravel().copy()
    f0 = f(x0)
    best_x, best_f = x0, f0
    if budget > evals[0]:
        res = minimize(f, x0, method="Nelder-Mead",
                       options={"maxfev": budget - evals[0],
                                "xatol": 1e-5, "fatol": 1e-8,
                                "adaptive": True})
        if res.fun < best_f:
            best_x, best_f = res.x, float(res.fun)
    out = replace(seed_gait, coeffs=best_x.reshape(6, 6))
    report = validate(out, p, controller_config=cfg, pelvis_ref=ref,
                      clearance_margin=weights.clearance_margin)
    return SearchResult(gait=out, report=report, objective=best_f,
                        n_evals=evals[0], budget_exhausted=evals[0] >= budget)
