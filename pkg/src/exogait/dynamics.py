"""Constrained dynamics, plastic impact map, and the two-domain hybrid executor.

During single support the stance foot is held flat by a 3-row constraint
(ankle x, ankle z, foot pitch) solved as a KKT system with Baumgarte
stabilization. Steps alternate right/left stance; the swing foot touching
the terrain triggers a plastic impact and a domain switch.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _core
from .errors import Diverged, RankDeficientConstraint
from .model import Configuration, DomainLabel, RobotParams


@dataclass
class State:
    """Phase-space point: generalized coordinates and velocities."""

    q: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(9)
        self.v = np.asarray(self.v, dtype=float).reshape(9)

    @property
    def config(self) -> Configuration:
        return Configuration.from_array(self.q)

    def copy(self) -> "State":
        return State(self.q.copy(), self.v.copy())

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.q, self.v])


def relabel_legs(state: State) -> State:
    """Swap the right/left leg coordinate slots (used after an impact when
    comparing states across a step on the Poincare section)."""
    idx = [0, 1, 2, 6, 7, 8, 3, 4, 5]
    return State(state.q[idx], state.v[idx])


@dataclass(frozen=True)
class ContactWrench:
    """Stance-foot reaction: forces plus the pitch moment about the point on
    the sole directly below the ankle. COPx = -my / fz in that sole frame."""

    fx: float
    fz: float
    my: float

    @staticmethod
    def from_kkt(lam, z_a: float) -> "ContactWrench":
        # KKT multiplier is (Fx, Fz, pitch couple at the ankle); shift the
        # moment down to the sole projection point.
        return ContactWrench(float(lam[0]), float(lam[1]),
                             float(lam[2] + lam[0] * z_a))

    def copx(self, fz_epsilon: float = 1.0) -> float:
        if self.fz < fz_epsilon:
            return 0.0
        return -self.my / self.fz

    def heel_toe_forces(self, foot) -> tuple[float, float]:
        """Equivalent vertical forces at heel and toe reproducing (fz, my)."""
        span = foot.x_h + foot.x_t
        copx_times_fz = -self.my
        f_toe = (copx_times_fz + foot.x_h * self.fz) / span
        f_heel = self.fz - f_toe
        return f_heel, f_toe


class FrictionStatus(enum.Enum):
    OK = "ok"
    SLIP_VIOLATION = "slip_violation"
    LIFT_VIOLATION = "lift_violation"


def friction_check(wrench: ContactWrench, mu: float) -> FrictionStatus:
    """Contact admissibility: unilateral normal force and friction cone."""
    if wrench.fz <= 0.0:
        return FrictionStatus.LIFT_VIOLATION
    if abs(wrench.fx) > mu * wrench.fz:
        return FrictionStatus.SLIP_VIOLATION
    return FrictionStatus.OK


@dataclass(frozen=True)
class Terrain:
    """Piecewise-linear ground height vs x."""

    xs: tuple = (-1.0e6, 1.0e6)
    zs: tuple = (0.0, 0.0)

    @staticmethod
    def flat() -> "Terrain":
        return Terrain()

    @staticmethod
    def ramp(angle_rad: float, x0: float = 0.0) -> "Terrain":
        """Uniform slope rising toward +x for positive angle; z=0 at x0."""
        span = 1.0e6
        s = math.tan(angle_rad)
        return Terrain(xs=(x0 - span, x0 + span), zs=(-span * s, span * s))

    def height(self, x: float) -> float:
        return float(np.interp(x, self.xs, self.zs))

    def slope(self, x: float) -> float:
        xs = self.xs
        i = int(np.searchsorted(xs, x, side="right")) - 1
        i = min(max(i, 0), len(xs) - 2)
        return (self.zs[i + 1] - self.zs[i]) / (xs[i + 1] - xs[i])

    def foot_pitch_target(self, x: float) -> float:
        # A sole resting on a ramp ascending at angle g has model pitch -g.
        return -math.atan(self.slope(x))


def mass_matrix(q, p: RobotParams) -> np.ndarray:
    qa = q.as_array() if isinstance(q, Configuration) else np.asarray(q, float)
    M, _ = _core.mass_bias(qa, np.zeros(9), p.packed(), p.gravity_vector())
    return M


def bias_forces(q, v, p: RobotParams, gravity=None) -> np.ndarray:
    """Coriolis/centrifugal plus gravity generalized forces
    (M vdot + bias = tau_gen)."""
    qa = q.as_array() if isinstance(q, Configuration) else np.asarray(q, float)
    g = p.gravity_vector() if gravity is None else np.asarray(gravity, float)
    _, bias = _core.mass_bias(qa, np.asarray(v, float), p.packed(), g)
    return bias


def stance_anchor(q: np.ndarray, side: int, terrain: Terrain,
                  p: RobotParams) -> np.ndarray:
    """Constraint targets (ankle_x, ankle_z, foot_pitch) snapping the foot
    flat onto the terrain at its current contact corner."""
    pts, fpitch = _core.foot_points(np.asarray(q, float), p.packed())
    heel, toe = pts[side, 0], pts[side, 1]
    gh = heel[1] - terrain.height(heel[0])
    gt = toe[1] - terrain.height(toe[0])
    corner_x = heel[0] if gh <= gt else toe[0]
    local = (p.foot.x_h, p.foot.z_a) if gh <= gt else (-p.foot.x_t, p.foot.z_a)
    th = terrain.foot_pitch_target(corner_x)
    c, s = math.cos(th), math.sin(th)
    gx, gz = corner_x, terrain.height(corner_x)
    ax = gx + local[0] * c + local[1] * s
    az = gz - local[0] * s + local[1] * c
    return np.array([ax, az, th])


def constrained_accel(state: State, torques, domain: str, p: RobotParams,
                      anchor=None, baumgarte=(20.0, 20.0), external=None,
                      gravity=None):
    """Stance-constrained forward dynamics.

    Returns (vdot, ContactWrench). torques is the 6-vector of joint torques;
    external is an optional (fx, fz, my) wrench on the floating base.
    """
    side = DomainLabel.side(domain)
    qa, va = state.q, state.v
    if anchor is None:
        anchor = stance_anchor(qa, side, Terrain.flat(), p)
    fext = np.zeros(3) if external is None else np.asarray(external, float)
    g = p.gravity_vector() if gravity is None else np.asarray(gravity, float)
    vdot, lam, ok = _core.constrained_accel(
        qa, va, np.asarray(torques, float), fext, p.packed(), g, side,
        np.asarray(anchor, float), np.asarray(baumgarte, float),
        p.limits_array(), p.stop_stiffness, p.stop_damping)
    if not ok:
        raise RankDeficientConstraint(
            f"stance constraint Jacobian rank-deficient ({domain})")
    return vdot, ContactWrench.from_kkt(lam, p.foot.z_a)


def impact_map(state_pre: State, new_stance: str, p: RobotParams) -> State:
    """Plastic impact onto the new stance foot: positions unchanged,
    velocities projected so the new flat-foot constraint velocity is zero."""
    side = DomainLabel.side(new_stance)
    vplus, lam, ok = _core.impact(state_pre.q, state_pre.v, p.packed(), side)
    if not ok:
        raise RankDeficientConstraint(
            f"impact constraint Jacobian rank-deficient ({new_stance})")
    return State(state_pre.q.copy(), vplus)


@dataclass(frozen=True)
class SensorNoise:
    joint_std: float = 0.0
    rate_std: float = 0.0
    pitch_std: float = 0.0
    force_std: float = 0.0

    def any(self) -> bool:
        return (self.joint_std > 0 or self.rate_std > 0
                or self.pitch_std > 0 or self.force_std > 0)


@dataclass
class HybridSystemSpec:
    """Two-domain walking cycle: alternating right/left single support.

    The oriented cycle, per-domain flat-foot constraint, admissible inputs
    (torque limits come from RobotParams), the touchdown guard, and the
    plastic-impact reset are all encoded here.
    """

    start_domain: str = DomainLabel.RIGHT_STANCE
    terrain: Terrain = field(default_factory=Terrain.flat)
    dt: float = 1.0e-3
    baumgarte: tuple = (20.0, 20.0)
    guard_arm_height: float = 5.0e-3
    impact_time_tol: float = 1.0e-8
    fall_pelvis_height: float = 0.6
    fall_pelvis_pitch: float = math.radians(45.0)
    velocity_bound: float = 100.0
    allow_impacts: bool = True
    gravity_fn: object = None       # optional t -> (gx, gz); platform mode
    platform_pitch_fn: object = None  # optional t -> pitch added to IMU reads
    external_fn: object = None      # optional t -> (fx, fz, my) at the base
    noise: SensorNoise = field(default_factory=SensorNoise)
    noise_seed: int = 0
    raise_on_diverge: bool = False


@dataclass
class ImpactEvent:
    t: float
    state_pre: State
    state_post: State
    new_domain: str


class Termination:
    MAX_TIME = "max_time"
    MAX_STEPS = "max_steps"
    FALL = "fall"
    DIVERGED = "diverged"


@dataclass
class HybridTrace:
    """Uniformly sampled record of a hybrid run plus its impact events."""

    t: np.ndarray
    q: np.ndarray
    v: np.ndarray
    tau: np.ndarray
    wrench: np.ndarray          # columns Fx, Fz, My (sole frame)
    domain: np.ndarray          # side int: 0 right stance, 1 left stance
    diag: dict
    events: list
    termination: str
    dt: float

    @property
    def steps_completed(self) -> int:
        return len(self.events)

    @property
    def fell(self) -> bool:
        return self.termination == Termination.FALL

    def final_state(self) -> State:
        return State(self.q[-1], self.v[-1])

    def to_csv(self, path):
        keys = sorted(self.diag.keys())
        header = (["t"] + [f"q{i}" for i in range(9)]
                  + [f"v{i}" for i in range(9)]
                  + [f"tau{i}" for i in range(6)]
                  + ["Fx", "Fz", "My", "domain"] + keys)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(len(self.t)):
                row = [repr(float(self.t[k]))]
                row += [repr(float(x)) for x in self.q[k]]
                row += [repr(float(x)) for x in self.v[k]]
                row += [repr(float(x)) for x in self.tau[k]]
                row += [repr(float(x)) for x in self.wrench[k]]
                row.append(DomainLabel.RIGHT_STANCE if self.domain[k] == 0
                           else DomainLabel.LEFT_STANCE)
                row += [repr(float(self.diag[key][k])) for key in keys]
                w.writerow(row)

    def events_to_json(self, path):
        payload = {
            "termination": self.termination,
            "events": [
                {"t": e.t,
                 "new_domain": e.new_domain,
                 "state_pre": e.state_pre.stacked().tolist(),
                 "state_post": e.state_post.stacked().tolist()}
                for e in self.events],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1)


class _TraceBuilder:
    def __init__(self, dt):
        self.rows = []
        self.diag = {}
        self.events = []
        self.dt = dt

    def add(self, t, q, v, tau, wrench3, side, diag):
        self.rows.append((t, q.copy(), v.copy(), np.asarray(tau, float).copy(),
                          np.asarray(wrench3, float).copy(), side))
        for k, val in diag.items():
            self.diag.setdefault(k, []).append(float(val))
        n = len(self.rows)
        for k in self.diag:
            if len(self.diag[k]) < n:
                self.diag[k].append(0.0)

    def build(self, termination) -> HybridTrace:
        n = len(self.rows)
        t = np.array([r[0] for r in self.rows])
        q = np.array([r[1] for r in self.rows]).reshape(n, 9)
        v = np.array([r[2] for r in self.rows]).reshape(n, 9)
        tau = np.array([r[3] for r in self.rows]).reshape(n, 6)
        w = np.array([r[4] for r in self.rows]).reshape(n, 3)
        dom = np.array([r[5] for r in self.rows], dtype=np.int8)
        diag = {k: np.array(vals) for k, vals in self.diag.items()}
        return HybridTrace(t, q, v, tau, w, dom, diag, self.events,
                           termination, self.dt)


def _swing_clearance(q, side_stance, terrain, packed):
    pts, _ = _core.foot_points(q, packed)
    sw = 1 - side_stance
    heel, toe = pts[sw, 0], pts[sw, 1]
    return min(heel[1] - terrain.height(heel[0]),
               toe[1] - terrain.height(toe[0]))


def hybrid_run(initial: State, controller, spec: HybridSystemSpec,
               p: RobotParams, max_steps: int = 30,
               max_time: float = 30.0) -> HybridTrace:
    """Fixed-step RK4 hybrid execution with touchdown guard and impact reset.

    The controller is called once per step (zero-order hold). It may be None
    (zero torques) or any object with compute(t, sensors, probe) ->
    (tau6, diag) and on_domain_switch(t, new_domain).
    """
    from .control import build_sensors  # local import avoids a cycle

    P = p.packed()
    limits = p.limits_array()
    dt = spec.dt
    side = DomainLabel.side(spec.start_domain)
    q = initial.q.copy()
    v = initial.v.copy()
    anchor = stance_anchor(q, side, spec.terrain, p)
    tb = _TraceBuilder(dt)
    rng = np.random.default_rng(spec.noise_seed)
    tau_limits = p.torque_limit_array()

    t = 0.0
    armed = False
    steps = 0
    termination = Termination.MAX_TIME
    # load-cell readings lag the loop by one sample
    w_prev = {0: ContactWrench(0.0, 0.0, 0.0), 1: ContactWrench(0.0, 0.0, 0.0)}
    vd0, w0, ok0 = _core.constrained_accel(
        q, v, np.zeros(6), np.zeros(3), P, p.gravity_vector(), side, anchor,
        np.asarray(spec.baumgarte), limits, p.stop_stiffness, p.stop_damping)
    w_prev[side] = ContactWrench.from_kkt(w0, p.foot.z_a)

    nsteps_total = int(round(max_time / dt))
    for k in range(nsteps_total + 1):
        t = k * dt
        gvec = (np.asarray(spec.gravity_fn(t), float) if spec.gravity_fn
                else p.gravity_vector())
        plat = 0.0
        plat_rate = 0.0
        if spec.platform_pitch_fn:
            plat = float(spec.platform_pitch_fn(t))
            hh = 1.0e-4
            plat_rate = (float(spec.platform_pitch_fn(t + hh))
                         - float(spec.platform_pitch_fn(max(t - hh, 0.0)))) \
                / (hh + min(t, hh))
        fext = (np.asarray(spec.external_fn(t), float) if spec.external_fn
                else np.zeros(3))

        sensors = build_sensors(State(q, v), side, w_prev, p, plat,
                                spec.noise, rng, platform_rate=plat_rate)

        if controller is None:
            tau6 = np.zeros(6)
            diag = {}
        else:
            def probe(tau_probe):
                vdp, lamp, okp = _core.constrained_accel(
                    q, v, np.asarray(tau_probe, float), fext, P, gvec,
                    side, anchor, np.asarray(spec.baumgarte), limits,
                    p.stop_stiffness, p.stop_damping)
                return ContactWrench.from_kkt(lamp, p.foot.z_a)
            tau6, diag = controller.compute(t, sensors, probe)
            tau6 = np.clip(np.asarray(tau6, float), -tau_limits, tau_limits)

        vd, lam, ok = _core.constrained_accel(
            q, v, tau6, fext, P, gvec, side, anchor,
            np.asarray(spec.baumgarte), limits, p.stop_stiffness,
            p.stop_damping)
        if not ok:
            raise RankDeficientConstraint("stance constraint lost rank")
        wr = ContactWrench.from_kkt(lam, p.foot.z_a)
        w_prev[side] = wr
        w_prev[1 - side] = ContactWrench(0.0, 0.0, 0.0)
        tb.add(t, q, v, tau6, (wr.fx, wr.fz, wr.my), side, diag)

        # termination checks
        ground_below = spec.terrain.height(q[0])
        if (q[1] - ground_below) < spec.fall_pelvis_height \
                or abs(q[2]) > spec.fall_pelvis_pitch:
            termination = Termination.FALL
            break
        if np.max(np.abs(v)) > spec.velocity_bound or not np.all(np.isfinite(v)):
            termination = Termination.DIVERGED
            if spec.raise_on_diverge:
                raise Diverged(f"velocity bound exceeded at t={t:.4f}")
            break
        if k == nsteps_total:
            termination = Termination.MAX_TIME
            break

        g_now = _swing_clearance(q, side, spec.terrain, P)
        if spec.allow_impacts and not armed and g_now > spec.guard_arm_height:
            armed = True

        qn, vn, ok = _core.rk4_step(q, v, tau6, fext, P, gvec, side, anchor,
                                    np.asarray(spec.baumgarte), limits,
                                    p.stop_stiffness, p.stop_damping, dt)
        if not ok:
            raise RankDeficientConstraint("stance constraint lost rank")

        g_next = _swing_clearance(qn, side, spec.terrain, P)
        if spec.allow_impacts and armed and g_now > 0.0 and g_next <= 0.0:
            # bisect the crossing time within this step
            lo, hi = 0.0, dt
            for _ in range(64):
                if hi - lo <= spec.impact_time_tol:
                    break
                mid = 0.5 * (lo + hi)
                qm, vm, _okm = _core.rk4_step(
                    q, v, tau6, fext, P, gvec, side, anchor,
                    np.asarray(spec.baumgarte), limits, p.stop_stiffness,
                    p.stop_damping, mid)
                if _swing_clearance(qm, side, spec.terrain, P) <= 0.0:
                    hi = mid
                else:
                    lo = mid
            h = hi
            q_pre, v_pre, _ = _core.rk4_step(
                q, v, tau6, fext, P, gvec, side, anchor,
                np.asarray(spec.baumgarte), limits, p.stop_stiffness,
                p.stop_damping, h)
            new_side = 1 - side
            new_domain = (DomainLabel.RIGHT_STANCE if new_side == 0
                          else DomainLabel.LEFT_STANCE)
            state_pre = State(q_pre, v_pre)
            state_post = impact_map(state_pre, new_domain, p)
            tb.events.append(ImpactEvent(t + h, state_pre.copy(),
                                         state_post.copy(), new_domain))
            steps += 1
            side = new_side
            anchor = stance_anchor(state_post.q, side, spec.terrain, p)
            q = state_post.q.copy()
            v = state_post.v.copy()
            armed = False
            if controller is not None and hasattr(controller,
                                                  "on_domain_switch"):
                controller.on_domain_switch(t + h, new_domain)
            if steps >= max_steps:
                termination = Termination.MAX_STEPS
                break
            rem = dt - h
            if rem > 1e-12:
                q, v, ok = _core.rk4_step(q, v, tau6, fext, P, gvec, side,
                                          anchor, np.asarray(spec.baumgarte),
                                          limits, p.stop_stiffness,
                                          p.stop_damping, rem)
                if not ok:
                    raise RankDeficientConstraint(
                        "stance constraint lost rank")
        else:
            q, v = qn, vn

    return tb.build(termination)
