"""Layered walking controller: joint PD, swing-ankle leveling, stance-ankle
pelvis loop, center-of-pressure torque filter, impact detection, blending.

Pitch sign note: the model's pelvis coordinate is positive tipping forward,
while the pelvis tracking loop operates on nose-up-positive IMU pitch, so
the wiring negates pitch when entering the loop. That makes the raw loop
formula Kp*(des - meas) produce positive ankle torque (center of pressure
toward the toe) when the pelvis leans too far forward, which is the
stabilizing direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _core
from .errors import ExogaitError
from .gait import GaitTrajectory, PelvisRef, evaluate, mirror
from .model import DomainLabel, FootGeometry, RobotParams


@dataclass(frozen=True)
class ControllerConfig:
    """Gains and feature flags for the walking stack."""

    kp: tuple = (6000.0, 6000.0, 200.0, 6000.0, 6000.0, 200.0)
    kd: tuple = (240.0, 240.0, 15.0, 240.0, 240.0, 15.0)
    pelvis_kp: float = 8000.0
    pelvis_kd: float = 1600.0
    swing_ik_on: bool = True
    cop_filter_on: bool = True
    pelvis_loop_on: bool = True
    cop_exact_guard: bool = True
    alpha: float = 0.8
    blend_window: float = 0.02
    force_threshold_factor: float = 0.15   # of body weight
    force_threshold: float | None = None   # N; overrides the factor if set
    fz_epsilon: float = 1.0

    def __post_init__(self):
        if any(g < 0 for g in self.kp) or any(g < 0 for g in self.kd):
            raise ValueError("PD gains must be >= 0")
        if self.pelvis_kp < 0 or self.pelvis_kd < 0:
            raise ValueError("pelvis gains must be >= 0")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must be in (0, 1]")
        if self.blend_window < 0.0:
            raise ValueError("blend_window must be >= 0")

    def resolve_threshold(self, p: RobotParams) -> float:
        if self.force_threshold is not None:
            return self.force_threshold
        return self.force_threshold_factor * p.total_mass * p.gravity


@dataclass
class SensorReadings:
    """Simulated sensor bundle (ground truth plus optional zero-mean noise).

    Per-foot arrays are indexed [right, left]. tangential_force follows the
    load-cell convention: force exerted by the foot on the ground along +x
    (the negative of the reaction on the foot).
    """

    joint_pos: np.ndarray       # (6,)
    joint_vel: np.ndarray       # (6,)
    pelvis_pitch: float         # world pitch, model convention (+ forward)
    pelvis_rate: float
    shank_pitch: np.ndarray     # (2,) world shank pitch per leg
    heel_force: np.ndarray      # (2,) N
    toe_force: np.ndarray       # (2,) N
    tangential_force: np.ndarray  # (2,) N
    stance_side: int            # 0 right, 1 left


def build_sensors(state, stance_side: int, wrench_by_side: dict,
                  p: RobotParams, platform_pitch: float = 0.0,
                  noise=None, rng=None,
                  platform_rate: float = 0.0) -> SensorReadings:
    q, v = state.q, state.v
    jp = q[3:9].copy()
    jv = v[3:9].copy()
    pitch = q[2] + platform_pitch
    rate = v[2] + platform_rate
    shank = np.array([q[2] + q[3] + q[4] + platform_pitch,
                      q[2] + q[6] + q[7] + platform_pitch])
    heel = np.zeros(2)
    toe = np.zeros(2)
    tang = np.zeros(2)
    for side in (0, 1):
        w = wrench_by_side.get(side)
        if w is not None and w.fz > 0.0:
            fh, ft = w.heel_toe_forces(p.foot)
            heel[side], toe[side] = fh, ft
            tang[side] = -w.fx
    if noise is not None and noise.any() and rng is not None:
        jp = jp + rng.normal(0.0, noise.joint_std, 6)
        jv = jv + rng.normal(0.0, noise.rate_std, 6)
        pitch += rng.normal(0.0, noise.pitch_std)
        rate += rng.normal(0.0, noise.rate_std)
        shank = shank + rng.normal(0.0, noise.pitch_std, 2)
        heel = heel + rng.normal(0.0, noise.force_std, 2)
        toe = toe + rng.normal(0.0, noise.force_std, 2)
        tang = tang + rng.normal(0.0, noise.force_std, 2)
    return SensorReadings(jp, jv, float(pitch), float(rate), shank,
                          heel, toe, tang, stance_side)


# ---------------------------------------------------------------------------
# Pure control laws


def joint_pd(q_des, qd_des, q_meas, qd_meas, kp, kd, torque_limits=None):
    """Per-joint PD, clamped to the torque box when limits are given."""
    tau = (np.asarray(kp, float) * (np.asarray(q_des, float) - q_meas)
           + np.asarray(kd, float) * (np.asarray(qd_des, float) - qd_meas))
    if torque_limits is not None:
        lim = np.asarray(torque_limits, float)
        tau = np.clip(tau, -lim, lim)
    return tau


def stance_pelvis_control(pitch_des, rate_des, pitch_meas, rate_meas,
                          kp, kd):
    """Raw stance-ankle torque from pelvis tracking. Positive output pushes
    the center of pressure toward the toe (inputs in nose-up IMU pitch)."""
    return kp * (pitch_des - pitch_meas) + kd * (rate_des - rate_meas)


def cop_filter(tau_raw: float, fx: float, fz: float, foot: FootGeometry,
               alpha: float, fz_epsilon: float = 1.0) -> float:
    """Saturate a stance sagittal-ankle torque so the commanded center of
    pressure stays in a conservative sub-interval of the foot."""
    if fz < fz_epsilon:
        return 0.0
    lo = alpha * (-fz * foot.x_h - fx * foot.z_a)
    hi = alpha * (fz * foot.x_t - fx * foot.z_a)
    return float(min(max(tau_raw, lo), hi))


def cop_filter_3d(tau_sa_raw: float, tau_ha_raw: float, fx: float, fy: float,
                  fz: float, foot: FootGeometry, alpha: float,
                  fz_epsilon: float = 1.0):
    """Both ankle torque bounds (sagittal and frontal Henke channel)."""
    if fz < fz_epsilon:
        return 0.0, 0.0
    sa_lo = alpha * (-fz * foot.x_h - fx * foot.z_a)
    sa_hi = alpha * (fz * foot.x_t - fx * foot.z_a)
    ha_lo = alpha * (-fz * foot.y_i - fy * foot.z_a)
    ha_hi = alpha * (fz * foot.y_c - fy * foot.z_a)
    return (float(min(max(tau_sa_raw, sa_lo), sa_hi)),
            float(min(max(tau_ha_raw, ha_lo), ha_hi)))


def impact_detect(sensors: SensorReadings, threshold: float) -> bool:
    """Touchdown when total normal force on the swing foot reaches the
    threshold (>= convention)."""
    swing = 1 - sensors.stance_side
    total = sensors.heel_force[swing] + sensors.toe_force[swing]
    return bool(total >= threshold)


def blend(tau_outgoing, tau_incoming, t_since_switch: float, window: float):
    """Cosine blend from outgoing-role to incoming-role torques."""
    if window <= 0.0:
        return tau_incoming
    s = 0.5 * (1.0 - math.cos(math.pi * min(t_since_switch / window, 1.0)))
    return (1.0 - s) * np.asarray(tau_outgoing, float) \
        + s * np.asarray(tau_incoming, float)


def swing_ankle_desired(sensors: SensorReadings, swing_side: int):
    """Swing ankle angle/rate that levels the foot (planar chain sum)."""
    o = 3 * swing_side
    q_des = -(sensors.pelvis_pitch + sensors.joint_pos[o] +
              sensors.joint_pos[o + 1])
    qd_des = -(sensors.pelvis_rate + sensors.joint_vel[o] +
               sensors.joint_vel[o + 1])
    return q_des, qd_des


def swing_ankle_control(sensors: SensorReadings, cfg: ControllerConfig,
                        swing_side: int | None = None) -> float:
    """PD torque leveling the swing foot."""
    sw = (1 - sensors.stance_side) if swing_side is None else swing_side
    o = 3 * sw
    ai = o + 2
    q_des, qd_des = swing_ankle_desired(sensors, sw)
    return float(cfg.kp[ai] * (q_des - sensors.joint_pos[ai])
                 + cfg.kd[ai] * (qd_des - sensors.joint_vel[ai]))


def cop_torque_interval_from_probe(probe, tau6, ankle_index: int,
                                   alpha: float, foot: FootGeometry,
                                   fz_epsilon: float):
    """Exact stance-ankle torque interval keeping the realized COPx inside
    alpha*[-x_h, x_t], from two contact-solve probes (the map torque ->
    wrench is affine at a fixed state)."""
    t0 = np.asarray(tau6, float).copy()
    t0[ankle_index] = 0.0
    w0 = probe(t0)
    t1 = t0.copy()
    t1[ankle_index] = 1.0
    w1 = probe(t1)
    if w0.fz < fz_epsilon and w1.fz < fz_epsilon:
        return None
    dmy = w1.my - w0.my
    dfz = w1.fz - w0.fz
    # need: -my(tau) <= alpha*x_t*fz(tau)  and  -my(tau) >= -alpha*x_h*fz(tau)
    # with my(tau) = w0.my + dmy*tau, fz(tau) = w0.fz + dfz*tau
    lo, hi = -np.inf, np.inf
    a1 = -dmy - alpha * foot.x_t * dfz
    b1 = -w0.my - alpha * foot.x_t * w0.fz
    if abs(a1) > 1e-12:
        bound = -b1 / a1
        if a1 > 0:
            hi = min(hi, bound)
        else:
            lo = max(lo, bound)
    a2 = dmy - alpha * foot.x_h * dfz
    b2 = w0.my - alpha * foot.x_h * w0.fz
    if abs(a2) > 1e-12:
        bound = -b2 / a2
        if a2 > 0:
            hi = min(hi, bound)
        else:
            lo = max(lo, bound)
    if not np.isfinite(lo) and not np.isfinite(hi):
        return None
    if lo > hi:
        mid = 0.5 * (lo + hi)
        return (mid, mid)
    return (lo, hi)


@dataclass
class ControlDiagnostics:
    tau_raw_ankle: float = 0.0
    tau_filt_ankle: float = 0.0
    copx: float = 0.0
    phase: float = 0.0
    swing_foot_pitch: float = 0.0
    q_ankle_des_swing: float = 0.0

    def as_dict(self) -> dict:
        return {
            "tau_raw_ankle": self.tau_raw_ankle,
            "tau_filt_ankle": self.tau_filt_ankle,
            "copx": self.copx,
            "phase": self.phase,
            "swing_foot_pitch": self.swing_foot_pitch,
            "q_ankle_des_swing": self.q_ankle_des_swing,
        }


class WalkingController:
    """Time-based gait tracking with the three ankle-stabilization layers.

    The phase clock runs inside each step and re-zeros at every detected
    impact; the gait is mirrored on left-stance steps.
    """

    def __init__(self, gait: GaitTrajectory, pelvis_ref: PelvisRef,
                 cfg: ControllerConfig, p: RobotParams,
                 domain: str = DomainLabel.RIGHT_STANCE, t0: float = 0.0):
        self.gait = gait
        self.pelvis_ref = pelvis_ref
        self.cfg = cfg
        self.params = p
        self.domain = domain
        self.t_step_start = t0
        self.t_switch = -np.inf
        self.prev_domain = domain
        self.prev_phase = 0.0
        self._mirrored = mirror(gait)
        self._torque_limits = p.torque_limit_array()

    def on_domain_switch(self, t: float, new_domain: str):
        self.prev_domain = self.domain
        self.prev_phase = self.phase(t)
        self.domain = new_domain
        self.t_step_start = t
        self.t_switch = t

    def active_gait(self, domain=None) -> GaitTrajectory:
        domain = domain or self.domain
        return (self.gait if domain == DomainLabel.RIGHT_STANCE
                else self._mirrored)

    def phase(self, t: float) -> float:
        return min(max((t - self.t_step_start) / self.gait.step_duration,
                       0.0), 1.0)

    def _role_torques(self, sensors: SensorReadings, domain: str, ph: float,
                      diag: ControlDiagnostics | None = None):
        """Full torque vector under the given domain's role assignment."""
        cfg = self.cfg
        side = DomainLabel.side(domain)
        swing = 1 - side
        st_ankle = 3 * side + 2
        sw_ankle = 3 * swing + 2
        q_des, qd_des, _ = evaluate(self.active_gait(domain), ph)
        tau = joint_pd(q_des, qd_des, sensors.joint_pos, sensors.joint_vel,
                       cfg.kp, cfg.kd)
        if cfg.swing_ik_on:
            q_a_des, qd_a_des = swing_ankle_desired(sensors, swing)
            tau[sw_ankle] = (cfg.kp[sw_ankle]
                             * (q_a_des - sensors.joint_pos[sw_ankle])
                             + cfg.kd[sw_ankle]
                             * (qd_a_des - sensors.joint_vel[sw_ankle]))
            if diag is not None:
                diag.q_ankle_des_swing = q_a_des
        if cfg.pelvis_loop_on:
            des = self.pelvis_ref.value(ph)
            des_rate = self.pelvis_ref.rate(ph)
            # the loop runs on nose-up IMU pitch = -model pitch
            tau[st_ankle] = stance_pelvis_control(
                -des, -des_rate, -sensors.pelvis_pitch, -sensors.pelvis_rate,
                cfg.pelvis_kp, cfg.pelvis_kd)
        if diag is not None:
            diag.tau_raw_ankle = float(tau[st_ankle])
        if cfg.cop_filter_on:
            # this role's stance foot: when it has lifted off, the measured
            # normal force is ~0 and the filter zeroes the torque
            fz = sensors.heel_force[side] + sensors.toe_force[side]
            fx = sensors.tangential_force[side]
            tau[st_ankle] = cop_filter(tau[st_ankle], fx, fz,
                                       self.params.foot, cfg.alpha,
                                       cfg.fz_epsilon)
        return tau

    def compute(self, t: float, sensors: SensorReadings, probe=None):
        cfg = self.cfg
        side = DomainLabel.side(self.domain)
        swing = 1 - side
        st_ankle = 3 * side + 2
        ph = self.phase(t)
        diag = ControlDiagnostics(phase=ph)

        tau = self._role_torques(sensors, self.domain, ph, diag)
        if t - self.t_switch < cfg.blend_window \
                and self.prev_domain != self.domain:
            tau_out = self._role_torques(sensors, self.prev_domain,
                                         self.prev_phase)
            tau = blend(tau_out, tau, t - self.t_switch, cfg.blend_window)

        if cfg.cop_filter_on and cfg.cop_exact_guard and probe is not None:
            iv = cop_torque_interval_from_probe(
                probe, tau, st_ankle, cfg.alpha, self.params.foot,
                cfg.fz_epsilon)
            if iv is not None:
                tau[st_ankle] = min(max(tau[st_ankle], iv[0]), iv[1])
        diag.tau_filt_ankle = float(tau[st_ankle])

        total = sensors.heel_force[side] + sensors.toe_force[side]
        if total > cfg.fz_epsilon:
            diag.copx = (self.params.foot.x_t * sensors.toe_force[side]
                         - self.params.foot.x_h * sensors.heel_force[side]) \
                / total
        o = 3 * swing
        diag.swing_foot_pitch = (sensors.pelvis_pitch + sensors.joint_pos[o]
                                 + sensors.joint_pos[o + 1]
                                 + sensors.joint_pos[o + 2])

        tau = np.clip(tau, -self._torque_limits, self._torque_limits)
        if not np.all(np.isfinite(tau)):
            raise ExogaitError("controller produced non-finite torques")
        return tau, diag.as_dict()
