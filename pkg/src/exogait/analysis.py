"""Impact-angle energy analysis, center-of-pressure reconstruction from foot
load cells, and per-run metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import _core
from .errors import NoContact
from .model import FootGeometry, RobotParams


@dataclass(frozen=True)
class ImpactAnalysisParams:
    """Geometry of the COM relative to the impact pivot."""

    comx: float
    comz: float
    g: float = 9.81

    def __post_init__(self):
        if self.comz <= 0.0:
            raise ValueError("comz must be > 0")
        if self.g <= 0.0:
            raise ValueError("g must be > 0")


@dataclass(frozen=True)
class ImpactVelocity:
    v: float
    com_lowered: bool


def impact_velocity(theta: float, params: ImpactAnalysisParams) -> ImpactVelocity:
    """Velocity gained when the body pivots by theta about the impact point.

    Rotates the COM about the pivot and converts the height change to speed;
    a COM that rises yields zero velocity with the lowered-COM flag cleared.
    """
    c, s = math.cos(theta), math.sin(theta)
    dx = (c * params.comx - s * params.comz) - params.comx
    dz = (s * params.comx + c * params.comz) - params.comz
    drop = dx + dz
    if drop >= 0.0:
        return ImpactVelocity(math.sqrt(2.0 * params.g * drop), False)
    return ImpactVelocity(0.0, True)


def velocity_curve(params: ImpactAnalysisParams, theta_min: float,
                   theta_max: float, n: int):
    """Uniform grid of (theta, V). Grid points are computed as
    theta_min + (k/(n-1))*(theta_max-theta_min) so refined grids share
    coarse-grid values bitwise."""
    if n < 2:
        raise ValueError("n must be >= 2")
    rows = []
    span = theta_max - theta_min
    for k in range(n):
        t = k / (n - 1)
        theta = theta_min + t * span
        iv = impact_velocity(theta, params)
        rows.append((theta, iv.v, iv.com_lowered))
    return rows


def velocity_curve_to_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["theta_deg", "v_mps", "com_lowered"])
        for theta, v, lowered in rows:
            w.writerow([repr(math.degrees(theta)), repr(v),
                        int(lowered)])


def cop_from_forces(f_heel: float, f_toe: float, foot: FootGeometry,
                    fz_epsilon: float = 1.0) -> float:
    """Sagittal center of pressure in the sole frame from the two load cells."""
    total = f_heel + f_toe
    if total <= fz_epsilon:
        raise NoContact(f"total normal force {total:.3f} N below threshold")
    return (foot.x_t * f_toe - foot.x_h * f_heel) / total


@dataclass(frozen=True)
class RunMetrics:
    steps_completed: int
    fell: bool
    pelvis_pitch_rmse: float
    pelvis_roll_rmse: float
    min_clearance: float
    cop_excursion: float

    def to_dict(self) -> dict:
        return {
            "steps_completed": self.steps_completed,
            "fell": self.fell,
            "pelvis_pitch_rmse_rad": self.pelvis_pitch_rmse,
            "pelvis_roll_rmse_rad": self.pelvis_roll_rmse,
            "min_clearance_m": self.min_clearance,
            "cop_excursion_m": self.cop_excursion,
        }


def metrics(trace, gait, pelvis_ref, p: RobotParams,
            fz_epsilon: float = 1.0, max_steps: int | None = None) -> RunMetrics:
    """Summary metrics over the completed steps of a hybrid trace.

    Pelvis RMSE is measured against the reference over completed steps only;
    clearance is the swing-foot minimum over the mid-phase window of each
    step.
    """
    events = trace.events
    steps = len(events)
    bounds = [0.0] + [e.t for e in events]
    T = gait.step_duration
    errs = []
    min_clear = math.inf
    nsteps = steps if max_steps is None else min(steps, max_steps)
    P = p.packed()
    for i in range(nsteps):
        t0, t1 = bounds[i], bounds[i + 1]
        sel = (trace.t >= t0) & (trace.t < t1)
        phases = np.minimum((trace.t[sel] - t0) / T, 1.0)
        des = np.array([pelvis_ref.value(ph) for ph in phases])
        errs.append(trace.q[sel, 2] - des)
        mid = (phases >= 0.3) & (phases <= 0.7)
        for q, sd in zip(trace.q[sel][mid], trace.domain[sel][mid]):
            pts, _ = _core.foot_points(q, P)
            sw = 1 - int(sd)
            min_clear = min(min_clear, pts[sw, 0, 1], pts[sw, 1, 1])
    if errs:
        allerr = np.concatenate(errs)
        rmse = float(np.sqrt(np.mean(allerr ** 2)))
    else:
        rmse = 0.0
    fz = trace.wrench[:, 1]
    valid = fz >= fz_epsilon
    cop = np.where(valid, -trace.wrench[:, 2] / np.maximum(fz, fz_epsilon), 0.0)
    cop_exc = float(np.max(np.abs(cop))) if len(cop) else 0.0
    return RunMetrics(
        steps_completed=steps,
        fell=trace.fell,
        pelvis_pitch_rmse=rmse,
        pelvis_roll_rmse=0.0,
        min_clearance=float(min_clear) if nsteps else 0.0,
        cop_excursion=cop_exc)
