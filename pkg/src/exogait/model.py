"""Planar rigid-body model: parameters, configuration, position kinematics.

The model is a sagittal-plane biped with a 3-DOF floating base at the hip
point and hip/knee/ankle pitch joints per leg (9 DOF total). Positive link
pitch tips the top of the link toward +x (forward); with relative joint
angles accumulated down the chain this makes positive knee angle flexion
and positive ankle torque a center-of-pressure shift toward the toe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import tomlkit

from . import _core
from .errors import ParseError

JOINT_NAMES = ("hip_r", "knee_r", "ankle_r", "hip_l", "knee_l", "ankle_l")
LINK_NAMES = ("torso", "thigh_r", "shank_r", "foot_r",
              "thigh_l", "shank_l", "foot_l")


class DomainLabel:
    """Single-support stance labels; exactly one leg is stance at a time."""

    RIGHT_STANCE = "right_stance"
    LEFT_STANCE = "left_stance"

    @staticmethod
    def other(label: str) -> str:
        if label == DomainLabel.RIGHT_STANCE:
            return DomainLabel.LEFT_STANCE
        if label == DomainLabel.LEFT_STANCE:
            return DomainLabel.RIGHT_STANCE
        raise ValueError(f"unknown domain label {label!r}")

    @staticmethod
    def side(label: str) -> int:
        """0 for right stance, 1 for left stance (core kernel convention)."""
        if label == DomainLabel.RIGHT_STANCE:
            return 0
        if label == DomainLabel.LEFT_STANCE:
            return 1
        raise ValueError(f"unknown domain label {label!r}")


@dataclass(frozen=True)
class Configuration:
    """Generalized coordinates; joint angles are relative (child vs parent)."""

    base_x: float = 0.0
    base_z: float = 0.0
    pelvis_pitch: float = 0.0
    hip_r: float = 0.0
    knee_r: float = 0.0
    ankle_r: float = 0.0
    hip_l: float = 0.0
    knee_l: float = 0.0
    ankle_l: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.base_x, self.base_z, self.pelvis_pitch,
                         self.hip_r, self.knee_r, self.ankle_r,
                         self.hip_l, self.knee_l, self.ankle_l])

    @staticmethod
    def from_array(q) -> "Configuration":
        q = np.asarray(q, dtype=float)
        if q.shape != (9,):
            raise ValueError(f"configuration needs 9 coordinates, got {q.shape}")
        return Configuration(*[float(x) for x in q])

    def joints(self) -> np.ndarray:
        """The 6 actuated joint angles."""
        return self.as_array()[3:9]

    def swap_legs(self) -> "Configuration":
        return Configuration(self.base_x, self.base_z, self.pelvis_pitch,
                             self.hip_l, self.knee_l, self.ankle_l,
                             self.hip_r, self.knee_r, self.ankle_r)


@dataclass(frozen=True)
class FootGeometry:
    """Foot contact geometry; heel x_h behind and toe x_t ahead of the ankle,
    sole z_a below it. y_i / y_c are the frontal half-widths used only by the
    3D center-of-pressure bound."""

    x_h: float = 0.10
    x_t: float = 0.14
    z_a: float = 0.08
    y_i: float = 0.05
    y_c: float = 0.05
    cop_box_half_x: float = 0.048
    cop_box_half_y: float = 0.018

    def __post_init__(self):
        for name in ("x_h", "x_t", "z_a", "y_i", "y_c"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"foot geometry {name} must be > 0")
        if self.cop_box_half_x > min(self.x_h, self.x_t):
            raise ValueError("cop_box_half_x exceeds foot extent")
        if self.cop_box_half_y > min(self.y_i, self.y_c):
            raise ValueError("cop_box_half_y exceeds foot half-width")


@dataclass(frozen=True)
class LinkParams:
    mass: float
    length: float
    com: tuple[float, float]
    inertia: float

    def __post_init__(self):
        if self.mass <= 0.0 or self.inertia <= 0.0 or self.length < 0.0:
            raise ValueError("link mass/inertia must be > 0, length >= 0")


def _default_limits():
    return ((-1.6, 1.6), (0.0, 2.4), (-1.3, 1.3),
            (-1.6, 1.6), (0.0, 2.4), (-1.3, 1.3))


@dataclass(frozen=True)
class RobotParams:
    """Masses, geometry and limits of the exoskeleton-plus-payload system.

    Default link masses fold the 65.8 kg (145 lb) manikin payload into the
    torso/thigh/shank links on top of the device's own structure.
    """

    torso: LinkParams = LinkParams(55.0, 0.0, (0.0, 0.30), 2.5)
    thigh_r: LinkParams = LinkParams(12.0, 0.44, (0.0, -0.20), 0.20)
    shank_r: LinkParams = LinkParams(10.0, 0.42, (0.0, -0.19), 0.15)
    foot_r: LinkParams = LinkParams(3.4, 0.0, (0.02, -0.04), 0.02)
    thigh_l: LinkParams = LinkParams(12.0, 0.44, (0.0, -0.20), 0.20)
    shank_l: LinkParams = LinkParams(10.0, 0.42, (0.0, -0.19), 0.15)
    foot_l: LinkParams = LinkParams(3.4, 0.0, (0.02, -0.04), 0.02)
    total_mass: float = 105.8
    gravity: float = 9.81
    foot: FootGeometry = field(default_factory=FootGeometry)
    mu: float = 0.6
    joint_limits: tuple = field(default_factory=_default_limits)
    torque_limits: tuple = (300.0, 300.0, 180.0, 300.0, 300.0, 180.0)
    stop_stiffness: float = 5.0e3
    stop_damping: float = 20.0

    def __post_init__(self):
        msum = sum(self.link(n).mass for n in LINK_NAMES)
        if abs(msum - self.total_mass) > 1e-9:
            raise ValueError(
                f"total_mass {self.total_mass} != sum of link masses {msum}")
        if self.gravity <= 0.0 or self.mu <= 0.0:
            raise ValueError("gravity and mu must be > 0")

    def link(self, name: str) -> LinkParams:
        return getattr(self, name)

    def links(self):
        return tuple(self.link(n) for n in LINK_NAMES)

    def packed(self) -> np.ndarray:
        """Flat float64 layout consumed by the numba kernels."""
        P = np.zeros(35)
        for i, lk in enumerate(self.links()):
            P[i] = lk.mass
            P[7 + i] = lk.inertia
            P[14 + 2 * i] = lk.com[0]
            P[15 + 2 * i] = lk.com[1]
        P[28] = self.thigh_r.length
        P[29] = self.shank_r.length
        P[30] = self.thigh_l.length
        P[31] = self.shank_l.length
        P[32] = self.foot.x_h
        P[33] = self.foot.x_t
        P[34] = self.foot.z_a
        return P

    def limits_array(self) -> np.ndarray:
        return np.array(self.joint_limits, dtype=float)

    def torque_limit_array(self) -> np.ndarray:
        return np.array(self.torque_limits, dtype=float)

    def gravity_vector(self) -> np.ndarray:
        return np.array([0.0, -self.gravity])

    def scale_masses(self, factor: float) -> "RobotParams":
        """Uniformly scale link masses/inertias (payload mismatch knob)."""
        kw = {}
        for name in LINK_NAMES:
            lk = self.link(name)
            kw[name] = replace(lk, mass=lk.mass * factor,
                               inertia=lk.inertia * factor)
        return replace(self, total_mass=self.total_mass * factor, **kw)


def default_params() -> RobotParams:
    return RobotParams()


@dataclass(frozen=True)
class FrameSet:
    """World pose of every link plus the per-foot sole points."""

    origins: np.ndarray        # (7, 2) link frame origins
    pitches: np.ndarray        # (7,) absolute link pitches
    heel_r: np.ndarray
    toe_r: np.ndarray
    ankle_r: np.ndarray
    heel_l: np.ndarray
    toe_l: np.ndarray
    ankle_l: np.ndarray

    def link_origin(self, name: str) -> np.ndarray:
        return self.origins[LINK_NAMES.index(name)]

    def link_pitch(self, name: str) -> float:
        return float(self.pitches[LINK_NAMES.index(name)])

    def foot_pitch(self, side: int) -> float:
        return float(self.pitches[3 + 3 * side])


def forward_kinematics(q: Configuration, p: RobotParams) -> FrameSet:
    """World position and absolute pitch of every link plus foot sole points."""
    qa = q.as_array() if isinstance(q, Configuration) else np.asarray(q, float)
    P = p.packed()
    origins, pitches = _core.frames(qa, P)
    pts, fpitch = _core.foot_points(qa, P)
    return FrameSet(origins=origins, pitches=pitches,
                    heel_r=pts[0, 0], toe_r=pts[0, 1], ankle_r=pts[0, 2],
                    heel_l=pts[1, 0], toe_l=pts[1, 1], ankle_l=pts[1, 2])


def center_of_mass(q: Configuration, p: RobotParams):
    """Mass-weighted COM (x, z) and its 2x9 Jacobian."""
    qa = q.as_array() if isinstance(q, Configuration) else np.asarray(q, float)
    com, J = _core.com_jacobian(qa, p.packed())
    return com, J


# ---------------------------------------------------------------------------
# TOML serialization


def save_robot_toml(p: RobotParams, path):
    doc = tomlkit.document()
    doc["gravity"] = p.gravity
    doc["total_mass"] = p.total_mass
    doc["mu"] = p.mu
    doc["stop_stiffness"] = p.stop_stiffness
    doc["stop_damping"] = p.stop_damping
    for name in LINK_NAMES:
        lk = p.link(name)
        t = tomlkit.table()
        t["mass"] = lk.mass
        t["length"] = lk.length
        t["com"] = list(lk.com)
        t["inertia"] = lk.inertia
        doc[name] = t
    ft = tomlkit.table()
    for f in ("x_h", "x_t", "z_a", "y_i", "y_c",
              "cop_box_half_x", "cop_box_half_y"):
        ft[f] = getattr(p.foot, f)
    doc["foot"] = ft
    jl = tomlkit.table()
    tl = tomlkit.table()
    for j, name in enumerate(JOINT_NAMES):
        jl[name] = list(p.joint_limits[j])
        tl[name] = p.torque_limits[j]
    doc["joint_limits"] = jl
    doc["torque_limits"] = tl
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(tomlkit.dumps(doc))


def load_robot_toml(path) -> RobotParams:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = tomlkit.parse(fh.read()).unwrap()
    except Exception as exc:
        raise ParseError(f"robot file {path}: {exc}") from exc

    def need(d, key, ctx):
        if key not in d:
            raise ParseError(f"robot file {path}: missing {ctx}{key}")
        return d[key]

    links = {}
    for name in LINK_NAMES:
        sec = need(raw, name, "")
        links[name] = LinkParams(
            mass=float(need(sec, "mass", f"{name}.")),
            length=float(need(sec, "length", f"{name}.")),
            com=tuple(float(x) for x in need(sec, "com", f"{name}.")),
            inertia=float(need(sec, "inertia", f"{name}.")))
    fsec = need(raw, "foot", "")
    foot = FootGeometry(**{k: float(need(fsec, k, "foot."))
                           for k in ("x_h", "x_t", "z_a", "y_i", "y_c",
                                     "cop_box_half_x", "cop_box_half_y")})
    jl = need(raw, "joint_limits", "")
    tl = need(raw, "torque_limits", "")
    joint_limits = tuple(tuple(float(x) for x in need(jl, n, "joint_limits."))
                         for n in JOINT_NAMES)
    torque_limits = tuple(float(need(tl, n, "torque_limits."))
                          for n in JOINT_NAMES)
    return RobotParams(
        total_mass=float(need(raw, "total_mass", "")),
        gravity=float(need(raw, "gravity", "")),
        mu=float(need(raw, "mu", "")),
        stop_stiffness=float(raw.get("stop_stiffness", 5.0e3)),
        stop_damping=float(raw.get("stop_damping", 20.0)),
        foot=foot, joint_limits=joint_limits, torque_limits=torque_limits,
        **links)
