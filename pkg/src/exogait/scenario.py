"""Scenario files: robot/gait/controller configuration, disturbance scripts,
terrain, and run limits for the command-line harness."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import tomlkit

from .control import ControllerConfig
from .dynamics import HybridSystemSpec, SensorNoise, Terrain
from .errors import ScenarioError
from .gait import (GaitTrajectory, PelvisRef, load_default_gait,
                   load_default_pelvis, load_gait, load_pelvis_ref)
from .model import RobotParams, default_params, load_robot_toml


@dataclass(frozen=True)
class Push:
    t_start: float
    t_end: float
    force: float
    direction: tuple


@dataclass(frozen=True)
class DisturbanceScript:
    """Scripted pelvis pushes and/or a platform tilt profile."""

    pushes: tuple = ()
    platform_t: tuple = ()
    platform_angle: tuple = ()

    def __post_init__(self):
        spans = sorted((p.t_start, p.t_end) for p in self.pushes)
        for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
            if b0 < a1:
                raise ScenarioError("disturbance.push intervals overlap")
        for p in self.pushes:
            if p.t_end <= p.t_start:
                raise ScenarioError("disturbance.push: t_end <= t_start")
        if len(self.platform_t) != len(self.platform_angle):
            raise ScenarioError("disturbance.platform: t/angle length mismatch")
        if any(abs(a) > math.radians(15.0) + 1e-12
               for a in self.platform_angle):
            raise ScenarioError("disturbance.platform angles exceed 15 deg")

    def external_fn(self):
        if not self.pushes:
            return None
        pushes = self.pushes

        def fn(t):
            fx = fz = 0.0
            for p in pushes:
                if p.t_start <= t < p.t_end:
                    fx += p.force * p.direction[0]
                    fz += p.force * p.direction[1]
            return (fx, fz, 0.0)
        return fn

    def platform_fn(self):
        if len(self.platform_t) == 0:
            return None
        ts = np.asarray(self.platform_t, float)
        angs = np.asarray(self.platform_angle, float)

        def fn(t):
            return float(np.interp(t, ts, angs))
        return fn

    def has_platform(self) -> bool:
        return len(self.platform_t) > 0


@dataclass
class Scenario:
    """Fully resolved run description."""

    mode: str = "walk"                  # walk | balance
    params: RobotParams = field(default_factory=default_params)
    plant_mass_scale: float = 1.0
    gait: GaitTrajectory | None = None
    pelvis_ref: PelvisRef | None = None
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    terrain: Terrain = field(default_factory=Terrain.flat)
    disturbance: DisturbanceScript = field(default_factory=DisturbanceScript)
    balance_mode: str = "pd+cop"        # pd+cop | clf-qp
    balance_u_box: float = 60.0
    balance_data: str | None = None
    max_steps: int = 25
    max_time: float = 25.0
    dt: float = 1e-3
    seed: int = 0
    noise: SensorNoise = field(default_factory=SensorNoise)

    def plant_params(self) -> RobotParams:
        if self.plant_mass_scale == 1.0:
            return self.params
        return self.params.scale_masses(self.plant_mass_scale)

    def system_spec(self, allow_impacts=True) -> HybridSystemSpec:
        plat = self.disturbance.platform_fn()
        gravity_fn = None
        if plat is not None:
            g = self.params.gravity

            def gravity_fn(t, _plat=plat, _g=g):
                a = _plat(t)
                return (_g * math.sin(a), -_g * math.cos(a))
        return HybridSystemSpec(
            terrain=self.terrain, dt=self.dt,
            external_fn=self.disturbance.external_fn(),
            platform_pitch_fn=plat, gravity_fn=gravity_fn,
            allow_impacts=allow_impacts, noise=self.noise,
            noise_seed=self.seed)


def _get(table, key, ctx, default=None, required=False):
    if key not in table:
        if required:
            raise ScenarioError(f"missing key [{ctx}] {key}")
        return default
    return table[key]


def load_scenario(path, seed_override=None) -> Scenario:
    """Parse a scenario TOML file; errors name the offending key."""
    path = Path(path)
    try:
        raw = tomlkit.parse(path.read_text(encoding="utf-8")).unwrap()
    except Exception as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    base = path.parent

    def resolve(rel):
        q = Path(rel)
        return q if q.is_absolute() else base / q

    sc = raw.get("scenario", {})
    mode = _get(sc, "mode", "scenario", "walk")
    if mode not in ("walk", "balance"):
        raise ScenarioError(f"scenario.mode must be walk|balance, got {mode!r}")

    rob = raw.get("robot", {})
    if "params" in rob:
        params = load_robot_toml(resolve(rob["params"]))
    else:
        params = default_params()
    mass_scale = float(_get(rob, "plant_mass_scale", "robot", 1.0))

    g = raw.get("gait", {})
    gait = None
    pelvis = None
    if "path" in g:
        gait = load_gait(resolve(g["path"]))
    elif mode == "walk":
        gait = load_default_gait()
    if "pelvis" in g:
        pelvis = load_pelvis_ref(resolve(g["pelvis"]))
    elif mode == "walk":
        pelvis = load_default_pelvis()

    ct = raw.get("controller", {})
    ckw = {}
    for k in ("swing_ik_on", "cop_filter_on", "pelvis_loop_on",
              "cop_exact_guard"):
        if k in ct:
            ckw[k] = bool(ct[k])
    for k in ("alpha", "pelvis_kp", "pelvis_kd", "blend_window",
              "force_threshold", "fz_epsilon"):
        if k in ct:
            ckw[k] = float(ct[k])
    for k in ("kp", "kd"):
        if k in ct:
            vals = ct[k]
            if len(vals) != 6:
                raise ScenarioError(f"controller.{k} must have 6 entries")
            ckw[k] = tuple(float(x) for x in vals)
    try:
        controller = ControllerConfig(**ckw)
    except ValueError as exc:
        raise ScenarioError(f"controller: {exc}") from exc

    terr = raw.get("terrain", {})
    if "x" in terr or "z" in terr:
        xs = tuple(float(v) for v in _get(terr, "x", "terrain", required=True))
        zs = tuple(float(v) for v in _get(terr, "z", "terrain", required=True))
        if len(xs) != len(zs) or len(xs) < 2:
            raise ScenarioError("terrain.x/z must be equal length >= 2")
        terrain = Terrain(xs=xs, zs=zs)
    elif "slope_deg" in terr:
        terrain = Terrain.ramp(math.radians(float(terr["slope_deg"])))
    else:
        terrain = Terrain.flat()

    dist = raw.get("disturbance", {})
    pushes = []
    for i, pt in enumerate(dist.get("push", [])):
        ctx = f"disturbance.push[{i}]"
        direction = _get(pt, "direction", ctx, (1.0, 0.0))
        d = np.asarray(direction, float)
        n = np.linalg.norm(d)
        if n <= 0:
            raise ScenarioError(f"{ctx}.direction must be nonzero")
        pushes.append(Push(float(_get(pt, "t_start", ctx, required=True)),
                           float(_get(pt, "t_end", ctx, required=True)),
                           float(_get(pt, "force", ctx, required=True)),
                           tuple(d / n)))
    plat = dist.get("platform", {})
    plat_t = tuple(float(v) for v in plat.get("t", ()))
    plat_a = tuple(math.radians(float(v)) for v in plat.get("angle_deg", ()))
    try:
        script = DisturbanceScript(pushes=tuple(pushes), platform_t=plat_t,
                                   platform_angle=plat_a)
    except ScenarioError:
        raise
    except Exception as exc:
        raise ScenarioError(f"disturbance: {exc}") from exc

    bal = raw.get("balance", {})
    balance_mode = _get(bal, "mode", "balance", "pd+cop")
    if balance_mode not in ("pd+cop", "clf-qp"):
        raise ScenarioError(
            f"balance.mode must be pd+cop|clf-qp, got {balance_mode!r}")

    sn = raw.get("sensors", {})
    noise = SensorNoise(
        joint_std=float(_get(sn, "noise_joint_std", "sensors", 0.0)),
        rate_std=float(_get(sn, "noise_rate_std", "sensors", 0.0)),
        pitch_std=float(_get(sn, "noise_pitch_std", "sensors", 0.0)),
        force_std=float(_get(sn, "noise_force_std", "sensors", 0.0)))

    seed = int(_get(sc, "seed", "scenario", 0))
    if seed_override is not None:
        seed = int(seed_override)

    return Scenario(
        mode=mode, params=params, plant_mass_scale=mass_scale, gait=gait,
        pelvis_ref=pelvis, controller=controller, terrain=terrain,
        disturbance=script, balance_mode=balance_mode,
        balance_u_box=float(_get(bal, "u_box", "balance", 60.0)),
        balance_data=(str(resolve(bal["data"])) if "data" in bal else None),
        max_steps=int(_get(sc, "max_steps", "scenario", 25)),
        max_time=float(_get(sc, "max_time", "scenario", 25.0)),
        dt=float(_get(sc, "dt", "scenario", 1e-3)),
        seed=seed, noise=noise)
