"""3D ankle orientation chain: shank attitude -> sagittal joint -> Henke
joint -> foot, plus the Newton-Raphson solver that levels the foot.

Attitudes compose as R = Rz(yaw) @ Rx(roll) @ Ry(pitch). With the canonical
axes (sagittal along y, Henke along x) and zero yaw this makes the leveling
solution decouple exactly: q_sa = -pitch, q_ha = -roll.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AttitudeSingular, NoConvergence, SingularJacobian


def rot_axis(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    a = np.asarray(axis, dtype=float)
    c, s = math.cos(angle), math.sin(angle)
    K = np.array([[0.0, -a[2], a[1]],
                  [a[2], 0.0, -a[0]],
                  [-a[1], a[0], 0.0]])
    return np.eye(3) * c + s * K + (1.0 - c) * np.outer(a, a)


@dataclass(frozen=True)
class AnkleChainParams:
    """Joint axes in their parent frames, sagittal joint first."""

    sagittal_axis: tuple = (0.0, 1.0, 0.0)
    henke_axis: tuple = (1.0, 0.0, 0.0)

    def __post_init__(self):
        sa = np.asarray(self.sagittal_axis, dtype=float)
        ha = np.asarray(self.henke_axis, dtype=float)
        if abs(np.linalg.norm(sa) - 1.0) > 1e-12 \
                or abs(np.linalg.norm(ha) - 1.0) > 1e-12:
            raise ValueError("ankle joint axes must be unit vectors")
        if abs(float(sa @ ha)) >= 1.0 - 1e-9:
            raise ValueError("ankle joint axes must not be parallel")


@dataclass(frozen=True)
class ShankAttitude:
    """Shank orientation in the world, stored as roll/pitch/yaw angles."""

    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def rotation(self) -> np.ndarray:
        return rot_axis((0.0, 0.0, 1.0), self.yaw) \
            @ rot_axis((1.0, 0.0, 0.0), self.roll) \
            @ rot_axis((0.0, 1.0, 0.0), self.pitch)


def _extract_roll_pitch(R: np.ndarray) -> tuple[float, float]:
    """Roll/pitch of a frame under the Rz@Rx@Ry composition."""
    s_roll = R[2, 1]
    if 1.0 - abs(s_roll) < 1e-9:
        raise AttitudeSingular("orientation at gimbal lock (|roll| = pi/2)")
    roll = math.asin(s_roll)
    pitch = math.atan2(-R[2, 0], R[2, 2])
    if abs(abs(pitch) - 0.5 * math.pi) < 1e-9:
        raise AttitudeSingular("pitch at +/- pi/2")
    return roll, pitch


def foot_orientation(shank: ShankAttitude, q_sa: float, q_ha: float,
                     chain: AnkleChainParams | None = None):
    """World roll and pitch of the foot for given ankle joint angles."""
    chain = chain or AnkleChainParams()
    R = shank.rotation() \
        @ rot_axis(chain.sagittal_axis, q_sa) \
        @ rot_axis(chain.henke_axis, q_ha)
    return _extract_roll_pitch(R)


def solve_level_foot(shank: ShankAttitude, chain: AnkleChainParams | None = None,
                     initial_guess=(0.0, 0.0), tol: float = 1e-9,
                     max_iter: int = 50, fd_step: float = 1e-7):
    """Ankle angles that zero the foot's world roll and pitch.

    Newton-Raphson with a central-difference 2x2 Jacobian and step halving
    (up to 8 times) whenever the residual grows.
    """
    chain = chain or AnkleChainParams()
    q = np.asarray(initial_guess, dtype=float).copy()

    def F(qv):
        r, p = foot_orientation(shank, qv[0], qv[1], chain)
        return np.array([r, p])

    f = F(q)
    for _ in range(max_iter):
        if np.max(np.abs(f)) <= tol:
            return float(q[0]), float(q[1])
        J = np.zeros((2, 2))
        for k in range(2):
            dq = np.zeros(2)
            dq[k] = fd_step
            J[:, k] = (F(q + dq) - F(q - dq)) / (2.0 * fd_step)
        det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
        if abs(det) < 1e-10:
            raise SingularJacobian(f"|det J| = {abs(det):.3e} in ankle solve")
        step = np.linalg.solve(J, -f)
        scale = 1.0
        for _half in range(8):
            q_new = q + scale * step
            f_new = F(q_new)
            if np.linalg.norm(f_new) < np.linalg.norm(f):
                break
            scale *= 0.5
        q = q + scale * step
        f = F(q)
    if np.max(np.abs(f)) <= tol:
        return float(q[0]), float(q[1])
    raise NoConvergence(
        f"ankle leveling: residual {np.max(np.abs(f)):.3e} after "
        f"{max_iter} iterations")
