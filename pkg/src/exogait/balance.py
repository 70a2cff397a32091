"""Static one-leg balance: equilibrium finding, feed-forward split,
quadratic CLF synthesis from the closed-loop linearization, validity-ball
estimation, and the CLF-QP ankle controller.

Minimal coordinates during stance are the 6 joint angles; the floating base
follows from the flat-foot constraint. The hold law closes all six joints
with PD around the equilibrium; the CLF-QP input u is the extra stance
sagittal-ankle torque on top of the hold law (m = 1).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import minimize

from . import _core
from .control import cop_filter, cop_torque_interval_from_probe, \
    stance_pelvis_control
from .dynamics import State, constrained_accel
from .errors import DegenerateBall, NoFeasiblePoint, NotHurwitz, SolveFailed
from .model import DomainLabel, RobotParams


def _static_feedforward(q9, side, p: RobotParams):
    """Joint torques and contact wrench holding q9 statically (v = vdot = 0)."""
    P = p.packed()
    M, bias = _core.mass_bias(q9, np.zeros(9), P, p.gravity_vector())
    _m, _cg, origins, pitches, Jorg, svec, *_ = _core._assemble(
        q9, np.zeros(9), P)
    li = 3 + 3 * side
    J = np.vstack([Jorg[li, 0], Jorg[li, 1], svec[li]])
    A = np.zeros((9, 9))
    A[3:9, 0:6] = np.eye(6)
    A[:, 6:9] = J.T
    sol = np.linalg.solve(A, bias)
    return sol[0:6], sol[6:9]


def full_state_from_reduced(qj, vj, side: int, anchor, p: RobotParams) -> State:
    """Assemble the 9-DOF state from joint coordinates under the stance
    constraint (exactly consistent at position and velocity level)."""
    qj = np.asarray(qj, float)
    vj = np.asarray(vj, float)
    q = np.zeros(9)
    q[3:9] = qj
    o = 3 * side
    q[2] = anchor[2] - (qj[o] + qj[o + 1] + qj[o + 2])
    pts, _ = _core.foot_points(q, p.packed())
    q[0] = anchor[0] - pts[side, 2, 0]
    q[1] = anchor[1] - pts[side, 2, 1]
    v = np.zeros(9)
    v[3:9] = vj
    v[2] = -(vj[o] + vj[o + 1] + vj[o + 2])
    _m, _cg, _o, _p, Jorg, *_ = _core._assemble(q, v, p.packed())
    li = 3 + 3 * side
    Jb = np.vstack([Jorg[li, 0], Jorg[li, 1]])
    v[0:2] = -(Jb[:, 2:9] @ v[2:9])
    return State(q, v)


@dataclass(frozen=True)
class Equilibrium:
    """Static one-leg pose with its feed-forward torques."""

    q: np.ndarray               # (9,)
    u_ff: np.ndarray            # (6,)
    stance: str
    com_x: float
    com_z: float
    anchor: np.ndarray          # (3,) stance constraint targets

    def joints(self) -> np.ndarray:
        return self.q[3:9]

    def to_dict(self) -> dict:
        return {
            "q": self.q.tolist(),
            "u_ff": self.u_ff.tolist(),
            "stance": self.stance,
            "com_x": self.com_x,
            "com_z": self.com_z,
            "anchor": self.anchor.tolist(),
        }

    @staticmethod
    def from_dict(d) -> "Equilibrium":
        return Equilibrium(np.asarray(d["q"], float),
                           np.asarray(d["u_ff"], float), d["stance"],
                           float(d["com_x"]), float(d["com_z"]),
                           np.asarray(d["anchor"], float))


def find_equilibrium(p: RobotParams, stance: str = DomainLabel.RIGHT_STANCE,
                     swing_clearance: float = 0.05,
                     com_box_half: float | None = None,
                     penalty_tol: float = 1e-6,
                     maxiter: int = 6000) -> Equilibrium:
    """Minimum-feed-forward-torque pose with the stance foot flat, the swing
    foot clear of the ground, and the COM projecting inside the COP box.

    Penalty method plus Nelder-Mead from a bent-knee initial guess.
    """
    side = DomainLabel.side(stance)
    if com_box_half is None:
        com_box_half = p.foot.cop_box_half_x
    anchor = np.array([0.0, p.foot.z_a, 0.0])
    P = p.packed()
    limits = p.limits_array()

    def penalties(qj, margin):
        st = full_state_from_reduced(qj, np.zeros(6), side, anchor, p)
        pts, _ = _core.foot_points(st.q, P)
        sw = 1 - side
        pen = 0.0
        pen += 1e6 * max(0.0, swing_clearance + margin - pts[sw, 0, 1]) ** 2
        pen += 1e6 * max(0.0, swing_clearance + margin - pts[sw, 1, 1]) ** 2
        com, _J = _core.com_jacobian(st.q, P)
        pen += 1e8 * max(0.0, abs(com[0] - anchor[0])
                         - (com_box_half - margin)) ** 2
        for j in range(6):
            pen += 1e6 * max(0.0, limits[j, 0] + margin - qj[j]) ** 2
            pen += 1e6 * max(0.0, qj[j] - (limits[j, 1] - margin)) ** 2
        return pen

    def cost(qj):
        st = full_state_from_reduced(qj, np.zeros(6), side, anchor, p)
        tau, lam = _static_feedforward(st.q, side, p)
        return float(tau @ tau) + penalties(qj, 3e-3)

    guess = np.zeros(6)
    o = 3 * side
    so = 3 * (1 - side)
    guess[o:o + 2] = (-0.10, 0.25)
    guess[o + 2] = -(guess[o] + guess[o + 1])
    guess[so:so + 2] = (-0.45, 0.95)
    guess[so + 2] = -(guess[so] + guess[so + 1])

    # feasibility phase, then torque minimization
    feas = minimize(lambda qj: penalties(qj, 5e-3), guess,
                    method="Nelder-Mead",
                    options={"maxiter": 2000, "maxfev": 2000,
                             "xatol": 1e-10, "fatol": 1e-14})
    res = minimize(cost, feas.x, method="Nelder-Mead",
                   options={"maxiter": maxiter, "maxfev": maxiter,
                            "xatol": 1e-10, "fatol": 1e-12})
    qj = res.x
    pen = penalties(qj, 0.0)
    if pen > penalty_tol:
        raise NoFeasiblePoint(f"equilibrium penalties {pen:.3e} above tol")
    st = full_state_from_reduced(qj, np.zeros(6), side, anchor, p)
    u_ff, _lam = _static_feedforward(st.q, side, p)
    com, _ = _core.com_jacobian(st.q, P)
    vd, _w = constrained_accel(st, u_ff, stance, p, anchor=anchor)
    if np.max(np.abs(vd)) > 1e-8:
        raise NoFeasiblePoint(
            f"equilibrium accel residual {np.max(np.abs(vd)):.3e}")
    return Equilibrium(q=st.q, u_ff=u_ff, stance=stance,
                       com_x=float(com[0]), com_z=float(com[1]),
                       anchor=anchor)


@dataclass(frozen=True)
class HoldGains:
    """PD hold law closing the joints around the equilibrium."""

    kp: tuple = (900.0, 900.0, 2000.0, 300.0, 300.0, 10.0)
    kd: tuple = (120.0, 120.0, 300.0, 40.0, 40.0, 1.0)

    def arrays(self):
        return np.asarray(self.kp, float), np.asarray(self.kd, float)


def hold_gains_for(stance: str, kp_stance=(900.0, 900.0, 2000.0),
                   kd_stance=(120.0, 120.0, 300.0),
                   kp_swing=(300.0, 300.0, 10.0),
                   kd_swing=(40.0, 40.0, 1.0)) -> HoldGains:
    """Hold gains: stiff stance leg (the ankle sees the whole-body inertia),
    soft swing leg (the free foot is light and barely loaded)."""
    side = DomainLabel.side(stance)
    kp = [0.0] * 6
    kd = [0.0] * 6
    o, so = 3 * side, 3 * (1 - side)
    kp[o:o + 3] = kp_stance
    kd[o:o + 3] = kd_stance
    kp[so:so + 3] = kp_swing
    kd[so:so + 3] = kd_swing
    return HoldGains(tuple(kp), tuple(kd))


def make_closed_loop_dynamics(eq: Equilibrium, p: RobotParams,
                              gains: HoldGains):
    """Reduced closed-loop dynamics handle f(x, u) -> xdot (12-dim).

    x = (joint angles - q*, joint rates); u adds torque on the stance
    sagittal ankle on top of the hold law.
    """
    side = DomainLabel.side(eq.stance)
    qj0 = eq.q[3:9].copy()
    kp, kd = gains.arrays()
    ankle = 3 * side + 2
    tl = p.torque_limit_array()

    def f(x, u):
        x = np.asarray(x, float)
        qj = qj0 + x[:6]
        vj = x[6:]
        st = full_state_from_reduced(qj, vj, side, eq.anchor, p)
        tau = eq.u_ff + kp * (qj0 - qj) - kd * vj
        tau[ankle] += u
        tau = np.clip(tau, -tl, tl)
        vd, _w = constrained_accel(st, tau, eq.stance, p, anchor=eq.anchor)
        return np.concatenate([vj, vd[3:9]])

    return f


def linearize(eq: Equilibrium, p: RobotParams,
              gains: HoldGains | None = None, h: float = 1e-6):
    """Central-difference (A, B) of the closed-loop reduced dynamics about
    the equilibrium; the free input is the stance sagittal-ankle torque."""
    gains = gains or hold_gains_for(eq.stance)
    f = make_closed_loop_dynamics(eq, p, gains)
    n = 12
    A = np.zeros((n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        A[:, k] = (f(e, 0.0) - f(-e, 0.0)) / (2.0 * h)
    B = ((f(np.zeros(n), h) - f(np.zeros(n), -h)) / (2.0 * h)).reshape(n, 1)
    return A, B


def synthesize_clf(A, Q=None, residual_tol: float = 1e-8):
    """P > 0 solving A^T P + P A = -Q (Bartels-Stewart with refinement)."""
    A = np.asarray(A, float)
    n = A.shape[0]
    Q = np.eye(n) if Q is None else np.asarray(Q, float)
    eig = np.linalg.eigvals(A)
    worst = eig[np.argmax(eig.real)]
    if worst.real >= 0.0:
        raise NotHurwitz(f"eigenvalue {worst:.6g} has non-negative real part",
                         eigenvalue=worst)
    P = scipy.linalg.solve_continuous_lyapunov(A.T, -Q)
    P = 0.5 * (P + P.T)
    for _ in range(3):
        R = A.T @ P + P @ A + Q
        if np.linalg.norm(R, "fro") <= residual_tol:
            break
        dP = scipy.linalg.solve_continuous_lyapunov(A.T, -R)
        P = 0.5 * ((P + dP) + (P + dP).T)
    R = A.T @ P + P @ A + Q
    if np.linalg.norm(R, "fro") > residual_tol:
        raise SolveFailed(
            f"Lyapunov residual {np.linalg.norm(R, 'fro'):.3e} above tol")
    if np.min(np.linalg.eigvalsh(P)) <= 0.0:
        raise SolveFailed("Lyapunov solution not positive definite")
    return P


@dataclass
class ClfData:
    """Quadratic CLF data for the closed-loop-reduced pair (A, B)."""

    A: np.ndarray
    B: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    c1: float
    c2: float
    c3: float
    c5: float
    r: float = 0.0

    @staticmethod
    def build(A, B, Q=None, c3: float | None = None) -> "ClfData":
        A = np.asarray(A, float)
        # Default Q is a scaled identity: c3 = 0.1*lmin(Q)/lmax(P) is
        # invariant to the scale while c5 = c3/(2*lmax(P)) grows as Q
        # shrinks, which keeps the validity-ball estimate resolvable.
        Q = 0.01 * np.eye(A.shape[0]) if Q is None else np.asarray(Q, float)
        P = synthesize_clf(A, Q)
        evP = np.linalg.eigvalsh(P)
        c1, c2 = float(evP[0]), float(evP[-1])
        if c3 is None:
            c3 = 0.1 * float(np.linalg.eigvalsh(Q)[0]) / c2
        c5 = c3 / (2.0 * c2)
        return ClfData(A=A, B=np.asarray(B, float).reshape(A.shape[0], -1),
                       P=P, Q=Q, c1=c1, c2=c2, c3=float(c3), c5=float(c5))

    def V(self, x) -> float:
        x = np.asarray(x, float)
        return float(x @ self.P @ x)

    def to_dict(self) -> dict:
        return {k: (getattr(self, k).tolist()
                    if isinstance(getattr(self, k), np.ndarray)
                    else getattr(self, k))
                for k in ("A", "B", "P", "Q", "c1", "c2", "c3", "c5", "r")}

    @staticmethod
    def from_dict(d) -> "ClfData":
        return ClfData(np.asarray(d["A"], float), np.asarray(d["B"], float),
                       np.asarray(d["P"], float), np.asarray(d["Q"], float),
                       float(d["c1"]), float(d["c2"]), float(d["c3"]),
                       float(d["c5"]), float(d["r"]))


def save_balance_data(eq: Equilibrium, clf: ClfData | None, path):
    payload = {"schema_version": 1, "equilibrium": eq.to_dict()}
    if clf is not None:
        payload["clf"] = clf.to_dict()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)


def load_balance_data(path):
    with open(path, "r", encoding="utf-8") as fh:
        d = json.load(fh)
    eq = Equilibrium.from_dict(d["equilibrium"])
    clf = ClfData.from_dict(d["clf"]) if "clf" in d else None
    return eq, clf


def lqr_gain(A, B, q: float = 1.0, r: float = 1.0) -> np.ndarray:
    """Infinite-horizon LQR feedback row vector for the reference input."""
    A = np.asarray(A, float)
    B = np.asarray(B, float).reshape(A.shape[0], -1)
    Qm = q * np.eye(A.shape[0])
    Rm = r * np.eye(B.shape[1])
    S = scipy.linalg.solve_continuous_are(A, B, Qm, Rm)
    return np.linalg.solve(Rm, B.T @ S)


def clf_qp(x, u_ref: float, clf: ClfData, dynamics, torque_bounds,
           rho: float = 1e4, c3: float | None = None):
    """Pointwise min-norm input enforcing the relaxed CLF decrease.

    minimize (u - u_ref)^2 + rho*delta^2
    s.t. L_fV + L_gV u <= -c3 ||x|| + delta, delta >= 0, u in the box.
    Solved in closed form by active-set enumeration. Returns (u, delta).
    """
    x = np.asarray(x, float)
    c3 = clf.c3 if c3 is None else c3
    lo, hi = float(torque_bounds[0]), float(torque_bounds[1])
    f0 = np.asarray(dynamics(x, 0.0), float)
    f1 = np.asarray(dynamics(x, 1.0), float)
    g = f1 - f0
    grad = 2.0 * (clf.P @ x)
    a = float(grad @ f0)
    b = float(grad @ g)
    c = -c3 * float(np.linalg.norm(x))

    candidates = []
    # constraint inactive at delta = 0
    if abs(b) > 0.0:
        if b > 0:
            feas_hi = min(hi, (c - a) / b)
            feas_lo = lo
        else:
            feas_lo = max(lo, (c - a) / b)
            feas_hi = hi
        if feas_lo <= feas_hi:
            u = min(max(u_ref, feas_lo), feas_hi)
            candidates.append((u, 0.0))
    elif a <= c:
        candidates.append((min(max(u_ref, lo), hi), 0.0))
    # constraint active: delta = a + b u - c > 0
    u = (u_ref - rho * b * (a - c)) / (1.0 + rho * b * b)
    u = min(max(u, lo), hi)
    d = a + b * u - c
    if d > 0.0:
        candidates.append((u, d))
    for ub in (lo, hi):
        d = a + b * ub - c
        if d > 0.0:
            candidates.append((ub, d))
    if not candidates:
        candidates.append((min(max(u_ref, lo), hi), 0.0))

    def cost(cu):
        u, d = cu
        return (u - u_ref) ** 2 + rho * d * d

    u, d = min(candidates, key=cost)
    return float(u), float(d)


def estimate_validity_ball(clf: ClfData, dynamics, n_directions: int = 64,
                           u_grid=None, r_cap: float = 0.5,
                           r_floor: float = 1e-6, seed: int = 0,
                           bisect_iters: int = 40, c5: float | None = None):
    """Largest radius where the linearization error stays below c5*||x||
    along sampled directions, for all probe inputs in the torque box.

    The input-map sensitivity ||g(x) - B|| grows linearly in ||x|| with a
    coefficient of order one, so the c5 bound only admits a narrow residual
    torque box; the default probes the hold-law neighbourhood.
    """
    c5 = clf.c5 if c5 is None else c5
    n = clf.A.shape[0]
    if u_grid is None:
        u_grid = np.linspace(-0.005, 0.005, 3)
    u_grid = np.asarray(u_grid, float)
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_directions, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    def ok(x):
        nx = np.linalg.norm(x)
        for u in u_grid:
            fx = np.asarray(dynamics(x, float(u)), float)
            e = fx - clf.A @ x - clf.B[:, 0] * u
            if np.linalg.norm(e) > c5 * nx:
                return False
        return True

    r_min_all = r_cap
    for d in dirs:
        if not ok(d * r_floor):
            raise DegenerateBall(
                f"linearization error bound fails at r = {r_floor:g}")
        lo, hi = r_floor, r_cap
        if ok(d * r_cap):
            r_dir = r_cap
        else:
            for _ in range(bisect_iters):
                mid = 0.5 * (lo + hi)
                if ok(d * mid):
                    lo = mid
                else:
                    hi = mid
            r_dir = lo
        r_min_all = min(r_min_all, r_dir)
    return float(r_min_all)


@dataclass(frozen=True)
class BalanceConfig:
    mode: str = "pd+cop"        # "pd+cop" | "clf-qp"
    pelvis_loop_on: bool = True
    pelvis_kp: float = 4000.0
    pelvis_kd: float = 1000.0
    cop_filter_on: bool = True
    cop_exact_guard: bool = True
    alpha: float = 0.8
    fz_epsilon: float = 1.0
    u_box: float = 60.0         # CLF-QP residual torque box, N*m
    rho: float = 1e4


class BalanceController:
    """Holds the one-leg equilibrium; stance ankle runs either the pelvis
    loop through the COP filter or the CLF-QP residual policy."""

    def __init__(self, eq: Equilibrium, p: RobotParams,
                 cfg: BalanceConfig | None = None,
                 clf: ClfData | None = None,
                 gains: HoldGains | None = None):
        self.eq = eq
        self.p = p
        self.cfg = cfg or BalanceConfig()
        self.clf = clf
        self.gains = gains or hold_gains_for(eq.stance)
        self.side = DomainLabel.side(eq.stance)
        self.ankle = 3 * self.side + 2
        self._dyn = make_closed_loop_dynamics(eq, p, self.gains)
        if self.cfg.mode == "clf-qp":
            if clf is None:
                raise ValueError("clf-qp mode needs ClfData")
            self._K = lqr_gain(clf.A, clf.B)

    def on_domain_switch(self, t, new_domain):
        pass

    def compute(self, t, sensors, probe=None):
        cfg = self.cfg
        eq = self.eq
        kp, kd = self.gains.arrays()
        qj0 = eq.q[3:9]
        tau = eq.u_ff + kp * (qj0 - sensors.joint_pos) \
            - kd * sensors.joint_vel
        diag = {
            "f_heel": float(sensors.heel_force[self.side]),
            "f_toe": float(sensors.toe_force[self.side]),
            "tau_raw_ankle": 0.0, "tau_filt_ankle": 0.0,
            "V": 0.0, "Vdot": 0.0, "x_norm": 0.0, "delta": 0.0,
            "copx": 0.0, "phase": 0.0,
        }
        if cfg.mode == "pd+cop":
            if cfg.pelvis_loop_on:
                tau[self.ankle] = eq.u_ff[self.ankle] + stance_pelvis_control(
                    -eq.q[2], 0.0, -sensors.pelvis_pitch,
                    -sensors.pelvis_rate, cfg.pelvis_kp, cfg.pelvis_kd)
            diag["tau_raw_ankle"] = float(tau[self.ankle])
            if cfg.cop_filter_on:
                fz = sensors.heel_force[self.side] + sensors.toe_force[self.side]
                fx = sensors.tangential_force[self.side]
                tau[self.ankle] = cop_filter(tau[self.ankle], fx, fz,
                                             self.p.foot, cfg.alpha,
                                             cfg.fz_epsilon)
                if cfg.cop_exact_guard and probe is not None:
                    iv = cop_torque_interval_from_probe(
                        probe, tau, self.ankle, cfg.alpha, self.p.foot,
                        cfg.fz_epsilon)
                    if iv is not None:
                        tau[self.ankle] = min(max(tau[self.ankle], iv[0]),
                                              iv[1])
            diag["tau_filt_ankle"] = float(tau[self.ankle])
        else:
            x = np.concatenate([sensors.joint_pos - qj0, sensors.joint_vel])
            u_ref = float(-(self._K @ x)[0])
            u, delta = clf_qp(x, u_ref, self.clf, self._dyn,
                              (-cfg.u_box, cfg.u_box), rho=cfg.rho)
            tau[self.ankle] += u
            xdot = self._dyn(x, u)
            diag["V"] = self.clf.V(x)
            diag["Vdot"] = float(2.0 * (x @ self.clf.P @ xdot))
            diag["x_norm"] = float(np.linalg.norm(x))
            diag["delta"] = delta
            diag["tau_raw_ankle"] = float(tau[self.ankle])
            diag["tau_filt_ankle"] = float(tau[self.ankle])
        total = sensors.heel_force[self.side] + sensors.toe_force[self.side]
        if total > cfg.fz_epsilon:
            diag["copx"] = (self.p.foot.x_t * sensors.toe_force[self.side]
                            - self.p.foot.x_h * sensors.heel_force[self.side]) \
                / total
        tl = self.p.torque_limit_array()
        return np.clip(tau, -tl, tl), diag


def simulate_clf_qp(eq: Equilibrium, clf: ClfData, p: RobotParams, x0,
                    t_end: float = 5.0, dt: float = 1e-3,
                    gains: HoldGains | None = None, u_box: float = 60.0,
                    rho: float = 1e4, stop_norm: float | None = None):
    """Integrate the reduced closed loop under the CLF-QP policy (input held
    over each step, LQR reference). Returns arrays (t, x, u, delta, V, Vdot)."""
    gains = gains or hold_gains_for(eq.stance)
    f = make_closed_loop_dynamics(eq, p, gains)
    K = lqr_gain(clf.A, clf.B)
    x = np.asarray(x0, float).copy()
    n = int(round(t_end / dt))
    rows = {"t": [], "x": [], "u": [], "delta": [], "V": [], "Vdot": []}
    for k in range(n + 1):
        t = k * dt
        u_ref = float(-(K @ x)[0])
        u, delta = clf_qp(x, u_ref, clf, f, (-u_box, u_box), rho=rho)
        xd = f(x, u)
        rows["t"].append(t)
        rows["x"].append(x.copy())
        rows["u"].append(u)
        rows["delta"].append(delta)
        rows["V"].append(clf.V(x))
        rows["Vdot"].append(float(2.0 * (x @ clf.P @ xd)))
        if stop_norm is not None and np.linalg.norm(x) <= stop_norm:
            break
        if k == n:
            break
        k1 = xd
        k2 = f(x + 0.5 * dt * k1, u)
        k3 = f(x + 0.5 * dt * k2, u)
        k4 = f(x + dt * k3, u)
        x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return {k: np.asarray(v) for k, v in rows.items()}
