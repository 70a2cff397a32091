"""Numba kernels for the planar 9-DOF biped.

Coordinate vector q (9): [base_x, base_z, pelvis_pitch,
hip_r, knee_r, ankle_r, hip_l, knee_l, ankle_l]; v = dq/dt.

Pitch convention: positive pitch tips the top of a link toward +x
(robot forward). A point (lx, lz) in a link frame at absolute pitch t maps
to the world offset (lx*cos t + lz*sin t, -lx*sin t + lz*cos t). With this
sign choice positive knee angle is flexion (shank swings behind the thigh)
and positive stance-ankle torque moves the center of pressure toward the
toe.

Link order: 0 torso, 1 thigh_r, 2 shank_r, 3 foot_r,
4 thigh_l, 5 shank_l, 6 foot_l. The floating base sits at the hip point
shared by both legs; foot link origins sit at the ankles.

Packed parameter layout (float64, length 35):
  [0:7]   link masses
  [7:14]  link inertias about COM
  [14:28] link COM offsets, (x, z) pairs in link frame
  [28:32] segment lengths: thigh_r, shank_r, thigh_l, shank_l
  [32:35] foot geometry: x_h, x_t, z_a
"""

import numpy as np
from numba import njit

NQ = 9
NLINK = 7


@njit(cache=True)
def _assemble(q, v, P):
    """Chain pass: inertia matrix pieces, Jacobians, velocity products.

    Returns (M, cgam, origins, pitches, Jorg, svec, coms, Jlink, gam_org,
    gam_com) where cgam is the Coriolis part of the bias (gravity excluded;
    add -m_i * J_i^T @ gvec separately), gam_org / gam_com are the
    velocity-product accelerations of link origins / COMs.
    """
    masses = P[0:7]
    inert = P[7:14]

    origins = np.zeros((NLINK, 2))
    pitches = np.zeros(NLINK)
    Jorg = np.zeros((NLINK, 2, NQ))
    svec = np.zeros((NLINK, NQ))
    coms = np.zeros((NLINK, 2))
    Jlink = np.zeros((NLINK, 2, NQ))
    gam_org = np.zeros((NLINK, 2))
    gam_com = np.zeros((NLINK, 2))

    bx = q[0]
    bz = q[1]

    # torso: origin at the hip point, pitch = pelvis pitch
    origins[0, 0] = bx
    origins[0, 1] = bz
    pitches[0] = q[2]
    Jorg[0, 0, 0] = 1.0
    Jorg[0, 1, 1] = 1.0
    svec[0, 2] = 1.0

    for leg in range(2):
        jq = 3 + 3 * leg          # hip coordinate index
        il = 1 + 3 * leg          # thigh link index
        lth = P[28 + 2 * leg]
        lsh = P[29 + 2 * leg]

        th_thigh = q[2] + q[jq]
        th_shank = th_thigh + q[jq + 1]
        th_foot = th_shank + q[jq + 2]
        # thigh link
        pitches[il] = th_thigh
        origins[il, 0] = bx
        origins[il, 1] = bz
        Jorg[il, 0, 0] = 1.0
        Jorg[il, 1, 1] = 1.0
        svec[il, 2] = 1.0
        svec[il, jq] = 1.0

        # shank link: origin at knee = hip + thigh segment
        st = np.sin(th_thigh)
        ct = np.cos(th_thigh)
        wseg_t = np.empty(2)
        wseg_t[0] = -lth * st
        wseg_t[1] = -lth * ct
        thd_t = v[2] + v[jq]
        i2 = il + 1
        pitches[i2] = th_shank
        origins[i2, 0] = bx + wseg_t[0]
        origins[i2, 1] = bz + wseg_t[1]
        Jorg[i2, 0, 0] = 1.0
        Jorg[i2, 1, 1] = 1.0
        svec[i2, 2] = 1.0
        svec[i2, jq] = 1.0
        svec[i2, jq + 1] = 1.0
        # d(segment)/d(theta) = perp(w) = (w_z, -w_x)
        for k in range(2):
            kk = 2 if k == 0 else jq
            Jorg[i2, 0, kk] += wseg_t[1]
            Jorg[i2, 1, kk] += -wseg_t[0]
        gam_org[i2, 0] = -thd_t * thd_t * wseg_t[0]
        gam_org[i2, 1] = -thd_t * thd_t * wseg_t[1]

        # foot link: origin at ankle = knee + shank segment
        ss = np.sin(th_shank)
        cs = np.cos(th_shank)
        wseg_s = np.empty(2)
        wseg_s[0] = -lsh * ss
        wseg_s[1] = -lsh * cs
        thd_s = thd_t + v[jq + 1]
        i3 = il + 2
        pitches[i3] = th_foot
        origins[i3, 0] = origins[i2, 0] + wseg_s[0]
        origins[i3, 1] = origins[i2, 1] + wseg_s[1]
        for a in range(2):
            for b in range(NQ):
                Jorg[i3, a, b] = Jorg[i2, a, b]
        svec[i3, 2] = 1.0
        svec[i3, jq] = 1.0
        svec[i3, jq + 1] = 1.0
        svec[i3, jq + 2] = 1.0
        for kk in (2, jq, jq + 1):
            Jorg[i3, 0, kk] += wseg_s[1]
            Jorg[i3, 1, kk] += -wseg_s[0]
        gam_org[i3, 0] = gam_org[i2, 0] - thd_s * thd_s * wseg_s[0]
        gam_org[i3, 1] = gam_org[i2, 1] - thd_s * thd_s * wseg_s[1]

    # COM of each link = origin + R(pitch) @ com_local; Jacobian and
    # velocity product pick up one more rotating segment.
    for i in range(NLINK):
        cx = P[14 + 2 * i]
        cz = P[15 + 2 * i]
        t = pitches[i]
        s = np.sin(t)
        c = np.cos(t)
        wx = cx * c + cz * s
        wz = -cx * s + cz * c
        coms[i, 0] = origins[i, 0] + wx
        coms[i, 1] = origins[i, 1] + wz
        thd = 0.0
        for k in range(NQ):
            thd += svec[i, k] * v[k]
        for a in range(2):
            for b in range(NQ):
                Jlink[i, a, b] = Jorg[i, a, b]
        for b in range(NQ):
            if svec[i, b] != 0.0:
                Jlink[i, 0, b] += wz
                Jlink[i, 1, b] += -wx
        gam_com[i, 0] = gam_org[i, 0] - thd * thd * wx
        gam_com[i, 1] = gam_org[i, 1] - thd * thd * wz

    M = np.zeros((NQ, NQ))
    cgam = np.zeros(NQ)
    for i in range(NLINK):
        mi = masses[i]
        Ii = inert[i]
        for a in range(NQ):
            ja0 = Jlink[i, 0, a]
            ja1 = Jlink[i, 1, a]
            sa = svec[i, a]
            if ja0 == 0.0 and ja1 == 0.0 and sa == 0.0:
                continue
            for b in range(a, NQ):
                M[a, b] += mi * (ja0 * Jlink[i, 0, b] + ja1 * Jlink[i, 1, b]) \
                    + Ii * sa * svec[i, b]
            cgam[a] += mi * (ja0 * gam_com[i, 0] + ja1 * gam_com[i, 1])
    for a in range(NQ):
        for b in range(a):
            M[a, b] = M[b, a]

    return M, cgam, origins, pitches, Jorg, svec, coms, Jlink, gam_org, gam_com


@njit(cache=True)
def mass_bias(q, v, P, gvec):
    """M(q) and bias(q, v) with M vdot + bias = tau_gen."""
    M, cgam, origins, pitches, Jorg, svec, coms, Jlink, go, gc = _assemble(q, v, P)
    bias = cgam.copy()
    for i in range(NLINK):
        mi = P[i]
        for a in range(NQ):
            bias[a] -= mi * (Jlink[i, 0, a] * gvec[0] + Jlink[i, 1, a] * gvec[1])
    return M, bias


@njit(cache=True)
def com_jacobian(q, P):
    """Total COM (x, z) and its 2x9 Jacobian."""
    v = np.zeros(NQ)
    M, cgam, origins, pitches, Jorg, svec, coms, Jlink, go, gc = _assemble(q, v, P)
    com = np.zeros(2)
    J = np.zeros((2, NQ))
    mt = 0.0
    for i in range(NLINK):
        mt += P[i]
    for i in range(NLINK):
        w = P[i] / mt
        com[0] += w * coms[i, 0]
        com[1] += w * coms[i, 1]
        for a in range(NQ):
            J[0, a] += w * Jlink[i, 0, a]
            J[1, a] += w * Jlink[i, 1, a]
    return com, J


@njit(cache=True)
def frames(q, P):
    """Link frame origins (7,2) and absolute pitches (7,)."""
    v = np.zeros(NQ)
    M, cgam, origins, pitches, Jorg, svec, coms, Jlink, go, gc = _assemble(q, v, P)
    return origins, pitches


@njit(cache=True)
def foot_points(q, P):
    """Heel/toe/ankle world points per foot: pts[side, 0..2, xz]; side 0 = right.

    Also returns foot pitches (2,).
    """
    v = np.zeros(NQ)
    M, cgam, origins, pitches, Jorg, svec, coms, Jlink, go, gc = _assemble(q, v, P)
    xh = P[32]
    xt = P[33]
    za = P[34]
    pts = np.zeros((2, 3, 2))
    fpitch = np.zeros(2)
    for side in range(2):
        li = 3 + 3 * side
        t = pitches[li]
        s = np.sin(t)
        c = np.cos(t)
        ax = origins[li, 0]
        az = origins[li, 1]
        # heel local (-x_h, -z_a), toe local (x_t, -z_a)
        pts[side, 0, 0] = ax + (-xh) * c + (-za) * s
        pts[side, 0, 1] = az - (-xh) * s + (-za) * c
        pts[side, 1, 0] = ax + xt * c + (-za) * s
        pts[side, 1, 1] = az - xt * s + (-za) * c
        pts[side, 2, 0] = ax
        pts[side, 2, 1] = az
        fpitch[side] = t
    return pts, fpitch


@njit(cache=True)
def _stop_torques(q, v, limits, kstop, dstop):
    """Joint-limit stop torques (spring-damper beyond the limit)."""
    tau = np.zeros(6)
    for j in range(6):
        x = q[3 + j]
        lo = limits[j, 0]
        hi = limits[j, 1]
        if x > hi:
            tau[j] = -kstop * (x - hi) - dstop * v[3 + j]
        elif x < lo:
            tau[j] = -kstop * (x - lo) - dstop * v[3 + j]
    return tau


@njit(cache=True)
def _gen_torque(q, v, tau6, fext3, limits, kstop, dstop):
    taug = np.zeros(NQ)
    stops = _stop_torques(q, v, limits, kstop, dstop)
    for k in range(3):
        taug[k] = fext3[k]
    for j in range(6):
        taug[3 + j] = tau6[j] + stops[j]
    return taug


@njit(cache=True)
def _det3(A):
    return (A[0, 0] * (A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1])
            - A[0, 1] * (A[1, 0] * A[2, 2] - A[1, 2] * A[2, 0])
            + A[0, 2] * (A[1, 0] * A[2, 1] - A[1, 1] * A[2, 0]))


@njit(cache=True)
def constrained_accel(q, v, tau6, fext3, P, gvec, side, anchor, baum,
                      limits, kstop, dstop):
    """KKT solve with the flat-foot constraint on one stance foot.

    side: 0 right stance, 1 left stance.
    anchor: constraint targets (ankle_x, ankle_z, foot_pitch).
    baum: (alpha, beta) Baumgarte gains, 1/s.
    Returns (vdot, lam, ok); ok=False flags a rank-deficient constraint.
    lam = (Fx, Fz, M_ankle_pitch): reaction wrench expressed at the ankle.
    """
    M, cgam, origins, pitches, Jorg, svec, coms, Jlink, gam_org, gc = \
        _assemble(q, v, P)
    bias = cgam.copy()
    for i in range(NLINK):
        mi = P[i]
        for a in range(NQ):
            bias[a] -= mi * (Jlink[i, 0, a] * gvec[0] + Jlink[i, 1, a] * gvec[1])

    li = 3 + 3 * side
    J = np.zeros((3, NQ))
    for b in range(NQ):
        J[0, b] = Jorg[li, 0, b]
        J[1, b] = Jorg[li, 1, b]
        J[2, b] = svec[li, b]
    jdv = np.zeros(3)
    jdv[0] = gam_org[li, 0]
    jdv[1] = gam_org[li, 1]
    cval = np.zeros(3)
    cval[0] = origins[li, 0]
    cval[1] = origins[li, 1]
    cval[2] = pitches[li]

    JJt = np.zeros((3, 3))
    for a in range(3):
        for b in range(3):
            acc = 0.0
            for k in range(NQ):
                acc += J[a, k] * J[b, k]
            JJt[a, b] = acc
    ok = abs(_det3(JJt)) > 1e-12

    taug = _gen_torque(q, v, tau6, fext3, limits, kstop, dstop)

    n = NQ + 3
    K = np.zeros((n, n))
    rhs = np.zeros(n)
    for a in range(NQ):
        for b in range(NQ):
            K[a, b] = M[a, b]
        for c in range(3):
            K[a, NQ + c] = -J[c, a]
            K[NQ + c, a] = J[c, a]
        rhs[a] = taug[a] - bias[a]
    al = baum[0]
    be = baum[1]
    for c in range(3):
        cdot = 0.0
        for k in range(NQ):
            cdot += J[c, k] * v[k]
        rhs[NQ + c] = -jdv[c] - 2.0 * al * cdot - be * be * (cval[c] - anchor[c])

    sol = np.linalg.solve(K, rhs)
    vdot = sol[:NQ].copy()
    lam = sol[NQ:].copy()
    return vdot, lam, ok


@njit(cache=True)
def unconstrained_accel(q, v, tau6, fext3, P, gvec, limits, kstop, dstop):
    """Free-floating (ballistic) accelerations."""
    M, bias = mass_bias(q, v, P, gvec)
    taug = _gen_torque(q, v, tau6, fext3, limits, kstop, dstop)
    return np.linalg.solve(M, taug - bias)


@njit(cache=True)
def impact(q, v, P, side):
    """Plastic impact absorbing velocity into the new stance foot constraint.

    Returns (v_plus, impulse, ok). Positions are untouched.
    """
    zero = np.zeros(NQ)
    M, cgam, origins, pitches, Jorg, svec, coms, Jlink, go, gc = \
        _assemble(q, zero, P)
    li = 3 + 3 * side
    J = np.zeros((3, NQ))
    for b in range(NQ):
        J[0, b] = Jorg[li, 0, b]
        J[1, b] = Jorg[li, 1, b]
        J[2, b] = svec[li, b]
    JJt = np.zeros((3, 3))
    for a in range(3):
        for b in range(3):
            acc = 0.0
            for k in range(NQ):
                acc += J[a, k] * J[b, k]
            JJt[a, b] = acc
    ok = abs(_det3(JJt)) > 1e-12

    n = NQ + 3
    K = np.zeros((n, n))
    rhs = np.zeros(n)
    for a in range(NQ):
        for b in range(NQ):
            K[a, b] = M[a, b]
        for c in range(3):
            K[a, NQ + c] = -J[c, a]
            K[NQ + c, a] = J[c, a]
        acc = 0.0
        for b in range(NQ):
            acc += M[a, b] * v[b]
        rhs[a] = acc
    sol = np.linalg.solve(K, rhs)
    return sol[:NQ].copy(), sol[NQ:].copy(), ok


@njit(cache=True)
def rk4_step(q, v, tau6, fext3, P, gvec, side, anchor, baum,
             limits, kstop, dstop, dt):
    """One fixed RK4 step of the constrained dynamics, torques held."""
    a1, l1, ok1 = constrained_accel(q, v, tau6, fext3, P, gvec, side, anchor,
                                    baum, limits, kstop, dstop)
    q2 = q + 0.5 * dt * v
    v2 = v + 0.5 * dt * a1
    a2, l2, ok2 = constrained_accel(q2, v2, tau6, fext3, P, gvec, side, anchor,
                                    baum, limits, kstop, dstop)
    q3 = q + 0.5 * dt * v2
    v3 = v + 0.5 * dt * a2
    a3, l3, ok3 = constrained_accel(q3, v3, tau6, fext3, P, gvec, side, anchor,
                                    baum, limits, kstop, dstop)
    q4 = q + dt * v3
    v4 = v + dt * a3
    a4, l4, ok4 = constrained_accel(q4, v4, tau6, fext3, P, gvec, side, anchor,
                                    baum, limits, kstop, dstop)
    qn = q + (dt / 6.0) * (v + 2.0 * v2 + 2.0 * v3 + v4)
    vn = v + (dt / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    return qn, vn, ok1 and ok2 and ok3 and ok4


@njit(cache=True)
def rk4_step_free(q, v, tau6, fext3, P, gvec, limits, kstop, dstop, dt):
    """One fixed RK4 step of the unconstrained (flight) dynamics."""
    a1 = unconstrained_accel(q, v, tau6, fext3, P, gvec, limits, kstop, dstop)
    q2 = q + 0.5 * dt * v
    v2 = v + 0.5 * dt * a1
    a2 = unconstrained_accel(q2, v2, tau6, fext3, P, gvec, limits, kstop, dstop)
    q3 = q + 0.5 * dt * v2
    v3 = v + 0.5 * dt * a2
    a3 = unconstrained_accel(q3, v3, tau6, fext3, P, gvec, limits, kstop, dstop)
    q4 = q + dt * v3
    v4 = v + dt * a3
    a4 = unconstrained_accel(q4, v4, tau6, fext3, P, gvec, limits, kstop, dstop)
    qn = q + (dt / 6.0) * (v + 2.0 * v2 + 2.0 * v3 + v4)
    vn = v + (dt / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    return qn, vn


@njit(cache=True)
def total_energy(q, v, P, gvec):
    """Kinetic plus gravitational potential energy."""
    M, cgam, origins, pitches, Jorg, svec, coms, Jlink, go, gc = _assemble(q, v, P)
    e = 0.0
    for a in range(NQ):
        for b in range(NQ):
            e += 0.5 * v[a] * M[a, b] * v[b]
    for i in range(NLINK):
        e -= P[i] * (gvec[0] * coms[i, 0] + gvec[1] * coms[i, 1])
    return e
