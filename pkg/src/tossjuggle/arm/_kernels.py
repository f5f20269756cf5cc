"""Compiled serial-chain kernels (standard DH, revolute joints, world-frame RNE).

Model arrays:
    dh       (n, 4)   a, alpha, d, theta offset per joint
    base_R   (3, 3), base_p (3,)
    tool_p   (3,)     hand point in the last link frame
    mass     (n,), com (n, 3) in link frames, inertia (n, 3, 3) about the COM
"""
import numpy as np
from numba import njit

PD, PDG, PDFF, ID, ID_LITERAL = 0, 1, 2, 3, 4


@njit(cache=True)
def _mv(A, v):
    return np.array([A[0, 0] * v[0] + A[0, 1] * v[1] + A[0, 2] * v[2],
                     A[1, 0] * v[0] + A[1, 1] * v[1] + A[1, 2] * v[2],
                     A[2, 0] * v[0] + A[2, 1] * v[1] + A[2, 2] * v[2]])


@njit(cache=True)
def _mm(A, B):
    C = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            C[i, j] = A[i, 0] * B[0, j] + A[i, 1] * B[1, j] + A[i, 2] * B[2, j]
    return C


@njit(cache=True)
def frames(dh, base_R, base_p, q, R, o):
    """Fill ``R[i]``, ``o[i]`` for frames 0..n; joint i rotates about ``R[i-1][:, 2]``."""
    n = dh.shape[0]
    R[0] = base_R
    o[0] = base_p
    for i in range(n):
        a, al, d, off = dh[i, 0], dh[i, 1], dh[i, 2], dh[i, 3]
        th = q[i] + off
        ct, st, ca, sa = np.cos(th), np.sin(th), np.cos(al), np.sin(al)
        L = np.empty((3, 3))
        L[0, 0] = ct
        L[0, 1] = -st * ca
        L[0, 2] = st * sa
        L[1, 0] = st
        L[1, 1] = ct * ca
        L[1, 2] = -ct * sa
        L[2, 0] = 0.0
        L[2, 1] = sa
        L[2, 2] = ca
        R[i + 1] = _mm(R[i], L)
        v = np.array([a * ct, a * st, d])
        o[i + 1] = o[i] + _mv(R[i], v)


@njit(cache=True)
def _cross(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


@njit(cache=True)
def hand_kinematics(dh, base_R, base_p, tool_p, q, qd):
    """Hand point, Jacobian and its time derivative.

    Returns ``(p, J, Jdot, R_tool)``; ``Jdot`` is evaluated at velocity ``qd``.
    """
    n = dh.shape[0]
    R = np.empty((n + 1, 3, 3))
    o = np.empty((n + 1, 3))
    frames(dh, base_R, base_p, q, R, o)
    p = o[n] + R[n] @ tool_p
    J = np.zeros((3, n))
    z = np.empty((n, 3))
    for i in range(n):
        z[i] = R[i][:, 2]
        J[:, i] = _cross(z[i], p - o[i])
    pd = J @ qd
    # angular velocity of frame i and velocity of origin o_i
    w = np.zeros((n + 1, 3))
    ov = np.zeros((n + 1, 3))
    for i in range(n):
        w[i + 1] = w[i] + qd[i] * z[i]
        ov[i + 1] = ov[i] + _cross(w[i + 1], o[i + 1] - o[i])
    Jd = np.zeros((3, n))
    for i in range(n):
        zd = _cross(w[i], z[i])
        Jd[:, i] = _cross(zd, p - o[i]) + _cross(z[i], pd - ov[i])
    return p, J, Jd, R[n]


@njit(cache=True)
def _prepare(dh, base_R, base_p, com, inertia, q):
    """Frames, link COMs and world-frame inertias at ``q``."""
    n = dh.shape[0]
    R = np.empty((n + 1, 3, 3))
    o = np.empty((n + 1, 3))
    frames(dh, base_R, base_p, q, R, o)
    pc = np.empty((n, 3))
    Iw = np.empty((n, 3, 3))
    for i in range(n):
        pc[i] = o[i + 1] + _mv(R[i + 1], com[i])
        Iw[i] = _mm(_mm(R[i + 1], inertia[i]), R[i + 1].T.copy())
    return R, o, pc, Iw


@njit(cache=True)
def _rne_into(R, o, pc, Iw, mass, qd, qdd, grav, ws, wds, ac, tau):
    """RNE pass writing joint torques into ``tau``; ``ws``, ``wds``, ``ac`` are (n, 3) scratch."""
    n = mass.shape[0]
    w0 = w1 = w2 = 0.0
    d0 = d1 = d2 = 0.0
    # linear acceleration of o_{i-1}, gravity folded in
    a0, a1, a2 = -grav[0], -grav[1], -grav[2]
    for i in range(n):
        z0, z1, z2 = R[i, 0, 2], R[i, 1, 2], R[i, 2, 2]
        v, u = qd[i], qdd[i]
        # wd += u z + w x (v z)
        d0 += u * z0 + v * (w1 * z2 - w2 * z1)
        d1 += u * z1 + v * (w2 * z0 - w0 * z2)
        d2 += u * z2 + v * (w0 * z1 - w1 * z0)
        w0 += v * z0
        w1 += v * z1
        w2 += v * z2
        for k in range(2):
            if k == 0:
                r0, r1, r2 = pc[i, 0] - o[i, 0], pc[i, 1] - o[i, 1], pc[i, 2] - o[i, 2]
            else:
                r0, r1, r2 = o[i + 1, 0] - o[i, 0], o[i + 1, 1] - o[i, 1], o[i + 1, 2] - o[i, 2]
            c0 = w1 * r2 - w2 * r1
            c1 = w2 * r0 - w0 * r2
            c2 = w0 * r1 - w1 * r0
            e0 = a0 + d1 * r2 - d2 * r1 + w1 * c2 - w2 * c1
            e1 = a1 + d2 * r0 - d0 * r2 + w2 * c0 - w0 * c2
            e2 = a2 + d0 * r1 - d1 * r0 + w0 * c1 - w1 * c0
            if k == 0:
                ac[i, 0], ac[i, 1], ac[i, 2] = e0, e1, e2
            else:
                a0, a1, a2 = e0, e1, e2
        ws[i, 0], ws[i, 1], ws[i, 2] = w0, w1, w2
        wds[i, 0], wds[i, 1], wds[i, 2] = d0, d1, d2
    f0 = f1 = f2 = 0.0
    m0 = m1 = m2 = 0.0
    for i in range(n - 1, -1, -1):
        F0, F1, F2 = mass[i] * ac[i, 0], mass[i] * ac[i, 1], mass[i] * ac[i, 2]
        I = Iw[i]
        x0, x1, x2 = ws[i, 0], ws[i, 1], ws[i, 2]
        y0, y1, y2 = wds[i, 0], wds[i, 1], wds[i, 2]
        h0 = I[0, 0] * x0 + I[0, 1] * x1 + I[0, 2] * x2
        h1 = I[1, 0] * x0 + I[1, 1] * x1 + I[1, 2] * x2
        h2 = I[2, 0] * x0 + I[2, 1] * x1 + I[2, 2] * x2
        N0 = I[0, 0] * y0 + I[0, 1] * y1 + I[0, 2] * y2 + x1 * h2 - x2 * h1
        N1 = I[1, 0] * y0 + I[1, 1] * y1 + I[1, 2] * y2 + x2 * h0 - x0 * h2
        N2 = I[2, 0] * y0 + I[2, 1] * y1 + I[2, 2] * y2 + x0 * h1 - x1 * h0
        # link i+1 spans o[i] .. o[i+1]; joint i+1 turns about z at o[i]
        r0, r1, r2 = o[i + 1, 0] - o[i, 0], o[i + 1, 1] - o[i, 1], o[i + 1, 2] - o[i, 2]
        p0, p1, p2 = pc[i, 0] - o[i, 0], pc[i, 1] - o[i, 1], pc[i, 2] - o[i, 2]
        m0 += r1 * f2 - r2 * f1 + p1 * F2 - p2 * F1 + N0
        m1 += r2 * f0 - r0 * f2 + p2 * F0 - p0 * F2 + N1
        m2 += r0 * f1 - r1 * f0 + p0 * F1 - p1 * F0 + N2
        f0 += F0
        f1 += F1
        f2 += F2
        tau[i] = m0 * R[i, 0, 2] + m1 * R[i, 1, 2] + m2 * R[i, 2, 2]


@njit(cache=True)
def _rne(R, o, pc, Iw, mass, qd, qdd, grav):
    n = mass.shape[0]
    ws = np.empty((n, 3))
    wds = np.empty((n, 3))
    ac = np.empty((n, 3))
    tau = np.empty(n)
    _rne_into(R, o, pc, Iw, mass, qd, qdd, grav, ws, wds, ac, tau)
    return tau


@njit(cache=True)
def rne(dh, base_R, base_p, mass, com, inertia, q, qd, qdd, grav):
    """Joint torques for the given motion; ``grav`` is the gravity vector."""
    R, o, pc, Iw = _prepare(dh, base_R, base_p, com, inertia, q)
    return _rne(R, o, pc, Iw, mass, qd, qdd, grav)


@njit(cache=True)
def _mass_matrix(R, o, pc, Iw, mass):
    # unit-acceleration columns of the inverse dynamics
    n = mass.shape[0]
    M = np.empty((n, n))
    zero = np.zeros(n)
    e = np.zeros(n)
    g0 = np.zeros(3)
    ws = np.empty((n, 3))
    wds = np.empty((n, 3))
    ac = np.empty((n, 3))
    col = np.empty(n)
    for j in range(n):
        e[j] = 1.0
        _rne_into(R, o, pc, Iw, mass, zero, e, g0, ws, wds, ac, col)
        e[j] = 0.0
        M[:, j] = col
    return 0.5 * (M + M.T)


@njit(cache=True)
def mass_matrix(dh, base_R, base_p, mass, com, inertia, q):
    R, o, pc, Iw = _prepare(dh, base_R, base_p, com, inertia, q)
    return _mass_matrix(R, o, pc, Iw, mass)


@njit(cache=True)
def forward_dynamics(dh, base_R, base_p, mass, com, inertia, q, qd, tau, grav):
    n = dh.shape[0]
    R, o, pc, Iw = _prepare(dh, base_R, base_p, com, inertia, q)
    M = _mass_matrix(R, o, pc, Iw, mass)
    h = _rne(R, o, pc, Iw, mass, qd, np.zeros(n), grav)
    return np.linalg.solve(M, tau - h)


@njit(cache=True)
def rk4_step(dh, base_R, base_p, mass, com, inertia, q, qd, tau, grav, h):
    k1q = qd
    k1v = forward_dynamics(dh, base_R, base_p, mass, com, inertia, q, qd, tau, grav)
    k2q = qd + 0.5 * h * k1v
    k2v = forward_dynamics(dh, base_R, base_p, mass, com, inertia, q + 0.5 * h * k1q, k2q, tau, grav)
    k3q = qd + 0.5 * h * k2v
    k3v = forward_dynamics(dh, base_R, base_p, mass, com, inertia, q + 0.5 * h * k2q, k3q, tau, grav)
    k4q = qd + h * k3v
    k4v = forward_dynamics(dh, base_R, base_p, mass, com, inertia, q + h * k3q, k4q, tau, grav)
    qn = q + h / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
    qdn = qd + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return qn, qdn


@njit(cache=True)
def control_law(kind, Kp, Kd, dh, base_R, base_p, mass, com, inertia, grav,
                q, qd, q_d, qd_d, qdd_d):
    """Joint torque of the tracking laws with the given dynamics model."""
    n = q.shape[0]
    fb = Kp * (q_d - q) + Kd * (qd_d - qd)
    if kind == PD:
        return fb
    if kind == PDG:
        return fb + rne(dh, base_R, base_p, mass, com, inertia, q, np.zeros(n), np.zeros(n), grav)
    if kind == PDFF:
        return fb + rne(dh, base_R, base_p, mass, com, inertia, q_d, qd_d, qdd_d, grav)
    if kind == ID:
        return rne(dh, base_R, base_p, mass, com, inertia, q, qd, qdd_d + Kp * (q_d - q)
                   + Kd * (qd_d - qd), grav)
    return rne(dh, base_R, base_p, mass, com, inertia, q, qd, fb, grav)


@njit(cache=True)
def sample_plan(P, V, A, Jk, t0, dt, t):
    K = Jk.shape[0]
    s = t - t0
    if s < 0.0:
        s = 0.0
    if s > K * dt:
        s = K * dt
    k = int(s // dt)
    if k > K - 1:
        k = K - 1
    tau = s - k * dt
    j = Jk[k]
    return (P[k] + V[k] * tau + A[k] * tau * tau / 2.0 + j * tau ** 3 / 6.0,
            V[k] + A[k] * tau + j * tau * tau / 2.0,
            A[k] + j * tau)


@njit(cache=True)
def advance(plant, model, grav, kind, Kp, Kd, plan, t0, pdt,
            q, qd, t, t_end, tick_dt, tau, next_tick, substep, vmax, record):
    """Integrate the closed loop from ``t`` to ``t_end``.

    ``plant`` and ``model`` are tuples ``(dh, base_R, base_p, mass, com, inertia)``;
    ``plan`` is ``(P, V, A, J)`` of the active joint trajectory starting at ``t0``.
    Torques are recomputed at each control tick and held in between.  Returns
    ``(q, qd, t, tau, next_tick, diverged, times, qs, qds)`` where the last three
    hold the states after every integration step when ``record`` is set.
    """
    dh, bR, bp, m, c, I = plant
    mdh, mbR, mbp, mm, mc, mI = model
    P, V, A, Jk = plan
    n = q.shape[0]
    cap = int((t_end - t) / substep) + int((t_end - t) / tick_dt) + 4
    if not record:
        cap = 1
    times = np.empty(cap)
    qs = np.empty((cap, n))
    qds = np.empty((cap, n))
    cnt = 0
    diverged = False
    eps = 1e-12
    while t < t_end - eps:
        if t >= next_tick - eps:
            q_d, qd_d, qdd_d = sample_plan(P, V, A, Jk, t0, pdt, t)
            tau = control_law(kind, Kp, Kd, mdh, mbR, mbp, mm, mc, mI, grav, q, qd, q_d, qd_d, qdd_d)
            next_tick += tick_dt
        h = substep
        if next_tick - t < h:
            h = next_tick - t
        if t_end - t < h:
            h = t_end - t
        q, qd = rk4_step(dh, bR, bp, m, c, I, q, qd, tau, grav, h)
        t += h
        if record and cnt < cap:
            times[cnt] = t
            qs[cnt] = q
            qds[cnt] = qd
            cnt += 1
        for i in range(n):
            if abs(qd[i]) > vmax[i] or not np.isfinite(qd[i]):
                diverged = True
        if diverged:
            break
    return q, qd, t, tau, next_tick, diverged, times[:cnt], qs[:cnt], qds[:cnt]


@njit(cache=True)
def advance_open_loop(plant, grav, q, qd, taus, tick_dt, substep):
    """Integrate a zero-order-held torque stream; returns the states at each tick."""
    dh, bR, bp, m, c, I = plant
    n = q.shape[0]
    N = taus.shape[0]
    qs = np.empty((N + 1, n))
    qds = np.empty((N + 1, n))
    qs[0] = q
    qds[0] = qd
    nsub = int(np.ceil(tick_dt / substep - 1e-9))
    h = tick_dt / nsub
    for k in range(N):
        for _ in range(nsub):
            q, qd = rk4_step(dh, bR, bp, m, c, I, q, qd, taus[k], grav, h)
        qs[k + 1] = q
        qds[k + 1] = qd
    return qs, qds
