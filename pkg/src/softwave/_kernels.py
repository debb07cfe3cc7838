"""Compiled inner loops shared by the public modules.

Everything in here works on plain arrays and namedtuples so that numba can
compile it. The public modules validate inputs and wrap these routines.

Conventions: world frame (x, z) with z up, angles measured from +x towards +z,
segments are 0-based here (the public API is 1-based).
"""

import math
from collections import namedtuple

import numpy as np
from numba import njit

ModelArrays = namedtuple(
    "ModelArrays",
    [
        "n",  # segment count
        "nq",  # lumping nodes per segment
        "L",  # segment length
        "bx",  # base x
        "bz",  # base z
        "heading",  # base tangent angle
        "m_node",  # body mass per node
        "vol_node",  # displaced volume per node
        "rho_f",
        "g",
        "k_stiff",  # (n,)
        "d_damp",  # (n,)
        "ma_x",  # added mass per node, world x
        "ma_z",  # added mass per node, world z
        "area",  # incident area per node
        "cd",
        "cf",
        "fk",  # 1.0 adds the fluid-acceleration inertia term, 0.0 leaves it out
    ],
)

WaveArrays = namedtuple(
    "WaveArrays",
    [
        "amp",  # cosine amplitude of the elevation, A/2
        "omega",
        "k",
        "phi",
        "depth",
        "inv_den",  # 1 / (1 - exp(-2 k d))
    ],
)

# Wave field prepared for one mount point. Around the base (x0, z0) each
# component's exp(k z) e^{i k x} factor is a power series in the complex
# offset zeta = dz + i dx, so the field at every node follows from a handful
# of time-dependent moments instead of per-node transcendentals.
WaveField = namedtuple(
    "WaveField",
    [
        "k",
        "omega",
        "theta0",  # k x0 + phi
        "a_up",  # velocity amplitude * exp(k z0) / (1 - exp(-2kd))
        "a_dn",  # velocity amplitude * exp(-k (z0 + 2d)) / (1 - exp(-2kd))
        "x0",
        "z0",
        "order",  # series truncation; -1 means evaluate directly
        "raw",  # WaveArrays for the direct path
    ],
)

Forecast = namedtuple("Forecast", ["t0", "dt", "fe"])

SERIES_SWITCH = 1e-2

# integrator status codes
OK = 0
STEP_TOO_SMALL = 1
TOO_MANY_STEPS = 2


def empty_wave(depth=20.0):
    z = np.zeros(0)
    return WaveArrays(z, z.copy(), z.copy(), z.copy(), float(depth), z.copy())


def wave_field(w, x0, z0, radius, tol=1e-17, max_order=80):
    """Series representation of the wave field for points within ``radius`` of (x0, z0)."""
    k = np.asarray(w.k, dtype=float)
    vel = w.amp * w.omega
    a_up = vel * np.exp(k * z0) * w.inv_den
    a_dn = vel * np.exp(-k * (z0 + 2.0 * w.depth)) * w.inv_den
    order = 0
    if k.size:
        r = float(np.max(k)) * radius
        term = 1.0
        order = -1
        for j in range(1, max_order + 1):
            term *= r / j
            if j > r and term < tol:
                order = max(j, 4)
                break
    return WaveField(k, np.asarray(w.omega, float), k * x0 + w.phi, a_up, a_dn, float(x0), float(z0),
                     order, w)


def empty_field(depth=20.0):
    return wave_field(empty_wave(depth), 0.0, -1.0, 1.0)


def field_for(sea, m):
    """Wave field around the mount of model ``m``; ``sea=None`` gives still water."""
    w = empty_wave() if sea is None else sea.arrays()
    return wave_field(w, m.bx, m.bz, 1.001 * m.n * m.L)


def empty_forecast(n):
    return Forecast(0.0, 1.0, np.zeros((1, n)))


@njit(cache=True)
def arc_terms(x):
    """sin(x)/x, (1-cos x)/x and their first two derivatives."""
    if abs(x) < SERIES_SWITCH:
        x2 = x * x
        x4 = x2 * x2
        x6 = x4 * x2
        f1 = 1.0 - x2 / 6.0 + x4 / 120.0 - x6 / 5040.0
        f2 = x * (0.5 - x2 / 24.0 + x4 / 720.0 - x6 / 40320.0)
        f1p = x * (-1.0 / 3.0 + x2 / 30.0 - x4 / 840.0 + x6 / 45360.0)
        f2p = 0.5 - x2 / 8.0 + x4 / 144.0 - x6 / 5760.0
        f1pp = -1.0 / 3.0 + x2 / 10.0 - x4 / 168.0 + x6 / 6480.0
        f2pp = x * (-0.25 + x2 / 36.0 - x4 / 960.0 + x6 / 50400.0)
    else:
        s = math.sin(x)
        c = math.cos(x)
        sh = math.sin(0.5 * x)
        omc = 2.0 * sh * sh
        x2 = x * x
        x3 = x2 * x
        f1 = s / x
        f2 = omc / x
        f1p = (x * c - s) / x2
        f2p = (x * s - omc) / x2
        f1pp = (2.0 * s - 2.0 * x * c - x2 * s) / x3
        f2pp = (x2 * c - 2.0 * x * s + 2.0 * omc) / x3
    return f1, f2, f1p, f2p, f1pp, f2pp


@njit(cache=True)
def _arc_terms_half(x, sh, chh):
    """arc_terms with sin(x/2), cos(x/2) supplied by the caller."""
    if abs(x) < SERIES_SWITCH:
        return arc_terms(x)
    s = 2.0 * sh * chh
    omc = 2.0 * sh * sh
    c = 1.0 - omc
    x2 = x * x
    x3 = x2 * x
    return (
        s / x,
        omc / x,
        (x * c - s) / x2,
        (x * s - omc) / x2,
        (2.0 * s - 2.0 * x * c - x2 * s) / x3,
        (x2 * c - 2.0 * x * s + 2.0 * omc) / x3,
    )


@njit(cache=True)
def _rotate_offset(f1, f2, f1p, f2p, f1pp, f2pp, s, L, ct, st):
    ls = L * s
    ls2 = ls * s
    ls3 = ls2 * s
    c0 = ls * f1
    c1 = ls * f2
    d0 = ls2 * f1p
    d1 = ls2 * f2p
    e0 = ls3 * f1pp
    e1 = ls3 * f2pp
    return (
        ct * c0 - st * c1,
        st * c0 + ct * c1,
        ct * d0 - st * d1,
        st * d0 + ct * d1,
        ct * e0 - st * e1,
        st * e0 + ct * e1,
    )


@njit(cache=True)
def arc_offset(qi, s, L, ct, st):
    """World offset of the point at fraction s along an arc and its q-derivatives."""
    f1, f2, f1p, f2p, f1pp, f2pp = arc_terms(s * qi)
    ls = L * s
    ls2 = ls * s
    ls3 = ls2 * s
    c0 = ls * f1
    c1 = ls * f2
    d0 = ls2 * f1p
    d1 = ls2 * f2p
    e0 = ls3 * f1pp
    e1 = ls3 * f2pp
    return (
        ct * c0 - st * c1,
        st * c0 + ct * c1,
        ct * d0 - st * d1,
        st * d0 + ct * d1,
        ct * e0 - st * e1,
        st * e0 + ct * e1,
    )


@njit(cache=True)
def point_kinematics(q, qd, seg, s, L, bx, bz, heading):
    """Position, tangent, Jacobian and Jacobian rate at one point.

    Returns (px, pz, theta, J, Jd), J and Jd of shape (2, n).
    """
    n = q.shape[0]
    ex = bx
    ez = bz
    th = heading
    thd = 0.0
    Je = np.zeros((2, n))
    Jde = np.zeros((2, n))
    J = np.zeros((2, n))
    Jd = np.zeros((2, n))
    px = ex
    pz = ez
    pth = th
    for i in range(seg + 1):
        si = s if i == seg else 1.0
        ct = math.cos(th)
        st = math.sin(th)
        rx, rz, rpx, rpz, rppx, rppz = arc_offset(q[i], si, L, ct, st)
        qdi = qd[i]
        rdx = -thd * rz + rpx * qdi
        rdz = thd * rx + rpz * qdi
        J[:, :] = 0.0
        Jd[:, :] = 0.0
        for j in range(i):
            J[0, j] = Je[0, j] - rz
            J[1, j] = Je[1, j] + rx
            Jd[0, j] = Jde[0, j] - rdz
            Jd[1, j] = Jde[1, j] + rdx
        J[0, i] = rpx
        J[1, i] = rpz
        Jd[0, i] = -thd * rpz + rppx * qdi
        Jd[1, i] = thd * rpx + rppz * qdi
        px = ex + rx
        pz = ez + rz
        pth = th + si * q[i]
        if i < seg:
            ex = px
            ez = pz
            th = th + q[i]
            thd = thd + qdi
            Je[:, :] = J
            Jde[:, :] = Jd
    return px, pz, pth, J, Jd


@njit(cache=True)
def tip_position(q, m):
    """End-effector (x, z) of the last segment."""
    ex = m.bx
    ez = m.bz
    th = m.heading
    for i in range(q.shape[0]):
        ct = math.cos(th)
        st = math.sin(th)
        f1, f2, _, _, _, _ = arc_terms(q[i])
        ex += m.L * (ct * f1 - st * f2)
        ez += m.L * (st * f1 + ct * f2)
        th += q[i]
    return ex, ez


@njit(cache=True)
def segment_tips(q, m):
    out = np.empty((q.shape[0], 2))
    ex = m.bx
    ez = m.bz
    th = m.heading
    for i in range(q.shape[0]):
        ct = math.cos(th)
        st = math.sin(th)
        f1, f2, _, _, _, _ = arc_terms(q[i])
        ex += m.L * (ct * f1 - st * f2)
        ez += m.L * (st * f1 + ct * f2)
        th += q[i]
        out[i, 0] = ex
        out[i, 1] = ez
    return out


@njit(cache=True)
def node_states(q, qd, m):
    """Per-node position, tangent, Jacobian, velocity and J-dot-qdot.

    Nodes sit at the arc-length midpoints (j + 1/2)/nq of every segment.
    """
    n = m.n
    nq = m.nq
    N = n * nq
    pos = np.empty((N, 2))
    ang = np.empty(N)
    Jall = np.zeros((N, 2, n))
    vel = np.empty((N, 2))
    acc = np.empty((N, 2))
    J = np.zeros((2, n))
    Je = np.zeros((2, n))
    ex = m.bx
    ez = m.bz
    th = m.heading
    thd = 0.0
    vex = 0.0
    vez = 0.0
    aex = 0.0
    aez = 0.0
    idx = 0
    for i in range(n):
        ct = math.cos(th)
        st = math.sin(th)
        qdi = qd[i]
        # half-angles of the nodes, (jn + 1/2) q / (2 nq), advanced by rotation
        step = 0.5 * q[i] / nq
        cs_step = math.cos(step)
        sn_step = math.sin(step)
        hc = math.cos(0.5 * step)
        hs = math.sin(0.5 * step)
        for jn in range(nq + 1):
            if jn < nq:
                s = (jn + 0.5) / nq
                f1, f2, f1p, f2p, f1pp, f2pp = _arc_terms_half(s * q[i], hs, hc)
                hc, hs = hc * cs_step - hs * sn_step, hs * cs_step + hc * sn_step
            else:
                s = 1.0
                f1, f2, f1p, f2p, f1pp, f2pp = arc_terms(q[i])
            rx, rz, rpx, rpz, rppx, rppz = _rotate_offset(f1, f2, f1p, f2p, f1pp, f2pp, s, m.L, ct, st)
            rdx = -thd * rz + rpx * qdi
            rdz = thd * rx + rpz * qdi
            for j in range(i):
                J[0, j] = Je[0, j] - rz
                J[1, j] = Je[1, j] + rx
            J[0, i] = rpx
            J[1, i] = rpz
            vx = vex + rdx
            vz = vez + rdz
            ax = aex - thd * rdz + qdi * (-thd * rpz + rppx * qdi)
            az = aez + thd * rdx + qdi * (thd * rpx + rppz * qdi)
            if jn < nq:
                pos[idx, 0] = ex + rx
                pos[idx, 1] = ez + rz
                ang[idx] = th + s * q[i]
                Jall[idx, :, :] = J
                vel[idx, 0] = vx
                vel[idx, 1] = vz
                acc[idx, 0] = ax
                acc[idx, 1] = az
                idx += 1
            else:
                ex += rx
                ez += rz
                vex = vx
                vez = vz
                aex = ax
                aez = az
                for j in range(i + 1):
                    Je[0, j] = J[0, j]
                    Je[1, j] = J[1, j]
        th += q[i]
        thd += qdi
    return pos, ang, Jall, vel, acc


@njit(cache=True)
def wave_kinematics(w, x, z, t, want_acc):
    """Particle velocity (and optionally acceleration) at one point."""
    u = 0.0
    v = 0.0
    du = 0.0
    dv = 0.0
    d = w.depth
    for c in range(w.k.shape[0]):
        kk = w.k[c]
        ph = kk * x - w.omega[c] * t + w.phi[c]
        e1 = math.exp(kk * z)
        e2 = math.exp(-kk * (z + 2.0 * d))
        ch = (e1 + e2) * w.inv_den[c]
        sh = (e1 - e2) * w.inv_den[c]
        vamp = w.amp[c] * w.omega[c]
        cp = math.cos(ph)
        sp = math.sin(ph)
        u += vamp * ch * cp
        v += vamp * sh * sp
        if want_acc:
            du += vamp * w.omega[c] * ch * sp
            dv -= vamp * w.omega[c] * sh * cp
    return u, v, du, dv


@njit(cache=True)
def field_moments(wf, t, want_acc):
    """Series coefficients of the up/down-going parts (and their time derivatives)."""
    J = wf.order
    mu_up = np.zeros(J + 1, dtype=np.complex128)
    mu_dn = np.zeros(J + 1, dtype=np.complex128)
    nu_up = np.zeros(J + 1 if want_acc else 1, dtype=np.complex128)
    nu_dn = np.zeros(J + 1 if want_acc else 1, dtype=np.complex128)
    for c in range(wf.k.shape[0]):
        ph = wf.theta0[c] - wf.omega[c] * t
        e = complex(math.cos(ph), math.sin(ph))
        pu = wf.a_up[c] * e
        pd = wf.a_dn[c] * e
        kk = wf.k[c]
        fac = 1.0
        for j in range(J + 1):
            mu_up[j] += pu * fac
            mu_dn[j] += pd * fac
            if want_acc:
                nu_up[j] += wf.omega[c] * pu * fac
                nu_dn[j] += wf.omega[c] * pd * fac
            fac *= kk / (j + 1)
    return mu_up, mu_dn, nu_up, nu_dn


@njit(cache=True)
def _horner(mu, zeta):
    acc = mu[mu.shape[0] - 1]
    for j in range(mu.shape[0] - 2, -1, -1):
        acc = acc * zeta + mu[j]
    return acc


@njit(cache=True)
def field_at(wf, moments, x, z, t, want_acc):
    """Particle velocity and acceleration at (x, z) from precomputed moments."""
    if wf.k.shape[0] == 0:
        return 0.0, 0.0, 0.0, 0.0
    if wf.order < 0:
        return wave_kinematics(wf.raw, x, z, t, want_acc)
    mu_up, mu_dn, nu_up, nu_dn = moments
    dx = x - wf.x0
    dz = z - wf.z0
    su = _horner(mu_up, complex(dz, dx))
    sd = _horner(mu_dn, complex(-dz, dx))
    u = (su + sd).real
    w = (su - sd).imag
    du = 0.0
    dw = 0.0
    if want_acc:
        tu = _horner(nu_up, complex(dz, dx))
        td = _horner(nu_dn, complex(-dz, dx))
        du = (tu + td).imag
        dw = -(tu - td).real
    return u, w, du, dw


@njit(cache=True)
def drag_force(theta, vrx, vrz, rho_f, area, cd, cf):
    """World-frame drag on one element for relative velocity (body minus fluid)."""
    ct = math.cos(theta)
    st = math.sin(theta)
    vn = -st * vrx + ct * vrz
    vt = ct * vrx + st * vrz
    fn = -0.5 * rho_f * area * cd * abs(vn) * vn
    ft = -0.5 * rho_f * area * cf * abs(vt) * vt
    return -st * fn + ct * ft, ct * fn + st * ft


@njit(cache=True)
def assemble(q, qd, t, m, wf, hydro):
    """Lumped-mass terms of the equation of motion.

    Returns (M_body, M_added, coriolis, gravity, F_E). coriolis is the
    velocity-product vector C(q, qd) qd. F_E holds drag plus the convective
    added-mass reaction and is only filled when hydro is true.
    """
    n = m.n
    nq = m.nq
    Mb = np.zeros((n, n))
    Ma = np.zeros((n, n))
    cor = np.zeros(n)
    grav = np.zeros(n)
    fe = np.zeros(n)
    J = np.zeros((2, n))
    Je = np.zeros((2, n))
    mass = m.m_node
    w_net = (m.m_node - m.rho_f * m.vol_node) * m.g
    want_acc = m.fk > 0.0
    if hydro and wf.order >= 0:
        moments = field_moments(wf, t, want_acc)
    else:
        z1 = np.zeros(1, dtype=np.complex128)
        moments = (z1, z1, z1, z1)
    ex = m.bx
    ez = m.bz
    th = m.heading
    thd = 0.0
    vex = 0.0
    vez = 0.0
    aex = 0.0
    aez = 0.0
    for i in range(n):
        ct = math.cos(th)
        st = math.sin(th)
        qdi = qd[i]
        # half-angles of the nodes, (jn + 1/2) q / (2 nq), advanced by rotation
        step = 0.5 * q[i] / nq
        cs_step = math.cos(step)
        sn_step = math.sin(step)
        hc = math.cos(0.5 * step)
        hs = math.sin(0.5 * step)
        for jn in range(nq + 1):
            if jn < nq:
                s = (jn + 0.5) / nq
                f1, f2, f1p, f2p, f1pp, f2pp = _arc_terms_half(s * q[i], hs, hc)
                hc, hs = hc * cs_step - hs * sn_step, hs * cs_step + hc * sn_step
            else:
                s = 1.0
                f1, f2, f1p, f2p, f1pp, f2pp = arc_terms(q[i])
            rx, rz, rpx, rpz, rppx, rppz = _rotate_offset(f1, f2, f1p, f2p, f1pp, f2pp, s, m.L, ct, st)
            rdx = -thd * rz + rpx * qdi
            rdz = thd * rx + rpz * qdi
            for j in range(i):
                J[0, j] = Je[0, j] - rz
                J[1, j] = Je[1, j] + rx
            J[0, i] = rpx
            J[1, i] = rpz
            vx = vex + rdx
            vz = vez + rdz
            ax = aex - thd * rdz + qdi * (-thd * rpz + rppx * qdi)
            az = aez + thd * rdx + qdi * (thd * rpx + rppz * qdi)
            if jn == nq:
                ex += rx
                ez += rz
                vex = vx
                vez = vz
                aex = ax
                aez = az
                for j in range(i + 1):
                    Je[0, j] = J[0, j]
                    Je[1, j] = J[1, j]
                continue
            for a in range(i + 1):
                for b in range(a, i + 1):
                    Mb[a, b] += mass * (J[0, a] * J[0, b] + J[1, a] * J[1, b])
                    Ma[a, b] += m.ma_x * J[0, a] * J[0, b] + m.ma_z * J[1, a] * J[1, b]
                cor[a] += mass * (J[0, a] * ax + J[1, a] * az)
                grav[a] += w_net * J[1, a]
            if hydro:
                px = ex + rx
                pz = ez + rz
                u, v, du, dv = field_at(wf, moments, px, pz, t, want_acc)
                fx, fz = drag_force(th + s * q[i], vx - u, vz - v, m.rho_f, m.area, m.cd, m.cf)
                fx -= m.ma_x * ax
                fz -= m.ma_z * az
                if m.fk > 0.0:
                    fx += m.ma_x * du
                    fz += m.ma_z * dv
                for a in range(i + 1):
                    fe[a] += J[0, a] * fx + J[1, a] * fz
        th += q[i]
        thd += qdi
    for a in range(n):
        for b in range(a):
            Mb[a, b] = Mb[b, a]
            Ma[a, b] = Ma[b, a]
    return Mb, Ma, cor, grav, fe


@njit(cache=True)
def chol_solve(A, b):
    """Solve A x = b for symmetric positive definite A; NaNs if A is not PD."""
    n = A.shape[0]
    Lc = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1):
            acc = A[i, j]
            for k in range(j):
                acc -= Lc[i, k] * Lc[j, k]
            if i == j:
                if not acc > 0.0:
                    return np.full(n, np.nan)
                Lc[i, i] = math.sqrt(acc)
            else:
                Lc[i, j] = acc / Lc[j, j]
    y = np.empty(n)
    for i in range(n):
        acc = b[i]
        for k in range(i):
            acc -= Lc[i, k] * y[k]
        y[i] = acc / Lc[i, i]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        acc = y[i]
        for k in range(i + 1, n):
            acc -= Lc[k, i] * x[k]
        x[i] = acc / Lc[i, i]
    return x


@njit(cache=True)
def forecast_at(fc, t):
    """Linear interpolation of the forecast knots, held flat outside the horizon."""
    K1 = fc.fe.shape[0]
    u = (t - fc.t0) / fc.dt
    if u <= 0.0 or K1 == 1:
        return fc.fe[0].copy()
    if u >= K1 - 1:
        return fc.fe[K1 - 1].copy()
    k = int(math.floor(u))
    a = u - k
    return (1.0 - a) * fc.fe[k] + a * fc.fe[k + 1]


@njit(cache=True)
def feedforward(qbar, m, mask):
    """K(qbar) + G(qbar), zeroed on passive joints."""
    z = np.zeros(m.n)
    _, _, _, grav, _ = assemble(qbar, z, 0.0, m, empty_field_nb(), False)
    return (m.k_stiff * qbar + grav) * mask


@njit(cache=True)
def empty_field_nb():
    z = np.zeros(0)
    return WaveField(z, z, z, z, z, 0.0, -1.0, 0, WaveArrays(z, z, z, z, 1.0, z))


@njit(cache=True)
def applied_torque(y, qbar, ff, alpha, beta, mask, n):
    q = y[:n]
    qd = y[n:]
    return (ff + alpha @ (qbar - q) - beta @ qd) * mask


@njit(cache=True)
def rhs(t, y, args):
    """State derivative of [q, qd] under the feedforward+PD inner loop.

    args = (qbar, ff, alpha, beta, mask, model, wave_field, forecast, use_forecast)
    """
    qbar, ff, alpha, beta, mask, m, w, fc, use_fc = args
    n = m.n
    q = y[:n]
    qd = y[n:]
    Mb, Ma, cor, grav, fe = assemble(q, qd, t, m, w, not use_fc)
    if use_fc:
        fe = forecast_at(fc, t)
    f = np.empty(n)
    for i in range(n):
        tau = ff[i]
        for j in range(n):
            tau += alpha[i, j] * (qbar[j] - q[j]) - beta[i, j] * qd[j]
        f[i] = tau * mask[i] + fe[i] - cor[i] - m.d_damp[i] * qd[i] - m.k_stiff[i] * q[i] - grav[i]
        for j in range(n):
            Mb[i, j] += Ma[i, j]
    qdd = chol_solve(Mb, f)
    out = np.empty(2 * n)
    out[:n] = qd
    out[n:] = qdd
    return out


# Dormand-Prince 5(4) tableau
C2, C3, C4, C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = (
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
)
B1, B3, B4, B5, B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
E1, E3, E4, E5, E6, E7 = (
    71.0 / 57600.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
)


@njit(cache=True)
def _comb(y, h, c, ks, nk, out):
    # out = y + h * sum_i c[i] ks[i] over the first nk stages
    for j in range(y.shape[0]):
        acc = 0.0
        for i in range(nk):
            acc += c[i] * ks[i, j]
        out[j] = y[j] + h * acc


_A2 = np.array([A21])
_A3 = np.array([A31, A32])
_A4 = np.array([A41, A42, A43])
_A5 = np.array([A51, A52, A53, A54])
_A6 = np.array([A61, A62, A63, A64, A65])
_B = np.array([B1, 0.0, B3, B4, B5, B6])
_E = np.array([E1, 0.0, E3, E4, E5, E6, E7])


@njit(cache=True)
def dp_step(t, y, k1, h, args):
    n2 = y.shape[0]
    ks = np.empty((7, n2))
    ks[0] = k1
    yt = np.empty(n2)
    _comb(y, h, _A2, ks, 1, yt)
    ks[1] = rhs(t + C2 * h, yt, args)
    _comb(y, h, _A3, ks, 2, yt)
    ks[2] = rhs(t + C3 * h, yt, args)
    _comb(y, h, _A4, ks, 3, yt)
    ks[3] = rhs(t + C4 * h, yt, args)
    _comb(y, h, _A5, ks, 4, yt)
    ks[4] = rhs(t + C5 * h, yt, args)
    _comb(y, h, _A6, ks, 5, yt)
    ks[5] = rhs(t + h, yt, args)
    ynew = np.empty(n2)
    _comb(y, h, _B, ks, 6, ynew)
    k7 = rhs(t + h, ynew, args)
    ks[6] = k7
    err = np.empty(n2)
    _comb(np.zeros(n2), h, _E, ks, 7, err)
    return ynew, k7, err


@njit(cache=True)
def _initial_step(t, y, f0, rtol, atol, args):
    # Hairer, Norsett & Wanner starting-step heuristic
    sc = atol + rtol * np.abs(y)
    d0 = math.sqrt(np.mean((y / sc) ** 2))
    d1 = math.sqrt(np.mean((f0 / sc) ** 2))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    f1 = rhs(t + h0, y + h0 * f0, args)
    d2 = math.sqrt(np.mean(((f1 - f0) / sc) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100.0 * h0, h1)


@njit(cache=True)
def integrate(t0, t1, y0, h, rtol, atol, hmin, hmax, max_steps, args, steps_out):
    """Adaptive Dormand-Prince from t0 to t1.

    Steps never exceed ``hmax``. Accepted step sizes are written to
    steps_out while it has room.
    Returns (y, h_next, n_accepted, status).
    """
    t = t0
    y = y0.copy()
    k1 = rhs(t, y, args)
    if not h > 0.0:
        h = _initial_step(t, y, k1, rtol, atol, args)
    h = min(h, hmax)
    nacc = 0
    ntry = 0
    rejected = False
    status = OK
    span = t1 - t0
    while t1 - t > 1e-12 * max(1.0, abs(span)):
        remaining = t1 - t
        final = h >= remaining
        hh = remaining if final else h
        ynew, k7, err = dp_step(t, y, k1, hh, args)
        sc = atol + rtol * np.maximum(np.abs(y), np.abs(ynew))
        en = math.sqrt(np.mean((err / sc) ** 2))
        ntry += 1
        if en <= 1.0:
            t = t1 if final else t + hh
            y = ynew
            k1 = k7
            if nacc < steps_out.shape[0]:
                steps_out[nacc] = hh
            nacc += 1
            fac = 10.0 if en == 0.0 else min(10.0, max(0.2, 0.9 * en ** -0.2))
            if rejected:
                fac = min(fac, 1.0)
            hnew = min(hh * fac, hmax)
            h = max(h, hnew) if final else hnew
            rejected = False
        else:
            if en == en:
                h = hh * max(0.2, 0.9 * en ** -0.2)
            else:
                h = 0.25 * hh
            rejected = True
            if h < hmin:
                status = STEP_TOO_SMALL
                break
        if ntry >= max_steps:
            status = TOO_MANY_STEPS
            break
    return y, h, nacc, status


@njit(cache=True)
def replay(t0, y0, steps, nsteps, args):
    """Re-run an accepted step sequence without error control."""
    t = t0
    y = y0.copy()
    for i in range(nsteps):
        h = steps[i]
        k1 = rhs(t, y, args)
        y, _, _ = dp_step(t, y, k1, h, args)
        t += h
    return y


@njit(cache=True)
def _quad2(Q, ex, ez):
    return Q[0, 0] * ex * ex + (Q[0, 1] + Q[1, 0]) * ex * ez + Q[1, 1] * ez * ez


@njit(cache=True)
def mpc_rollout(
    y0, t0, dt, qbars, qprev, Q, R, xref, m, alpha, beta, mask, fc,
    rtol, atol, hmin, hmax, max_steps, h0, steps, nsteps, ystates, track,
):
    """Predicted cost of a command sequence.

    Tracking terms use the states reached after each command (knots 1..K);
    increment terms use qbar_k - qbar_{k-1} with qbar_{-1} = qprev.
    """
    K = qbars.shape[0]
    n = m.n
    w = empty_field_nb()
    y = y0.copy()
    ystates[0, :] = y
    h = h0
    cost = 0.0
    for k in range(K):
        ff = feedforward(qbars[k], m, mask)
        args = (qbars[k], ff, alpha, beta, mask, m, w, fc, True)
        y, h, nacc, st = integrate(
            t0 + k * dt, t0 + (k + 1) * dt, y, h, rtol, atol, hmin, hmax, max_steps, args, steps[k]
        )
        if st != OK or nacc > steps.shape[1]:
            return np.inf, max(st, TOO_MANY_STEPS)
        nsteps[k] = nacc
        ystates[k + 1, :] = y
        px, pz = tip_position(y[:n], m)
        track[k] = _quad2(Q, px - xref[k, 0], pz - xref[k, 1])
        dq = qbars[k] - (qprev if k == 0 else qbars[k - 1])
        cost += track[k] + dq @ (R @ dq)
    return cost, OK


@njit(cache=True)
def mpc_linearize(t0, dt, qbars, m, alpha, beta, mask, fc, steps, nsteps, ystates, hfd, todo):
    """Finite-difference linearization of the horizon intervals flagged in ``todo``.

    Returns (A, B, C): A[k] = dy_{k+1}/dy_k, B[k] = dy_{k+1}/dqbar_k and
    C[k] = d(tip)/dq at knot k. Perturbed intervals replay the nominal step
    sizes so the difference quotients are free of step-size adaptation.
    A and B stay zero for intervals that are not flagged.
    """
    K = qbars.shape[0]
    n = m.n
    n2 = 2 * n
    w = empty_field_nb()
    ones = np.ones(n)
    A = np.zeros((K, n2, n2))
    B = np.zeros((K, n2, n))
    C = np.zeros((K + 1, 2, n))
    zero = np.zeros(n)
    for k in range(K + 1):
        _, _, _, Jt, _ = point_kinematics(ystates[k, :n], zero, n - 1, 1.0, m.L, m.bx, m.bz, m.heading)
        C[k] = Jt
    for k in range(K):
        if not todo[k]:
            continue
        ta = t0 + k * dt
        ff = feedforward(qbars[k], m, mask)
        args = (qbars[k], ff, alpha, beta, mask, m, w, fc, True)
        y1 = replay(ta, ystates[k], steps[k], nsteps[k], args)
        for i in range(n2):
            yp = ystates[k].copy()
            yp[i] += hfd
            A[k, :, i] = (replay(ta, yp, steps[k], nsteps[k], args) - y1) / hfd
        # commands act through the constant torque offset K qbar + G(qbar) + alpha qbar
        Bc = np.zeros((n2, n))
        for j in range(n):
            if mask[j] == 0.0:
                continue
            ffp = ff.copy()
            ffp[j] += hfd
            argp = (qbars[k], ffp, alpha, beta, mask, m, w, fc, True)
            Bc[:, j] = (replay(ta, ystates[k], steps[k], nsteps[k], argp) - y1) / hfd
        dc = alpha.copy()
        for j in range(n):
            qp = qbars[k].copy()
            qm = qbars[k].copy()
            qp[j] += 1e-6
            qm[j] -= 1e-6
            dc[:, j] += (feedforward(qp, m, ones) - feedforward(qm, m, ones)) / 2e-6
        B[k] = Bc @ dc
    return A, B, C


@njit(cache=True)
def loads_at(states, t0, dt, m, wf):
    """F_E at each row of ``states``, row k taken at time t0 + k dt."""
    n = m.n
    out = np.zeros((states.shape[0], n))
    for k in range(states.shape[0]):
        _, _, _, _, fe = assemble(states[k, :n], states[k, n:], t0 + k * dt, m, wf, True)
        out[k] = fe
    return out


@njit(cache=True)
def hydro_rollout(y0, t0, dt, qbars, m, alpha, beta, mask, wf, rtol, atol, hmin, hmax, max_steps, h0):
    """Roll a plan forward under a wave field and return the disturbance at each knot."""
    K = qbars.shape[0]
    n = m.n
    fe_knots = np.zeros((K + 1, n))
    states = np.zeros((K + 1, 2 * n))
    y = y0.copy()
    fc = Forecast(0.0, 1.0, np.zeros((1, n)))
    scratch = np.empty(max_steps)
    h = h0
    status = OK
    states[0] = y
    _, _, _, _, fe = assemble(y[:n], y[n:], t0, m, wf, True)
    fe_knots[0] = fe
    for k in range(K):
        ff = feedforward(qbars[k], m, mask)
        args = (qbars[k], ff, alpha, beta, mask, m, wf, fc, False)
        y, h, _, st = integrate(
            t0 + k * dt, t0 + (k + 1) * dt, y, h, rtol, atol, hmin, hmax, max_steps, args, scratch
        )
        if st != OK:
            status = st
            for kk in range(k + 1, K + 1):
                fe_knots[kk] = fe_knots[k]
                states[kk] = states[k]
            break
        states[k + 1] = y
        _, _, _, _, fe = assemble(y[:n], y[n:], t0 + (k + 1) * dt, m, wf, True)
        fe_knots[k + 1] = fe
    return fe_knots, states, status
