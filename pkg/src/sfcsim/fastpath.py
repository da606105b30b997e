"""Fused scalar-arithmetic integrator for the episode hot loop.

Python-level numpy calls dominate the cost of the block integrators in
``dynamics`` at the fine endgame timestep (hundreds of substeps per
navigation step on a single core).  ``advance`` below replays exactly the
same composition as ``dynamics.step_missile`` plus ``dynamics.target_step``
using plain floats, about ten times faster.  Property tests pin both paths
together to ~1e-12; any semantic change must be made in both places.

State tuples:

    missile: (rx,ry,rz, vx,vy,vz, qw,qx,qy,qz, wx,wy,wz, m,
              fx,fy,fz, lx,ly,lz, tmag, m_prev)
    target:  (tx,ty,tz, tvx,tvy,tvz)

``cmd`` holds the commanded wrench about the centroid plus the commanded
total thrust magnitude; the torque is re-referenced to the instantaneous
center of mass each substep.  ``man`` encodes the target maneuver
(0 none, 1 bang-bang, 2 vertical-S).  ``grav`` encodes the gravity field
(0 off, 1 uniform, 2 point-mass).
"""

from __future__ import annotations

import math

from . import dynamics

_JCX, _JCY, _JCZ = dynamics._J_COEF
_WET = dynamics.WET_MASS_KG
_DRY = dynamics.DRY_MASS_KG
_FUEL = dynamics.FUEL_CAPACITY_KG
_GREF = dynamics.G_REF


def pack_missile(s) -> tuple:
    return (s.r[0], s.r[1], s.r[2], s.v[0], s.v[1], s.v[2],
            s.q[0], s.q[1], s.q[2], s.q[3],
            s.omega[0], s.omega[1], s.omega[2], s.m,
            s.F_B[0], s.F_B[1], s.F_B[2], s.L_B[0], s.L_B[1], s.L_B[2],
            s.thrust_mag, s.m_prev)


def unpack_missile(t, r_com_full) -> "dynamics.MissileState":
    import numpy as np
    return dynamics.MissileState(
        r=np.array(t[0:3]), v=np.array(t[3:6]), q=np.array(t[6:10]),
        omega=np.array(t[10:13]), m=t[13], F_B=np.array(t[14:17]),
        L_B=np.array(t[17:20]), thrust_mag=t[20],
        r_com_full=np.asarray(r_com_full, dtype=float), m_prev=t[21])


def pack_target(s) -> tuple:
    return (s.r[0], s.r[1], s.r[2], s.v[0], s.v[1], s.v[2])


def unpack_target(t) -> "dynamics.TargetState":
    import numpy as np
    return dynamics.TargetState(r=np.array(t[0:3]), v=np.array(t[3:6]))


def pack_gravity(g: "dynamics.GravityModel") -> tuple:
    if g.mode == "off":
        return (0, 0.0, 0.0, 0.0, 0.0)
    if g.mode == "uniform":
        u = g.g_uniform
        return (1, u[0], u[1], u[2], 0.0)
    c = g.center
    return (2, c[0], c[1], c[2], g.mu)


def maneuver_accel(man: tuple, t: float, tvx: float, tvy: float, tvz: float):
    """Commanded target acceleration, orthogonal to the current velocity.

    The episode's fixed lateral direction is projected onto the plane normal
    to the velocity and rescaled, so the command magnitude is exact and the
    orthogonality invariant holds at every evaluation.
    """
    kind = man[0]
    if kind == 0 or t < man[2]:
        return 0.0, 0.0, 0.0
    amp = man[1]
    if kind == 1:
        phase = (t - man[2]) / man[3]
        level = amp if (int(phase) % 2 == 0) else -amp
    else:
        level = amp * math.sin(2.0 * math.pi * (t - man[2]) / man[3])
    dx, dy, dz = man[4], man[5], man[6]
    vn = math.sqrt(tvx * tvx + tvy * tvy + tvz * tvz)
    if vn == 0.0:
        return level * dx, level * dy, level * dz
    ux, uy, uz = tvx / vn, tvy / vn, tvz / vn
    dot = dx * ux + dy * uy + dz * uz
    px, py, pz = dx - dot * ux, dy - dot * uy, dz - dot * uz
    pn = math.sqrt(px * px + py * py + pz * pz)
    if pn < 1e-12:
        return 0.0, 0.0, 0.0
    return level * px / pn, level * py / pn, level * pz / pn


def advance(ms: tuple, ts: tuple, cmd: tuple, man: tuple, grav: tuple,
            i_sp: float, tau_u: float, com_full: tuple, dt: float,
            n_sub: int, t_abs: float, detect_closure: bool,
            d2_seed: tuple = (None, None)):
    """Advance missile and target by up to ``n_sub`` substeps of ``dt``.

    With ``detect_closure`` the separation is sampled each substep; once the
    squared range passes through a bracketed minimum the loop stops and the
    miss distance is refined by quadratic interpolation of the three
    bracketing samples (exact for uniform relative motion).  ``d2_seed``
    carries the last two squared-range samples from the previous call so a
    minimum falling on a call boundary is still bracketed.

    Returns (missile', target', steps_taken, closed, miss_m, d2_tail).
    """
    (rx, ry, rz, vx, vy, vz, qw, qx, qy, qz, wx, wy, wz, m,
     fx, fy, fz, lx, ly, lz, tmag, m_prev) = ms
    tx, ty, tz, tvx, tvy, tvz = ts
    cfx, cfy, cfz, c0x, c0y, c0z, cmag = cmd
    gmode = grav[0]
    gp0, gp1, gp2, gmu = grav[1], grav[2], grav[3], grav[4]
    comx, comy, comz = com_full

    # RK4 of a first-order lag is its stability polynomial in dt/tau
    a = dt / tau_u
    r4 = 1.0 - a + a * a / 2.0 - a * a * a / 6.0 + a * a * a * a / 24.0

    d2_pp, d2_p = d2_seed
    closed = False
    miss = -1.0
    steps = 0

    for k in range(n_sub):
        t_now = t_abs + k * dt

        if m <= _DRY:
            # fuel exhausted: engine dead, commands ignored from here on
            fx = fy = fz = lx = ly = lz = tmag = 0.0
            cfx = cfy = cfz = c0x = c0y = c0z = cmag = 0.0

        # instantaneous center of mass and commanded torque about it
        scale = (_WET - m) / _FUEL
        rcx, rcy, rcz = comx * scale, comy * scale, comz * scale
        clx = c0x - (rcy * cfz - rcz * cfy)
        cly = c0y - (rcz * cfx - rcx * cfz)
        clz = c0z - (rcx * cfy - rcy * cfx)

        # coupled attitude + rotational velocity RK4, diagonal J:
        # dq/dt = 0.5 q (0, w);  J dw/dt = -w x (J w) - Jdot w + L
        jx, jy, jz = m * _JCX, m * _JCY, m * _JCZ
        jdx = _JCX * (m - m_prev) / dt
        jdy = _JCY * (m - m_prev) / dt
        jdz = _JCZ * (m - m_prev) / dt

        def rotdot(a0, a1, a2, a3, ax, ay, az):
            return (0.5 * (-a1 * ax - a2 * ay - a3 * az),
                    0.5 * (a0 * ax + a2 * az - a3 * ay),
                    0.5 * (a0 * ay - a1 * az + a3 * ax),
                    0.5 * (a0 * az + a1 * ay - a2 * ax),
                    (-(ay * jz * az - az * jy * ay) - jdx * ax + lx) / jx,
                    (-(az * jx * ax - ax * jz * az) - jdy * ay + ly) / jy,
                    (-(ax * jy * ay - ay * jx * ax) - jdz * az + lz) / jz)

        k1 = rotdot(qw, qx, qy, qz, wx, wy, wz)
        h = 0.5 * dt
        k2 = rotdot(qw + h * k1[0], qx + h * k1[1], qy + h * k1[2],
                    qz + h * k1[3], wx + h * k1[4], wy + h * k1[5],
                    wz + h * k1[6])
        k3 = rotdot(qw + h * k2[0], qx + h * k2[1], qy + h * k2[2],
                    qz + h * k2[3], wx + h * k2[4], wy + h * k2[5],
                    wz + h * k2[6])
        k4 = rotdot(qw + dt * k3[0], qx + dt * k3[1], qy + dt * k3[2],
                    qz + dt * k3[3], wx + dt * k3[4], wy + dt * k3[5],
                    wz + dt * k3[6])
        qw2 = qw + (dt / 6.0) * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        qx2 = qx + (dt / 6.0) * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        qy2 = qy + (dt / 6.0) * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
        qz2 = qz + (dt / 6.0) * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3])
        wx2 = wx + (dt / 6.0) * (k1[4] + 2.0 * k2[4] + 2.0 * k3[4] + k4[4])
        wy2 = wy + (dt / 6.0) * (k1[5] + 2.0 * k2[5] + 2.0 * k3[5] + k4[5])
        wz2 = wz + (dt / 6.0) * (k1[6] + 2.0 * k2[6] + 2.0 * k3[6] + k4[6])
        qn = math.sqrt(qw2 * qw2 + qx2 * qx2 + qy2 * qy2 + qz2 * qz2)
        qw2, qx2, qy2, qz2 = qw2 / qn, qx2 / qn, qy2 / qn, qz2 / qn

        # translation: lagged body force rotated with substep-start attitude
        fnx = ((1 - 2 * (qy * qy + qz * qz)) * fx
               + 2 * (qx * qy - qw * qz) * fy + 2 * (qx * qz + qw * qy) * fz)
        fny = (2 * (qx * qy + qw * qz) * fx
               + (1 - 2 * (qx * qx + qz * qz)) * fy
               + 2 * (qy * qz - qw * qx) * fz)
        fnz = (2 * (qx * qz - qw * qy) * fx + 2 * (qy * qz + qw * qx) * fy
               + (1 - 2 * (qx * qx + qy * qy)) * fz)
        mdot = -tmag / (i_sp * _GREF)

        def grav_at(px, py, pz):
            if gmode == 0:
                return 0.0, 0.0, 0.0
            if gmode == 1:
                return gp0, gp1, gp2
            dx, dy, dz = px - gp0, py - gp1, pz - gp2
            dn = math.sqrt(dx * dx + dy * dy + dz * dz)
            s = -gmu / (dn * dn * dn)
            return s * dx, s * dy, s * dz

        def tdot(px, py, pz, ux, uy, uz, mm):
            gx, gy, gz = grav_at(px, py, pz)
            return (ux, uy, uz,
                    fnx / mm + gx, fny / mm + gy, fnz / mm + gz, mdot)

        s1 = tdot(rx, ry, rz, vx, vy, vz, m)
        s2 = tdot(rx + 0.5 * dt * s1[0], ry + 0.5 * dt * s1[1],
                  rz + 0.5 * dt * s1[2], vx + 0.5 * dt * s1[3],
                  vy + 0.5 * dt * s1[4], vz + 0.5 * dt * s1[5],
                  m + 0.5 * dt * s1[6])
        s3 = tdot(rx + 0.5 * dt * s2[0], ry + 0.5 * dt * s2[1],
                  rz + 0.5 * dt * s2[2], vx + 0.5 * dt * s2[3],
                  vy + 0.5 * dt * s2[4], vz + 0.5 * dt * s2[5],
                  m + 0.5 * dt * s2[6])
        s4 = tdot(rx + dt * s3[0], ry + dt * s3[1], rz + dt * s3[2],
                  vx + dt * s3[3], vy + dt * s3[4], vz + dt * s3[5],
                  m + dt * s3[6])
        rx2 = rx + (dt / 6.0) * (s1[0] + 2.0 * s2[0] + 2.0 * s3[0] + s4[0])
        ry2 = ry + (dt / 6.0) * (s1[1] + 2.0 * s2[1] + 2.0 * s3[1] + s4[1])
        rz2 = rz + (dt / 6.0) * (s1[2] + 2.0 * s2[2] + 2.0 * s3[2] + s4[2])
        vx2 = vx + (dt / 6.0) * (s1[3] + 2.0 * s2[3] + 2.0 * s3[3] + s4[3])
        vy2 = vy + (dt / 6.0) * (s1[4] + 2.0 * s2[4] + 2.0 * s3[4] + s4[4])
        vz2 = vz + (dt / 6.0) * (s1[5] + 2.0 * s2[5] + 2.0 * s3[5] + s4[5])
        m2 = m + (dt / 6.0) * (s1[6] + 2.0 * s2[6] + 2.0 * s3[6] + s4[6])

        # target: commanded maneuver evaluated at substep start
        acx, acy, acz = maneuver_accel(man, t_now, tvx, tvy, tvz)

        def udot(px, py, pz, ux, uy, uz):
            gx, gy, gz = grav_at(px, py, pz)
            return ux, uy, uz, acx + gx, acy + gy, acz + gz

        u1 = udot(tx, ty, tz, tvx, tvy, tvz)
        u2 = udot(tx + 0.5 * dt * u1[0], ty + 0.5 * dt * u1[1],
                  tz + 0.5 * dt * u1[2], tvx + 0.5 * dt * u1[3],
                  tvy + 0.5 * dt * u1[4], tvz + 0.5 * dt * u1[5])
        u3 = udot(tx + 0.5 * dt * u2[0], ty + 0.5 * dt * u2[1],
                  tz + 0.5 * dt * u2[2], tvx + 0.5 * dt * u2[3],
                  tvy + 0.5 * dt * u2[4], tvz + 0.5 * dt * u2[5])
        u4 = udot(tx + dt * u3[0], ty + dt * u3[1], tz + dt * u3[2],
                  tvx + dt * u3[3], tvy + dt * u3[4], tvz + dt * u3[5])
        tx2 = tx + (dt / 6.0) * (u1[0] + 2.0 * u2[0] + 2.0 * u3[0] + u4[0])
        ty2 = ty + (dt / 6.0) * (u1[1] + 2.0 * u2[1] + 2.0 * u3[1] + u4[1])
        tz2 = tz + (dt / 6.0) * (u1[2] + 2.0 * u2[2] + 2.0 * u3[2] + u4[2])
        tvx2 = tvx + (dt / 6.0) * (u1[3] + 2.0 * u2[3] + 2.0 * u3[3] + u4[3])
        tvy2 = tvy + (dt / 6.0) * (u1[4] + 2.0 * u2[4] + 2.0 * u3[4] + u4[4])
        tvz2 = tvz + (dt / 6.0) * (u1[5] + 2.0 * u2[5] + 2.0 * u3[5] + u4[5])

        # lag states move toward the command last
        fx = cfx + (fx - cfx) * r4
        fy = cfy + (fy - cfy) * r4
        fz = cfz + (fz - cfz) * r4
        lx = clx + (lx - clx) * r4
        ly = cly + (ly - cly) * r4
        lz = clz + (lz - clz) * r4
        tmag = cmag + (tmag - cmag) * r4

        m_prev = m
        rx, ry, rz, vx, vy, vz = rx2, ry2, rz2, vx2, vy2, vz2
        qw, qx, qy, qz = qw2, qx2, qy2, qz2
        wx, wy, wz, m = wx2, wy2, wz2, m2
        tx, ty, tz, tvx, tvy, tvz = tx2, ty2, tz2, tvx2, tvy2, tvz2
        steps = k + 1

        if detect_closure:
            dx, dy, dz = tx - rx, ty - ry, tz - rz
            d2 = dx * dx + dy * dy + dz * dz
            if d2_p is not None and d2_pp is not None:
                if d2 > d2_p and d2_p <= d2_pp:
                    denom = d2_pp - 2.0 * d2_p + d2
                    if denom > 0.0:
                        vmin = d2_p - (d2_pp - d2) ** 2 / (8.0 * denom)
                    else:
                        vmin = d2_p
                    miss = math.sqrt(max(0.0, vmin))
                    closed = True
                    break
            d2_pp, d2_p = d2_p, d2

    ms2 = (rx, ry, rz, vx, vy, vz, qw, qx, qy, qz, wx, wy, wz, m,
           fx, fy, fz, lx, ly, lz, tmag, m_prev)
    ts2 = (tx, ty, tz, tvx, tvy, tvz)
    return ms2, ts2, steps, closed, miss, (d2_pp, d2_p)
