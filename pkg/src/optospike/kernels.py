"""Numba-compiled right-hand sides, Jacobians and RK4 engines.

Everything here works on packed float64 arrays so the hot loops stay inside
compiled code.  The Python-facing API lives in ``neurons``, ``chr2`` and
``integrate``; nothing in this module validates its inputs.

Model ids:   0=FHN  1=ML  2=HH  3=HH2D  4=LIN (affine test system)
Channel ids: 0=none 1=ChR2-3  2=ChR2-4  3=reduced (open fraction as input)
             4=external current
"""

import math

import numpy as np
from numba import njit

FHN, ML, HH, HH2D, LIN = 0, 1, 2, 3, 4
CH_NONE, CH_3, CH_4, CH_RED, CH_IEXT = 0, 1, 2, 3, 4

# extra state coordinates appended by each channel kind
CHANNEL_DIM = (0, 2, 3, 0, 0)

# statuses returned by the integration engines
OK, HIT, DIVERGED = 0, 1, 2


@njit(cache=True)
def _expratio(u):
    # u / (e^u - 1), series near the removable singularity at u = 0
    if abs(u) < 1e-6:
        return 1.0 - 0.5 * u + u * u / 12.0
    return u / math.expm1(u)


@njit(cache=True)
def _expratio_d(u):
    # d/du of u/(e^u - 1)
    if abs(u) < 1e-6:
        return -0.5 + u / 6.0
    em = math.expm1(u)
    return (em - u * (em + 1.0)) / (em * em)


@njit(cache=True)
def hh_rates(v):
    """alpha/beta for the n, m, h gates at potential v (1/ms)."""
    an = 0.1 * _expratio(1.0 - 0.1 * v)
    bn = 0.125 * math.exp(-v / 80.0)
    am = _expratio(2.5 - 0.1 * v)
    bm = 4.0 * math.exp(-v / 18.0)
    ah = 0.07 * math.exp(-v / 20.0)
    bh = 1.0 / (math.exp(3.0 - 0.1 * v) + 1.0)
    return an, bn, am, bm, ah, bh


@njit(cache=True)
def hh_rates_d(v):
    """d/dv of the six HH rate functions."""
    dan = -0.01 * _expratio_d(1.0 - 0.1 * v)
    dbn = -0.125 / 80.0 * math.exp(-v / 80.0)
    dam = -0.1 * _expratio_d(2.5 - 0.1 * v)
    dbm = -4.0 / 18.0 * math.exp(-v / 18.0)
    dah = -0.07 / 20.0 * math.exp(-v / 20.0)
    e = math.exp(3.0 - 0.1 * v)
    dbh = 0.1 * e / ((e + 1.0) * (e + 1.0))
    return dan, dbn, dam, dbm, dah, dbh


@njit(cache=True)
def ml_rates(v, v3, v4, phi):
    """Morris-Lecar recovery gate opening/closing rates."""
    ch = math.cosh((v - v3) / (2.0 * v4))
    th = math.tanh((v - v3) / v4)
    a = 0.5 * phi * ch * (1.0 + th)
    b = 0.5 * phi * ch * (1.0 - th)
    return a, b


@njit(cache=True)
def ml_rates_d(v, v3, v4, phi):
    """d/dv of the Morris-Lecar rates."""
    s = v - v3
    ch = math.cosh(s / (2.0 * v4))
    sh = math.sinh(s / (2.0 * v4))
    th = math.tanh(s / v4)
    sech2 = 1.0 - th * th
    da = 0.5 * phi * (sh / (2.0 * v4) * (1.0 + th) + ch * sech2 / v4)
    db = 0.5 * phi * (sh / (2.0 * v4) * (1.0 - th) - ch * sech2 / v4)
    return da, db


@njit(cache=True)
def neuron_dim(mid, mp):
    if mid == FHN:
        return 2
    if mid == ML:
        return 2
    if mid == HH:
        return 4
    if mid == HH2D:
        return 2
    return int(mp[0])


@njit(cache=True)
def capacitance(mid, mp):
    if mid == FHN:
        return mp[3]
    if mid == ML:
        return mp[10]
    if mid == HH or mid == HH2D:
        return mp[6]
    return 1.0


@njit(cache=True)
def neuron_drift(mid, mp, x, out):
    """Uncontrolled vector field of the neuron block, written into out."""
    if mid == FHN:
        a, b, c = mp[0], mp[1], mp[2]
        v, w = x[0], x[1]
        out[0] = v - v * v * v / 3.0 - w
        out[1] = c * (v + a - b * w)
    elif mid == ML:
        v1, v2, v3, v4 = mp[0], mp[1], mp[2], mp[3]
        gca, gk, gl = mp[4], mp[5], mp[6]
        vca, vk, vl = mp[7], mp[8], mp[9]
        cm, phi = mp[10], mp[11]
        v, w = x[0], x[1]
        minf = 0.5 * (1.0 + math.tanh((v - v1) / v2))
        al, be = ml_rates(v, v3, v4, phi)
        out[0] = (gk * w * (vk - v) + gca * minf * (vca - v) + gl * (vl - v)) / cm
        out[1] = al * (1.0 - w) - be * w
    elif mid == HH:
        gk, gna, gl = mp[0], mp[1], mp[2]
        ek, ena, el, cm = mp[3], mp[4], mp[5], mp[6]
        v, n, m, h = x[0], x[1], x[2], x[3]
        an, bn, am, bm, ah, bh = hh_rates(v)
        n4 = n * n * n * n
        m3 = m * m * m
        out[0] = (gk * n4 * (ek - v) + gna * m3 * h * (ena - v) + gl * (el - v)) / cm
        out[1] = an * (1.0 - n) - bn * n
        out[2] = am * (1.0 - m) - bm * m
        out[3] = ah * (1.0 - h) - bh * h
    elif mid == HH2D:
        gk, gna, gl = mp[0], mp[1], mp[2]
        ek, ena, el, cm = mp[3], mp[4], mp[5], mp[6]
        ah_, bh_ = mp[7], mp[8]
        v, n = x[0], x[1]
        an, bn, am, bm, _, _ = hh_rates(v)
        minf = am / (am + bm)
        n4 = n * n * n * n
        out[0] = (gk * n4 * (ek - v)
                  + gna * minf * minf * minf * (ah_ + bh_ * n) * (ena - v)
                  + gl * (el - v)) / cm
        out[1] = an * (1.0 - n) - bn * n
    else:  # LIN: dx = A x + b
        n = int(mp[0])
        for i in range(n):
            acc = mp[1 + n * n + i]
            for j in range(n):
                acc += mp[1 + i * n + j] * x[j]
            out[i] = acc


@njit(cache=True)
def neuron_jac(mid, mp, x, jac):
    """Jacobian of neuron_drift, written into the leading block of jac."""
    if mid == FHN:
        b, c = mp[1], mp[2]
        v = x[0]
        jac[0, 0] = 1.0 - v * v
        jac[0, 1] = -1.0
        jac[1, 0] = c
        jac[1, 1] = -b * c
    elif mid == ML:
        v1, v2, v3, v4 = mp[0], mp[1], mp[2], mp[3]
        gca, gk, gl = mp[4], mp[5], mp[6]
        vca, vk = mp[7], mp[8]
        cm, phi = mp[10], mp[11]
        v, w = x[0], x[1]
        th1 = math.tanh((v - v1) / v2)
        minf = 0.5 * (1.0 + th1)
        dminf = 0.5 * (1.0 - th1 * th1) / v2
        al, be = ml_rates(v, v3, v4, phi)
        dal, dbe = ml_rates_d(v, v3, v4, phi)
        jac[0, 0] = (-gk * w - gca * minf + gca * dminf * (vca - v) - gl) / cm
        jac[0, 1] = gk * (vk - v) / cm
        jac[1, 0] = dal * (1.0 - w) - dbe * w
        jac[1, 1] = -(al + be)
    elif mid == HH:
        gk, gna, gl = mp[0], mp[1], mp[2]
        ek, ena = mp[3], mp[4]
        cm = mp[6]
        v, n, m, h = x[0], x[1], x[2], x[3]
        an, bn, am, bm, ah, bh = hh_rates(v)
        dan, dbn, dam, dbm, dah, dbh = hh_rates_d(v)
        n3 = n * n * n
        n4 = n3 * n
        m2 = m * m
        m3 = m2 * m
        jac[0, 0] = (-gk * n4 - gna * m3 * h - gl) / cm
        jac[0, 1] = 4.0 * gk * n3 * (ek - v) / cm
        jac[0, 2] = 3.0 * gna * m2 * h * (ena - v) / cm
        jac[0, 3] = gna * m3 * (ena - v) / cm
        jac[1, 0] = dan * (1.0 - n) - dbn * n
        jac[1, 1] = -(an + bn)
        jac[2, 0] = dam * (1.0 - m) - dbm * m
        jac[2, 2] = -(am + bm)
        jac[3, 0] = dah * (1.0 - h) - dbh * h
        jac[3, 3] = -(ah + bh)
    elif mid == HH2D:
        gk, gna, gl = mp[0], mp[1], mp[2]
        ek, ena = mp[3], mp[4]
        cm = mp[6]
        a_h, b_h = mp[7], mp[8]
        v, n = x[0], x[1]
        an, bn, am, bm, _, _ = hh_rates(v)
        dan, dbn, dam, dbm, _, _ = hh_rates_d(v)
        minf = am / (am + bm)
        dminf = (dam * bm - am * dbm) / ((am + bm) * (am + bm))
        n3 = n * n * n
        n4 = n3 * n
        m3 = minf * minf * minf
        hn = a_h + b_h * n
        jac[0, 0] = (-gk * n4
                     + gna * hn * (3.0 * minf * minf * dminf * (ena - v) - m3)
                     - gl) / cm
        jac[0, 1] = (4.0 * gk * n3 * (ek - v) + gna * m3 * b_h * (ena - v)) / cm
        jac[1, 0] = dan * (1.0 - n) - dbn * n
        jac[1, 1] = -(an + bn)
    else:  # LIN
        n = int(mp[0])
        for i in range(n):
            for j in range(n):
                jac[i, j] = mp[1 + i * n + j]


@njit(cache=True)
def field(mid, cid, mp, cp, x, u, out):
    """Full controlled vector field F0(x) + u F1(x), written into out."""
    nd = neuron_dim(mid, mp)
    neuron_drift(mid, mp, x, out)
    cm = capacitance(mid, mp)
    if cid == CH_3:
        kd, kr, g, vr = cp[0], cp[1], cp[2], cp[3]
        o, d = x[nd], x[nd + 1]
        out[0] += g * o * (vr - x[0]) / cm
        out[nd] = u * (1.0 - o - d) - kd * o
        out[nd + 1] = kd * o - kr * d
    elif cid == CH_4:
        kd1, kd2, e12, e21, kr = cp[0], cp[1], cp[2], cp[3], cp[4]
        e1, e2, rho, g, vr = cp[5], cp[6], cp[7], cp[8], cp[9]
        o1, o2, c2 = x[nd], x[nd + 1], x[nd + 2]
        out[0] += g * (o1 + rho * o2) * (vr - x[0]) / cm
        out[nd] = e1 * u * (1.0 - o1 - o2 - c2) - (kd1 + e12) * o1 + e21 * o2
        out[nd + 1] = e2 * u * c2 + e12 * o1 - (kd2 + e21) * o2
        out[nd + 2] = kd2 * o2 - (e2 * u + kr) * c2
    elif cid == CH_RED:
        g, vr = cp[0], cp[1]
        out[0] += u * g * (vr - x[0]) / cm
    elif cid == CH_IEXT:
        out[0] += u / cm


@njit(cache=True)
def control_field(mid, cid, mp, cp, x, out):
    """Input vector field F1(x) (the coefficient of u), written into out."""
    nd = neuron_dim(mid, mp)
    for i in range(out.shape[0]):
        out[i] = 0.0
    if cid == CH_3:
        o, d = x[nd], x[nd + 1]
        out[nd] = 1.0 - o - d
    elif cid == CH_4:
        e1, e2 = cp[5], cp[6]
        o1, o2, c2 = x[nd], x[nd + 1], x[nd + 2]
        out[nd] = e1 * (1.0 - o1 - o2 - c2)
        out[nd + 1] = e2 * c2
        out[nd + 2] = -e2 * c2
    elif cid == CH_RED:
        out[0] = cp[0] * (cp[1] - x[0]) / capacitance(mid, mp)
    elif cid == CH_IEXT:
        out[0] = 1.0 / capacitance(mid, mp)


@njit(cache=True)
def field_jac(mid, cid, mp, cp, x, u, jac):
    """State Jacobian of the controlled field at control value u."""
    for i in range(jac.shape[0]):
        for j in range(jac.shape[1]):
            jac[i, j] = 0.0
    nd = neuron_dim(mid, mp)
    neuron_jac(mid, mp, x, jac)
    cm = capacitance(mid, mp)
    if cid == CH_3:
        kd, kr, g, vr = cp[0], cp[1], cp[2], cp[3]
        o = x[nd]
        jac[0, 0] += -g * o / cm
        jac[0, nd] = g * (vr - x[0]) / cm
        jac[nd, nd] = -u - kd
        jac[nd, nd + 1] = -u
        jac[nd + 1, nd] = kd
        jac[nd + 1, nd + 1] = -kr
    elif cid == CH_4:
        kd1, kd2, e12, e21, kr = cp[0], cp[1], cp[2], cp[3], cp[4]
        e1, e2, rho, g, vr = cp[5], cp[6], cp[7], cp[8], cp[9]
        o1, o2 = x[nd], x[nd + 1]
        jac[0, 0] += -g * (o1 + rho * o2) / cm
        jac[0, nd] = g * (vr - x[0]) / cm
        jac[0, nd + 1] = g * rho * (vr - x[0]) / cm
        jac[nd, nd] = -e1 * u - (kd1 + e12)
        jac[nd, nd + 1] = -e1 * u + e21
        jac[nd, nd + 2] = -e1 * u
        jac[nd + 1, nd] = e12
        jac[nd + 1, nd + 1] = -(kd2 + e21)
        jac[nd + 1, nd + 2] = e2 * u
        jac[nd + 2, nd + 1] = kd2
        jac[nd + 2, nd + 2] = -e2 * u - kr
    elif cid == CH_RED:
        jac[0, 0] += -u * cp[0] / cm


@njit(cache=True)
def _rk4_step(mid, cid, mp, cp, x, u, h, k1, k2, k3, k4, xt):
    n = x.shape[0]
    field(mid, cid, mp, cp, x, u, k1)
    for i in range(n):
        xt[i] = x[i] + 0.5 * h * k1[i]
    field(mid, cid, mp, cp, xt, u, k2)
    for i in range(n):
        xt[i] = x[i] + 0.5 * h * k2[i]
    field(mid, cid, mp, cp, xt, u, k3)
    for i in range(n):
        xt[i] = x[i] + h * k3[i]
    field(mid, cid, mp, cp, xt, u, k4)
    for i in range(n):
        x[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@njit(cache=True)
def seg_steps(t0, t1, h):
    """Number of RK4 steps covering [t0, t1] with step <= h."""
    span = t1 - t0
    if span <= 0.0:
        return 0
    n = int(math.ceil(span / h - 1e-9))
    if n < 1:
        n = 1
    return n


@njit(cache=True)
def pwc_hit(mid, cid, mp, cp, x0, bounds, levels, h, vs, tmax):
    """Integrate under a piecewise-constant control until the voltage
    crosses vs upward, the horizon tmax is reached, or the state blows up.

    bounds[k] is the start of segment k (bounds[0] == 0); levels[k] applies
    on [bounds[k], bounds[k+1]).  Steps inside each segment are uniform so
    segment boundaries always land on grid points.

    Returns (status, t) where t is the crossing time for HIT, the last
    valid time for DIVERGED and tmax for OK.
    """
    n = x0.shape[0]
    x = x0.copy()
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    xt = np.empty(n)
    nseg = bounds.shape[0]
    vprev = x[0]
    for s in range(nseg):
        t0 = bounds[s]
        t1 = bounds[s + 1] if s + 1 < nseg else tmax
        if t1 > tmax:
            t1 = tmax
        if t1 <= t0:
            continue
        u = levels[s]
        nst = seg_steps(t0, t1, h)
        dt = (t1 - t0) / nst
        t = t0
        for _ in range(nst):
            _rk4_step(mid, cid, mp, cp, x, u, dt, k1, k2, k3, k4, xt)
            t += dt
            ok = True
            for i in range(n):
                if not math.isfinite(x[i]):
                    ok = False
            if not ok:
                return DIVERGED, t - dt
            if x[0] >= vs and vprev < vs:
                frac = (vs - vprev) / (x[0] - vprev)
                return HIT, t - dt + frac * dt
            vprev = x[0]
    return OK, tmax


@njit(cache=True)
def pwc_record(mid, cid, mp, cp, x0, bounds, levels, h, tmax, ts, xs, us):
    """Integrate as pwc_hit but store every grid point.

    ts/xs must hold total_points(bounds, h, tmax) entries; us holds one
    control value per interval (length len(ts) - 1).  Returns
    (status, n_points).
    """
    n = x0.shape[0]
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    xt = np.empty(n)
    x = x0.copy()
    ts[0] = 0.0
    for i in range(n):
        xs[0, i] = x[i]
    idx = 0
    nseg = bounds.shape[0]
    for s in range(nseg):
        t0 = bounds[s]
        t1 = bounds[s + 1] if s + 1 < nseg else tmax
        if t1 > tmax:
            t1 = tmax
        if t1 <= t0:
            continue
        u = levels[s]
        nst = seg_steps(t0, t1, h)
        dt = (t1 - t0) / nst
        for q in range(nst):
            _rk4_step(mid, cid, mp, cp, x, u, dt, k1, k2, k3, k4, xt)
            us[idx] = u
            idx += 1
            ts[idx] = t0 + (q + 1) * dt
            for i in range(n):
                xs[idx, i] = x[i]
                if not math.isfinite(x[i]):
                    return DIVERGED, idx + 1
    return OK, idx + 1


@njit(cache=True)
def total_points(bounds, h, tmax):
    nseg = bounds.shape[0]
    tot = 1
    for s in range(nseg):
        t0 = bounds[s]
        t1 = bounds[s + 1] if s + 1 < nseg else tmax
        if t1 > tmax:
            t1 = tmax
        if t1 <= t0:
            continue
        tot += seg_steps(t0, t1, h)
    return tot


@njit(cache=True)
def adjoint_backward_kernel(mid, cid, mp, cp, ts, xs, us, p_tf, ps):
    """Backward RK4 for the costate p' = -J(x,u)^T p on the stored grid.

    The state at half-steps is rebuilt by cubic Hermite interpolation of the
    stored samples, which keeps the costate at the same order as the forward
    integration.  ps must have the same shape as xs.
    """
    npts = ts.shape[0]
    n = xs.shape[1]
    J = np.empty((n, n))
    f0 = np.empty(n)
    f1 = np.empty(n)
    xm = np.empty(n)
    p = p_tf.copy()
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    pt = np.empty(n)
    for i in range(n):
        ps[npts - 1, i] = p[i]
    for k in range(npts - 2, -1, -1):
        h = ts[k + 1] - ts[k]
        u = us[k]
        xk = xs[k]
        xk1 = xs[k + 1]
        field(mid, cid, mp, cp, xk, u, f0)
        field(mid, cid, mp, cp, xk1, u, f1)
        for i in range(n):
            xm[i] = 0.5 * (xk[i] + xk1[i]) + 0.125 * h * (f0[i] - f1[i])
        # k1 at t_{k+1}
        field_jac(mid, cid, mp, cp, xk1, u, J)
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc -= J[j, i] * p[j]
            k1[i] = acc
        # k2, k3 at the midpoint
        field_jac(mid, cid, mp, cp, xm, u, J)
        for i in range(n):
            pt[i] = p[i] - 0.5 * h * k1[i]
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc -= J[j, i] * pt[j]
            k2[i] = acc
        for i in range(n):
            pt[i] = p[i] - 0.5 * h * k2[i]
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc -= J[j, i] * pt[j]
            k3[i] = acc
        # k4 at t_k
        field_jac(mid, cid, mp, cp, xk, u, J)
        for i in range(n):
            pt[i] = p[i] - h * k3[i]
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc -= J[j, i] * pt[j]
            k4[i] = acc
        for i in range(n):
            p[i] = p[i] - h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            ps[k, i] = p[i]


@njit(cache=True)
def hermite_replay(mid, cid, mp, cp, x0, ts, u_nodes, udot_nodes, xs):
    """Integrate with a control signal that is known with its derivative on
    the grid ts; mid-step values come from cubic Hermite interpolation.

    Used to re-drive a reduced system with a state trajectory recorded from
    the full one.  xs must be (len(ts), dim).
    """
    npts = ts.shape[0]
    n = x0.shape[0]
    x = x0.copy()
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    xt = np.empty(n)
    for i in range(n):
        xs[0, i] = x[i]
    for k in range(npts - 1):
        h = ts[k + 1] - ts[k]
        u0 = u_nodes[k]
        u1 = u_nodes[k + 1]
        um = 0.5 * (u0 + u1) + 0.125 * h * (udot_nodes[k] - udot_nodes[k + 1])
        field(mid, cid, mp, cp, x, u0, k1)
        for i in range(n):
            xt[i] = x[i] + 0.5 * h * k1[i]
        field(mid, cid, mp, cp, xt, um, k2)
        for i in range(n):
            xt[i] = x[i] + 0.5 * h * k2[i]
        field(mid, cid, mp, cp, xt, um, k3)
        for i in range(n):
            xt[i] = x[i] + h * k3[i]
        field(mid, cid, mp, cp, xt, u1, k4)
        for i in range(n):
            x[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            xs[k + 1, i] = x[i]
