"""Costate integration, switching functions, extremal verification and the
Lie-bracket diagnostics for singular-arc analysis."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import kernels, integrate
from .chr2 import ControlledSystem
from .integrate import BangBangSchedule, Trajectory


def hamiltonian(system: ControlledSystem, x, p, u: float, p0: float = -1.0) -> float:
    """Control Hamiltonian <p, F0(x)> + u <p, F1(x)> + p0."""
    if p0 > 0:
        raise ValueError("the abnormal multiplier p0 must be <= 0")
    if not (0.0 <= u <= system.u_max * (1 + 1e-12)):
        raise ValueError("u outside [0, u_max]")
    p = np.asarray(p, dtype=float)
    return float(p @ system.f0(x) + u * (p @ system.f1(x)) + p0)


@dataclass(frozen=True)
class AdjointPath:
    """Costate samples on the trajectory grid, plus the multipliers used."""

    times: np.ndarray
    costates: np.ndarray
    p0: float
    lam1: float | None = None

    @property
    def final(self) -> np.ndarray:
        return self.costates[-1]


def adjoint_backward(system: ControlledSystem, traj: Trajectory, p_tf,
                     p0: float = -1.0) -> AdjointPath:
    """Integrate p' = -J_F(x, u)^T p backwards along a stored trajectory.

    Uses the same grid as the trajectory; states between nodes are rebuilt
    by cubic Hermite interpolation so the costate keeps RK4 accuracy.
    """
    p_tf = np.asarray(p_tf, dtype=float)
    if p_tf.shape != (system.dim,):
        raise ValueError(f"p_tf must have shape ({system.dim},)")
    ps = np.empty_like(traj.states)
    kernels.adjoint_backward_kernel(system.mid, system.cid, system.mp,
                                    system.cp, traj.times, traj.states,
                                    traj.controls, p_tf, ps)
    return AdjointPath(traj.times, ps, p0)


def switching_function(system: ControlledSystem, traj: Trajectory,
                       adj: AdjointPath) -> np.ndarray:
    """phi(t) = <p(t), F1(x(t))> on the trajectory grid."""
    if traj.times.shape != adj.times.shape or not np.array_equal(traj.times, adj.times):
        raise ValueError("trajectory and adjoint grids differ")
    out = np.empty(len(traj.times))
    buf = np.empty(system.dim)
    for i in range(len(out)):
        kernels.control_field(system.mid, system.cid, system.mp, system.cp,
                              traj.states[i], buf)
        out[i] = adj.costates[i] @ buf
    return out


def hamiltonian_path(system: ControlledSystem, traj: Trajectory,
                     adj: AdjointPath) -> np.ndarray:
    """H(t) sampled on the grid, using each interval's control."""
    u = traj.control_samples()
    out = np.empty(len(traj.times))
    for i in range(len(out)):
        out[i] = (adj.costates[i] @ system.f(traj.states[i], u[i])) + adj.p0
    return out


@dataclass(frozen=True)
class ExtremalReport:
    """Outcome of checking a candidate schedule against the first-order
    optimality conditions."""

    t_f: float
    lam1: float
    sign_consistency: float
    max_abs_h: float
    h_scale: float
    singular_intervals: tuple[tuple[float, float], ...]
    phi_zero_crossings: tuple[float, ...]
    schedule_switches: tuple[float, ...]
    switch_match_steps: float
    step: float

    @property
    def singular_flagged(self) -> bool:
        return len(self.singular_intervals) > 0

    def to_json(self, path=None) -> str | None:
        text = json.dumps(asdict(self), indent=2, sort_keys=True)
        if path is None:
            return text
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text + "\n")
        return None


class TangentialArrivalError(RuntimeError):
    """Voltage derivative vanished at the terminal time."""


def verify_extremal(system: ControlledSystem, schedule: BangBangSchedule,
                    v_s: float, t_max: float = 300.0,
                    step: float | None = None, x0=None,
                    tol_phi: float = 1e-8) -> ExtremalReport:
    """Build the transversal costate at the crossing time and check the
    maximum-principle sign law along the schedule.

    The terminal costate is (lam1, 0, ..., 0) with lam1 = 1/v'(t_f) forced
    by the vanishing Hamiltonian, and p0 = -1.
    """
    h = step or integrate.default_step(system)
    if x0 is None:
        x0 = system.initial_state()
    t_f = integrate.hit_time(system, schedule, x0, v_s, t_max, step=h)
    if t_f is None:
        raise ValueError("schedule does not reach v_s before t_max")
    traj = integrate.integrate(system, schedule, x0, t_f, step=h)
    u_end = schedule.level(t_f)
    vdot = system.f(traj.final_state, u_end)[0]
    if abs(vdot) < 1e-12:
        raise TangentialArrivalError("v'(t_f) = 0, terminal multiplier undefined")
    lam1 = 1.0 / vdot
    p_tf = np.zeros(system.dim)
    p_tf[0] = lam1
    adj = AdjointPath(traj.times,
                      adjoint_backward(system, traj, p_tf).costates,
                      -1.0, lam1)
    phi = switching_function(system, traj, adj)
    ham = hamiltonian_path(system, traj, adj)

    # sign law: u = u_max where phi > 0, u = 0 where phi < 0
    u = traj.control_samples()
    scale = float(np.max(np.abs(phi)))
    dead = 1e-12 * scale
    on = u > 0
    ok = np.where(on, phi > -dead, phi < dead)
    sign_consistency = float(np.mean(ok))

    # |phi| below tol_phi * max for more than 5 consecutive steps
    small = np.abs(phi) <= tol_phi * scale
    intervals = []
    start = None
    for i, flag in enumerate(small):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            if i - start > 5:
                intervals.append((float(traj.times[start]), float(traj.times[i - 1])))
            start = None
    if start is not None and len(small) - start > 5:
        intervals.append((float(traj.times[start]), float(traj.times[-1])))

    # recover switch times from phi sign changes (exclude the forced
    # transversality zero at t_f)
    crossings = []
    for i in range(len(phi) - 2):
        if phi[i] * phi[i + 1] < 0:
            t0, t1 = traj.times[i], traj.times[i + 1]
            crossings.append(float(t0 + (t1 - t0) * phi[i] / (phi[i] - phi[i + 1])))
    sw = schedule.switch_times
    if sw and crossings:
        dev = max(min(abs(c - s) for c in crossings) for s in sw) / h
    elif sw or crossings:
        dev = float("inf")
    else:
        dev = 0.0

    # scale for the Hamiltonian check: max |<p, F0>| along the path
    f0s = np.empty(len(traj.times))
    for i in range(len(f0s)):
        f0s[i] = adj.costates[i] @ system.f0(traj.states[i])
    h_scale = float(np.max(np.abs(f0s)))

    return ExtremalReport(
        t_f=float(t_f), lam1=float(lam1),
        sign_consistency=sign_consistency,
        max_abs_h=float(np.max(np.abs(ham))),
        h_scale=h_scale,
        singular_intervals=tuple(intervals),
        phi_zero_crossings=tuple(round(c, 12) for c in crossings),
        schedule_switches=tuple(sw),
        switch_match_steps=float(dev),
        step=h,
    )


# ---------------------------------------------------------------------------
# Lie-bracket calculus


def _fd_jacobian(f, x, h):
    """Central-difference Jacobian with Richardson extrapolation."""
    n = len(x)
    fx = np.asarray(f(x))
    m = len(fx)
    jac = np.empty((m, n))
    for j in range(n):
        for hh, wgt in ((h, -1.0 / 3.0), (h / 2.0, 4.0 / 3.0)):
            e = np.zeros(n)
            e[j] = hh
            d = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2.0 * hh)
            if wgt < 0:
                col = wgt * d
            else:
                col += wgt * d
        jac[:, j] = col
    return jac


def lie_bracket_numeric(f, g, x, h: float | None = None) -> np.ndarray:
    """[f, g](x) = J_g(x) f(x) - J_f(x) g(x) with finite-difference Jacobians."""
    x = np.asarray(x, dtype=float)
    if h is None:
        h = 1e-5 * (1.0 + float(np.linalg.norm(x)))
    jg = _fd_jacobian(g, x, h)
    jf = _fd_jacobian(f, x, h)
    return jg @ np.asarray(f(x)) - jf @ np.asarray(g(x))


def iterated_bracket(f, g, x, depth: int, base_h: float | None = None,
                     inner=None) -> np.ndarray:
    """ad_f^depth g evaluated numerically.

    The finite-difference scale grows with nesting depth so the noise
    amplified by each differentiation stays below its truncation error.
    When inner is given it must evaluate [f, g] exactly and replaces the
    first numeric level.
    """
    x = np.asarray(x, dtype=float)
    scale = 1.0 + float(np.linalg.norm(x))
    hs = [(base_h or 1e-5 * scale) * (25.0 ** k) for k in range(depth)]

    def level(k):
        if k == 0:
            return g
        if k == 1 and inner is not None:
            return inner
        prev = level(k - 1)
        hk = hs[k - 2] if inner is not None else hs[k - 1]
        return lambda y: lie_bracket_numeric(f, prev, y, h=hk)

    return level(depth)(x)


def bracket_f0_f1(system: ControlledSystem, x) -> np.ndarray:
    """[F0, F1](x) from the analytic Jacobians (no differencing).

    The field is affine in u, so J_F1 = J(x, 1) - J(x, 0).
    """
    x = np.asarray(x, dtype=float)
    j0 = system.jac(x, 0.0)
    j1 = system.jac(x, 1.0) - j0
    return j1 @ system.f0(x) - j0 @ system.f1(x)


def chr2_4_brackets(system: ControlledSystem, z) -> tuple[np.ndarray, np.ndarray]:
    """Closed forms of [F0, F1](z) and ad^2_{F1} F0(z) for a four-state
    coupling; both live on the voltage and channel directions only."""
    if system.cid != kernels.CH_4:
        raise ValueError("chr2_4_brackets requires a ChR2-4-state coupling")
    z = np.asarray(z, dtype=float)
    ch = system.channel
    nd = system.model.dim
    cap = system.model.cap
    a = ch.g_chr2 / cap
    v = z[0]
    o1, o2, c2 = z[nd], z[nd + 1], z[nd + 2]
    s = 1.0 - o1 - o2 - c2
    e1, e2, rho = ch.eps1, ch.eps2, ch.rho
    kd1, kd2, e12, e21, kr = ch.k_d1, ch.k_d2, ch.e_12, ch.e_21, ch.k_r
    drive = a * (ch.v_chr2 - v)

    b1 = np.zeros(system.dim)
    b1[0] = -drive * (e1 * s + rho * e2 * c2)
    b1[nd] = e1 * s * (e12 + kd1) + e1 * kd1 * o1 + (e1 * kr - e2 * e21) * c2
    b1[nd + 1] = -e1 * s * e12 + e2 * kd2 * o2 + e2 * (e21 + kd2 - kr) * c2
    b1[nd + 2] = -e2 * kd2 * (o2 + c2)

    b2 = np.zeros(system.dim)
    b2[0] = -drive * (e1 * e1 * s + rho * e2 * e2 * c2)
    b2[nd] = (e1 * e1 * s * (e12 - kd1) - e1 * e1 * kd1 * o1
              + (2.0 * e1 * e2 * kr - e1 * e1 * kr - e2 * e2 * e21) * c2)
    b2[nd + 1] = (-e1 * e1 * e12 * s - e2 * e2 * kd2 * o2
                  - e2 * e2 * (kd2 + kr - e21) * c2)
    b2[nd + 2] = e2 * e2 * kd2 * (o2 + c2)
    return b1, b2


def singular_control_candidate(system: ControlledSystem, z, q) -> float | None:
    """Candidate feedback value <q, ad^2_{F0}F1> / <q, ad^2_{F1}F0> on a
    would-be singular arc of a four-state coupling; None when the
    denominator is negligible."""
    if system.cid != kernels.CH_4:
        raise ValueError("singular_control_candidate requires a 4-state coupling")
    z = np.asarray(z, dtype=float)
    q = np.asarray(q, dtype=float)
    _, ad2_f1_f0 = chr2_4_brackets(system, z)
    denom = float(q @ ad2_f1_f0)
    if abs(denom) < 1e-12:
        return None
    num_field = iterated_bracket(system.f0, system.f1, z, 2,
                                 inner=lambda y: bracket_f0_f1(system, y))
    return float(q @ num_field) / denom


def ml_singular_locus(params, nu: float) -> float:
    """Recovery-gate value w = a'(v)/(a'(v)+b'(v)) that a singular arc of
    the reduced Morris-Lecar system would have to track; undefined at v3."""
    if nu == params.v3:
        raise ValueError("locus undefined at v3")
    da, db = kernels.ml_rates_d(nu, params.v3, params.v4, params.phi)
    return da / (da + db)


def bracket_derivative_check(system: ControlledSystem, traj: Trajectory,
                             adj: AdjointPath, h_field=None,
                             guard_steps: int = 3) -> float:
    """Largest relative mismatch between d/dt <p, h(x)> and
    <p,[F0,h]> + u <p,[F1,h]> over the constant-control arcs.

    Samples within guard_steps of a control switch are excluded (the time
    derivative is one-sided there).
    """
    if h_field is None:
        h_field = system.f1
    ts, xs, ps = traj.times, traj.states, adj.costates
    us = traj.controls
    n = len(ts)
    vals = np.array([ps[i] @ np.asarray(h_field(xs[i])) for i in range(n)])
    # interior samples away from control discontinuities
    switch_idx = set()
    for i in range(1, len(us)):
        if us[i] != us[i - 1]:
            switch_idx.add(i)
    resid = 0.0
    scale = float(np.max(np.abs(vals))) or 1.0
    for i in range(1, n - 1):
        if any(abs(i - s) <= guard_steps for s in switch_idx):
            continue
        dt = ts[i + 1] - ts[i - 1]
        dnum = (vals[i + 1] - vals[i - 1]) / dt
        b0 = lie_bracket_numeric(system.f0, h_field, xs[i])
        b1 = lie_bracket_numeric(system.f1, h_field, xs[i])
        dth = ps[i] @ b0 + us[i] * (ps[i] @ b1)
        resid = max(resid, abs(dnum - dth))
    return resid / scale


def ml_prereduction_identities(system: ControlledSystem, x,
                               p_samples: int = 8, seed: int = 0) -> dict:
    """Diagnostics for the unreduced Morris-Lecar coupling.

    (i) relative error of ad^3_{F1}F0 = -[F0,F1] at x (numeric brackets);
    (ii) for costates satisfying p_o = 0 and
         (g/cap)(v_rev - v) p_v + k_d p_d = 0, the magnitudes of
         <p, ad^k_{F0}F1> for k = 1..3 and <p, [F1, ad^2_{F0}F1]>.
    """
    if system.model.kind != "ml" or system.cid != kernels.CH_3:
        raise ValueError("expects a Morris-Lecar ChR2-3-state coupling")
    x = np.asarray(x, dtype=float)
    ch = system.channel
    cap = system.model.cap

    exact01 = lambda y: bracket_f0_f1(system, y)
    ad3 = iterated_bracket(system.f1, system.f0, x, 3,
                           inner=lambda y: -bracket_f0_f1(system, y))
    b01 = bracket_f0_f1(system, x)
    ident_err = float(np.linalg.norm(ad3 + b01) / max(np.linalg.norm(b01), 1e-300))

    rng = np.random.default_rng(seed)
    drive = ch.g_chr2 / cap * (ch.v_chr2 - x[0])
    adk = [iterated_bracket(system.f0, system.f1, x, k, inner=exact01)
           for k in (1, 2, 3)]
    ad2_fn = lambda y: iterated_bracket(system.f0, system.f1, y, 2, inner=exact01)
    mixed = lie_bracket_numeric(system.f1, ad2_fn, x,
                                h=1e-3 * (1 + np.linalg.norm(x)))
    rows = []
    for _ in range(p_samples):
        pv, pw = rng.normal(size=2)
        pd = -drive * pv / ch.k_d
        p = np.array([pv, pw, 0.0, pd])
        rows.append({
            "k1": float(p @ adk[0]),
            "k2": float(p @ adk[1]),
            "k3": float(p @ adk[2]),
            "mixed": float(p @ mixed),
            "p_norm": float(np.linalg.norm(p)),
        })
    return {"ad3_identity_rel_err": ident_err, "constrained_products": rows}
