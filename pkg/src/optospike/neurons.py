"""Uncontrolled neuron models: parameters, vector fields, Jacobians,
resting states and the planar Hodgkin-Huxley reduction."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels


@dataclass(frozen=True)
class FhnParams:
    """FitzHugh-Nagumo constants (dimensionless; cap scales the input)."""

    a: float = 0.7
    b: float = 0.8
    c: float = 0.08
    cap: float = 1.0

    def __post_init__(self):
        if self.b <= 0 or self.c <= 0 or self.cap <= 0:
            raise ValueError("FhnParams requires b, c, cap > 0")


@dataclass(frozen=True)
class MlParams:
    """Morris-Lecar constants (mV, mS/cm^2, uF/cm^2, 1/ms)."""

    v1: float = -1.2
    v2: float = 18.0
    v3: float = 2.0
    v4: float = 30.0
    g_ca: float = 4.4
    g_k: float = 8.0
    g_l: float = 2.0
    v_ca: float = 120.0
    v_k: float = -84.0
    v_l: float = -60.0
    cap: float = 20.0
    phi: float = 0.04

    def __post_init__(self):
        if min(self.g_ca, self.g_k, self.g_l) <= 0 or self.cap <= 0:
            raise ValueError("MlParams requires positive conductances and cap")
        if self.v2 == 0 or self.v4 == 0:
            raise ValueError("MlParams requires v2 != 0 and v4 != 0")

    def shifted(self, dv: float) -> "MlParams":
        """Translate the voltage axis by dv (rates' slopes are unchanged)."""
        return replace(self, v1=self.v1 + dv, v3=self.v3 + dv,
                       v_ca=self.v_ca + dv, v_k=self.v_k + dv,
                       v_l=self.v_l + dv)


@dataclass(frozen=True)
class HhParams:
    """Hodgkin-Huxley squid-axon constants; e_l is normally calibrated so
    the resting potential sits exactly at 0 mV."""

    g_k: float = 36.0
    g_na: float = 120.0
    g_l: float = 0.3
    e_k: float = -12.0
    e_na: float = 115.0
    e_l: float = 10.5989
    cap: float = 0.9

    def __post_init__(self):
        if min(self.g_k, self.g_na, self.g_l) <= 0 or self.cap <= 0:
            raise ValueError("HhParams requires positive conductances and cap")


@dataclass(frozen=True)
class Hh2dParams:
    """Planar HH reduction: m at steady state, h replaced by a_h + b_h * n."""

    hh: HhParams = HhParams()
    a_h: float = 0.873237
    b_h: float = -1.069414


class NeuronModel:
    """A named neuron model plus its packed parameter vector.

    Instances are immutable and cheap; all numerical work happens in the
    compiled kernels on the packed array.
    """

    __slots__ = ("kind", "params", "mid", "mp", "dim", "names", "gates")

    def __init__(self, kind, params, mid, mp, names, gates):
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "mid", mid)
        object.__setattr__(self, "mp", mp)
        object.__setattr__(self, "dim", len(names))
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "gates", gates)

    def __setattr__(self, *a):
        raise AttributeError("NeuronModel is immutable")

    def __repr__(self):
        return f"NeuronModel({self.kind})"

    @property
    def cap(self) -> float:
        return kernels.capacitance(self.mid, self.mp)


def fhn(params: FhnParams = FhnParams()) -> NeuronModel:
    mp = np.array([params.a, params.b, params.c, params.cap])
    return NeuronModel("fhn", params, kernels.FHN, mp, ("v", "w"), ())


def ml(params: MlParams = MlParams()) -> NeuronModel:
    mp = np.array([params.v1, params.v2, params.v3, params.v4,
                   params.g_ca, params.g_k, params.g_l,
                   params.v_ca, params.v_k, params.v_l,
                   params.cap, params.phi])
    return NeuronModel("ml", params, kernels.ML, mp, ("v", "w"), ("w",))


def hh(params: HhParams = HhParams()) -> NeuronModel:
    mp = np.array([params.g_k, params.g_na, params.g_l,
                   params.e_k, params.e_na, params.e_l, params.cap])
    return NeuronModel("hh", params, kernels.HH, mp,
                       ("v", "n", "m", "h"), ("n", "m", "h"))


def hh2d(params: Hh2dParams = Hh2dParams()) -> NeuronModel:
    p = params.hh
    mp = np.array([p.g_k, p.g_na, p.g_l, p.e_k, p.e_na, p.e_l, p.cap,
                   params.a_h, params.b_h])
    return NeuronModel("hh2d", params, kernels.HH2D, mp, ("v", "n"), ("n",))


def linear_test(a: np.ndarray, b: np.ndarray | None = None) -> NeuronModel:
    """Affine test system dx/dt = A x + b, used by the integration tests."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    n = a.shape[0]
    if b is None:
        b = np.zeros(n)
    mp = np.concatenate(([float(n)], a.ravel(), np.asarray(b, dtype=float)))
    names = tuple(f"x{i}" for i in range(n))
    return NeuronModel("lin", (a, b), kernels.LIN, mp, names, ())


def _check_state(model: NeuronModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.dim,):
        raise ValueError(f"state must have shape ({model.dim},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("state contains non-finite entries")
    return x


def drift(model: NeuronModel, x) -> np.ndarray:
    """Evaluate the uncontrolled vector field at state x."""
    x = _check_state(model, x)
    out = np.empty(model.dim)
    kernels.neuron_drift(model.mid, model.mp, x, out)
    return out


def drift_jacobian(model: NeuronModel, x) -> np.ndarray:
    """Analytic Jacobian of drift at state x."""
    x = _check_state(model, x)
    jac = np.zeros((model.dim, model.dim))
    kernels.neuron_jac(model.mid, model.mp, x, jac)
    return jac


def gate_rates(model: NeuronModel, gate: str, v: float) -> tuple[float, float]:
    """Opening/closing rates (alpha, beta) of a gating variable at voltage v."""
    if not np.isfinite(v):
        raise ValueError("voltage must be finite")
    if model.kind == "ml" and gate == "w":
        p = model.params
        return kernels.ml_rates(v, p.v3, p.v4, p.phi)
    if model.kind in ("hh", "hh2d"):
        an, bn, am, bm, ah, bh = kernels.hh_rates(v)
        table = {"n": (an, bn), "m": (am, bm), "h": (ah, bh)}
        if model.kind == "hh2d" and gate != "n":
            raise KeyError(f"hh2d has no dynamic gate {gate!r}")
        if gate in table:
            return table[gate]
    raise KeyError(f"{model.kind} has no gate {gate!r}")


def steady_gate(model: NeuronModel, gate: str, v: float) -> float:
    """Equilibrium open probability alpha/(alpha+beta) of a gate."""
    a, b = gate_rates(model, gate, v)
    return a / (a + b)


def m_inf(v: float) -> float:
    """HH sodium activation steady state (used by the planar reduction)."""
    _, _, am, bm, _, _ = kernels.hh_rates(v)
    return am / (am + bm)


def _gates_at(model: NeuronModel, v: float) -> np.ndarray:
    x = np.empty(model.dim)
    x[0] = v
    for i, g in enumerate(model.gates):
        x[1 + i] = steady_gate(model, g, v)
    return x


def _fhn_w_null(model, v):
    p = model.params
    return (v + p.a) / p.b


def _voltage_residual(model: NeuronModel, v: float) -> float:
    if model.kind == "fhn":
        x = np.array([v, _fhn_w_null(model, v)])
    else:
        x = _gates_at(model, v)
    return drift(model, x)[0]


def resting_state(model: NeuronModel, tol: float = 1e-10,
                  v_range: tuple[float, float] = (-100.0, 50.0)) -> np.ndarray:
    """Equilibrium with every gate at its steady value.

    A 1 mV scan over v_range brackets a sign change of the reduced voltage
    equation; damped Newton (secant fallback) polishes it.  Raises if the
    scan finds no bracket.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    lo, hi = v_range
    grid = np.arange(lo, hi + 0.5, 1.0)
    vals = np.array([_voltage_residual(model, v) for v in grid])
    bracket = None
    for i in range(len(grid) - 1):
        if vals[i] == 0.0:
            bracket = (grid[i], grid[i])
            break
        if vals[i] * vals[i + 1] < 0:
            bracket = (grid[i], grid[i + 1])
            break
    if bracket is None:
        raise ValueError(f"no resting state in range {v_range}")
    a, b = bracket
    fa, fb = _voltage_residual(model, a), _voltage_residual(model, b)
    v = a if abs(fa) < abs(fb) else b
    for _ in range(200):
        f = _voltage_residual(model, v)
        if abs(f) < 1e-14:
            break
        eps = 1e-7 * (1.0 + abs(v))
        df = (_voltage_residual(model, v + eps) - _voltage_residual(model, v - eps)) / (2 * eps)
        if df == 0.0:
            break
        step = f / df
        vn = v - step
        # keep Newton inside the bracket, halving until the residual drops
        damp = 1.0
        while (vn < a or vn > b or abs(_voltage_residual(model, vn)) > abs(f)) and damp > 1e-6:
            damp *= 0.5
            vn = v - damp * step
        if abs(vn - v) < 1e-15 * (1.0 + abs(v)):
            v = vn
            break
        v = vn
    if model.kind == "fhn":
        x = np.array([v, _fhn_w_null(model, v)])
    else:
        x = _gates_at(model, v)
    if np.max(np.abs(drift(model, x))) > tol:
        raise ValueError("resting-state refinement did not reach tolerance")
    return x


def calibrate_leak(params: HhParams) -> float:
    """Leak reversal that puts the HH equilibrium exactly at V = 0.

    Solves the voltage balance at V=0 with all gates at steady state:
    g_l e_l = -(g_k n^4 e_k + g_na m^3 h e_na).
    """
    an, bn, am, bm, ah, bh = kernels.hh_rates(0.0)
    n0 = an / (an + bn)
    m0 = am / (am + bm)
    h0 = ah / (ah + bh)
    return -(params.g_k * n0**4 * params.e_k
             + params.g_na * m0**3 * h0 * params.e_na) / params.g_l


def calibrated_hh(params: HhParams | None = None) -> HhParams:
    """Copy of params with e_l set by calibrate_leak."""
    p = params or HhParams()
    return replace(p, e_l=calibrate_leak(p))


@dataclass(frozen=True)
class HLinearFit:
    """Least-squares fit h ~ a_h + b_h * n along a simulated trajectory."""

    a_h: float
    b_h: float
    r2: float
    degenerate: bool = False


def fit_h_linear(params: HhParams, i_ext: float, v0: float,
                 horizon: float, step: float = 0.0025,
                 i_off_after: float | None = None) -> HLinearFit:
    """Fit the slow sodium gate h against n on an HH run under constant
    external current (optionally dropped to zero after i_off_after ms).

    The run starts from (v0, gates at steady state for v0).  A fit with
    essentially constant (n, h) is flagged degenerate instead of reported.
    """
    from . import chr2, integrate

    if horizon <= 0:
        raise ValueError("horizon must be positive")
    model = hh(params)
    system = chr2.couple(model, chr2.external_current(), u_max=max(abs(i_ext), 1.0))
    x0 = _gates_at(model, v0)
    if i_off_after is None:
        control = integrate.PiecewiseConstantControl((), (i_ext,))
    else:
        control = integrate.PiecewiseConstantControl((i_off_after,), (i_ext, 0.0))
    traj = integrate.integrate(system, control, x0, horizon, step=step)
    if not np.all(np.isfinite(traj.states)):
        raise ValueError("trajectory diverged during fit")
    n = traj.states[:, 1]
    hgate = traj.states[:, 3]
    if np.ptp(n) < 1e-6 or np.ptp(hgate) < 1e-6:
        return HLinearFit(float(hgate.mean()), 0.0, float("nan"), degenerate=True)
    a = np.vstack([np.ones_like(n), n]).T
    coef, *_ = np.linalg.lstsq(a, hgate, rcond=None)
    resid = hgate - a @ coef
    r2 = 1.0 - float(resid @ resid) / float(((hgate - hgate.mean()) ** 2).sum())
    return HLinearFit(float(coef[0]), float(coef[1]), r2)
