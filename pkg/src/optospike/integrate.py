"""Fixed-step RK4 integration of controlled systems with threshold events.

Control signals are piecewise constant; integration steps are always
aligned with the control discontinuities, so repeated runs with identical
inputs are bit-identical.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .chr2 import ControlledSystem

DEFAULT_STEP = 0.005
HH_STEP = 0.0025


class DivergenceError(RuntimeError):
    """State became non-finite; carries the last valid time."""

    def __init__(self, t_last: float):
        super().__init__(f"integration diverged after t = {t_last:.6g} ms")
        self.t_last = t_last


@dataclass(frozen=True)
class BangBangSchedule:
    """Alternating control starting at u_on: on over [0, t1), off over
    [t1, t2), on again, ...  switch_times must be strictly increasing."""

    u_on: float
    switch_times: tuple[float, ...] = ()

    def __post_init__(self):
        if self.u_on <= 0:
            raise ValueError("u_on must be positive")
        ts = tuple(float(t) for t in self.switch_times)
        if any(t <= 0 for t in ts):
            raise ValueError("switch times must be positive")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("switch times must be strictly increasing")
        object.__setattr__(self, "switch_times", ts)

    @property
    def n_switches(self) -> int:
        return len(self.switch_times)

    def level(self, t: float) -> float:
        k = sum(1 for s in self.switch_times if s <= t)
        return self.u_on if k % 2 == 0 else 0.0

    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        bounds = np.concatenate([[0.0], np.asarray(self.switch_times)])
        levels = np.array([self.u_on if i % 2 == 0 else 0.0
                           for i in range(len(bounds))])
        return bounds, levels

    def light_on_time(self, t_f: float) -> float:
        """Total time the input is at u_on before t_f."""
        bounds = list(self.switch_times) + [t_f]
        on, start = 0.0, 0.0
        for i, b in enumerate(bounds):
            b = min(b, t_f)
            if i % 2 == 0:
                on += max(0.0, b - start)
            start = b
            if start >= t_f:
                break
        return on


@dataclass(frozen=True)
class PiecewiseConstantControl:
    """Sampled control: levels[i] applies between times[i-1] and times[i]
    (times are the interior breakpoints; len(levels) == len(times) + 1)."""

    times: tuple[float, ...]
    levels: tuple[float, ...]

    def __post_init__(self):
        ts = tuple(float(t) for t in self.times)
        ls = tuple(float(v) for v in self.levels)
        if len(ls) != len(ts) + 1:
            raise ValueError("need len(levels) == len(times) + 1")
        if any(t <= 0 for t in ts) or any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("breakpoints must be positive and increasing")
        if any(v < 0 for v in ls):
            raise ValueError("control levels must be nonnegative")
        object.__setattr__(self, "times", ts)
        object.__setattr__(self, "levels", ls)

    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        bounds = np.concatenate([[0.0], np.asarray(self.times)])
        return bounds, np.asarray(self.levels)


ControlSignal = BangBangSchedule | PiecewiseConstantControl


def constant_control(u: float) -> PiecewiseConstantControl:
    return PiecewiseConstantControl((), (float(u),))


@dataclass(frozen=True)
class Trajectory:
    """Time grid, state samples and the control applied on each interval."""

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray  # length len(times) - 1, one value per interval
    names: tuple[str, ...]
    step: float
    meta: dict = field(default_factory=dict)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def control_samples(self) -> np.ndarray:
        """Controls resampled onto the time grid (last value repeated)."""
        return np.append(self.controls, self.controls[-1])

    def to_csv(self, path=None, extra: dict | None = None) -> str | None:
        """Write t,<states...>,u rows (plus optional extra columns)."""
        cols = ["t", *self.names, "u"]
        data = [self.times, *self.states.T, self.control_samples()]
        if extra:
            for k, v in extra.items():
                cols.append(k)
                data.append(np.asarray(v))
        buf = io.StringIO()
        buf.write(",".join(cols) + "\n")
        for row in zip(*data):
            buf.write(",".join(format(v, ".17g") for v in row) + "\n")
        text = buf.getvalue()
        if path is None:
            return text
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        return None


def default_step(system: ControlledSystem) -> float:
    """Integration step: finer for the stiffer squid-axon models."""
    return HH_STEP if system.model.kind in ("hh", "hh2d") else DEFAULT_STEP


def _prep(system, control, x0, horizon):
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (system.dim,):
        raise ValueError(f"x0 must have shape ({system.dim},)")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    bounds, levels = control.segments()
    if np.any(levels > system.u_max * (1 + 1e-12)):
        raise ValueError("control exceeds the system's u_max")
    return x0, bounds, levels


def integrate(system: ControlledSystem, control: ControlSignal, x0,
              horizon: float, step: float | None = None) -> Trajectory:
    """Integrate for the full horizon and record every grid point."""
    x0, bounds, levels = _prep(system, control, x0, horizon)
    h = step or default_step(system)
    npts = kernels.total_points(bounds, h, horizon)
    ts = np.empty(npts)
    xs = np.empty((npts, system.dim))
    us = np.empty(npts - 1)
    status, nfill = kernels.pwc_record(system.mid, system.cid, system.mp,
                                       system.cp, x0, bounds, levels, h,
                                       horizon, ts, xs, us)
    if status == kernels.DIVERGED:
        raise DivergenceError(ts[nfill - 2] if nfill >= 2 else 0.0)
    return Trajectory(ts, xs, us, system.names, h,
                      {"integrator": "rk4", "step_policy": "segment-aligned"})


def hit_time(system: ControlledSystem, control: ControlSignal, x0,
             v_s: float, t_max: float, step: float | None = None) -> float | None:
    """First upward crossing time of the voltage through v_s, or None.

    The crossing is located by linear interpolation inside the straddling
    step.
    """
    x0, bounds, levels = _prep(system, control, x0, t_max)
    if x0[0] >= v_s:
        raise ValueError("v_s must be above the initial voltage")
    h = step or default_step(system)
    status, t = kernels.pwc_hit(system.mid, system.cid, system.mp, system.cp,
                                x0, bounds, levels, h, v_s, t_max)
    if status == kernels.DIVERGED:
        raise DivergenceError(t)
    return float(t) if status == kernels.HIT else None
