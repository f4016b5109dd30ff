"""Channelrhodopsin kinetics and coupling into single-input affine systems."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .neurons import NeuronModel


@dataclass(frozen=True)
class ChR2ThreeParams:
    """Three-state photocycle: one open state, dark and light-adapted closed
    states.  Rates in 1/ms, conductance in mS/cm^2, reversal in mV."""

    k_d: float = 0.2
    k_r: float = 0.021
    g_chr2: float = 0.65
    v_chr2: float = 60.0

    def __post_init__(self):
        if self.k_d <= 0 or self.k_r <= 0 or self.g_chr2 <= 0:
            raise ValueError("ChR2ThreeParams requires positive rates and conductance")


@dataclass(frozen=True)
class ChR2FourParams:
    """Four-state photocycle with two open states of relative conductance rho."""

    k_d1: float = 0.13
    k_d2: float = 0.025
    e_12: float = 0.053
    e_21: float = 0.023
    k_r: float = 0.004
    eps1: float = 0.5
    eps2: float = 0.1
    rho: float = 0.05
    g_chr2: float = 0.65
    v_chr2: float = 60.0

    def __post_init__(self):
        if min(self.k_d1, self.k_d2, self.e_12, self.e_21, self.k_r) <= 0:
            raise ValueError("ChR2FourParams requires positive rates")
        if not (0.0 < self.rho < 1.0):
            raise ValueError("rho must lie in (0, 1)")
        if not (0.0 < self.eps1 <= 1.0 and 0.0 < self.eps2 <= 1.0):
            raise ValueError("eps1, eps2 must lie in (0, 1]")
        if self.g_chr2 <= 0:
            raise ValueError("g_chr2 must be positive")


@dataclass(frozen=True)
class ExternalCurrent:
    """Degenerate 'channel': the input is a current density in uA/cm^2."""


def external_current() -> ExternalCurrent:
    return ExternalCurrent()


ChannelParams = ChR2ThreeParams | ChR2FourParams | ExternalCurrent


def _simplex_check(state, total_max=1.0, slack=1e-7):
    s = np.asarray(state, dtype=float)
    if np.any(s < -slack) or s.sum() > total_max + slack:
        raise ValueError(f"channel state {s} outside the probability simplex")
    return s


def channel_dynamics_3(state, u: float, params: ChR2ThreeParams) -> np.ndarray:
    """Time derivative of (o, d) under light input u >= 0."""
    if u < 0:
        raise ValueError("light input must be nonnegative")
    o, d = _simplex_check(state)
    return np.array([u * (1.0 - o - d) - params.k_d * o,
                     params.k_d * o - params.k_r * d])


def channel_dynamics_4(state, u: float, params: ChR2FourParams) -> np.ndarray:
    """Time derivative of (o1, o2, c2) under light input u >= 0."""
    if u < 0:
        raise ValueError("light input must be nonnegative")
    o1, o2, c2 = _simplex_check(state)
    p = params
    return np.array([
        p.eps1 * u * (1.0 - o1 - o2 - c2) - (p.k_d1 + p.e_12) * o1 + p.e_21 * o2,
        p.eps2 * u * c2 + p.e_12 * o1 - (p.k_d2 + p.e_21) * o2,
        p.k_d2 * o2 - (p.eps2 * u + p.k_r) * c2,
    ])


def photocurrent(state, v: float, params: ChannelParams) -> float:
    """Channel current density g * (open fraction) * (v_rev - v)."""
    if isinstance(params, ChR2ThreeParams):
        o = _simplex_check(state)[0]
        return params.g_chr2 * o * (params.v_chr2 - v)
    if isinstance(params, ChR2FourParams):
        o1, o2, _ = _simplex_check(state)
        return params.g_chr2 * (o1 + params.rho * o2) * (params.v_chr2 - v)
    raise TypeError("photocurrent needs a ChR2 parameter set")


def physiological_umax(eps: float = 0.5, sigma_ret: float = 1e-8,
                       phi_flux: float = 6.2e9, w_loss: float = 1.1) -> float:
    """Peak light-driven transition rate in 1/ms.

    eps is the quantum efficiency, sigma_ret the retinal cross section in
    um^2, phi_flux the photon flux in photons/um^2/s and w_loss a loss
    factor; the product is converted from 1/s to 1/ms.
    """
    if min(eps, sigma_ret, phi_flux, w_loss) < 0 or w_loss == 0:
        raise ValueError("inputs must be positive (eps may be zero)")
    return eps * sigma_ret * phi_flux / w_loss * 1e-3


class ControlledSystem:
    """Single-input affine system dx/dt = F0(x) + u F1(x).

    Built by coupling a neuron model with a channel model; immutable and
    safe to share across threads.
    """

    __slots__ = ("model", "channel", "u_max", "mid", "cid", "mp", "cp",
                 "dim", "names")

    def __init__(self, model, channel, u_max, cid, cp, names):
        if u_max <= 0:
            raise ValueError("u_max must be positive")
        object.__setattr__(self, "model", model)
        object.__setattr__(self, "channel", channel)
        object.__setattr__(self, "u_max", float(u_max))
        object.__setattr__(self, "mid", model.mid)
        object.__setattr__(self, "cid", cid)
        object.__setattr__(self, "mp", model.mp)
        object.__setattr__(self, "cp", cp)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "dim", len(names))

    def __setattr__(self, *a):
        raise AttributeError("ControlledSystem is immutable")

    def __repr__(self):
        tags = {kernels.CH_NONE: "free", kernels.CH_3: "chr2-3",
                kernels.CH_4: "chr2-4", kernels.CH_RED: "reduced",
                kernels.CH_IEXT: "iext"}
        return f"ControlledSystem({self.model.kind}+{tags[self.cid]}, u_max={self.u_max})"

    @property
    def voltage_index(self) -> int:
        return 0

    @property
    def channel_dim(self) -> int:
        return self.dim - self.model.dim

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"state must have shape ({self.dim},)")
        return x

    def f(self, x, u: float) -> np.ndarray:
        out = np.empty(self.dim)
        kernels.field(self.mid, self.cid, self.mp, self.cp, self._check(x),
                      float(u), out)
        return out

    def f0(self, x) -> np.ndarray:
        return self.f(x, 0.0)

    def f1(self, x) -> np.ndarray:
        out = np.empty(self.dim)
        kernels.control_field(self.mid, self.cid, self.mp, self.cp,
                              self._check(x), out)
        return out

    def jac(self, x, u: float) -> np.ndarray:
        out = np.empty((self.dim, self.dim))
        kernels.field_jac(self.mid, self.cid, self.mp, self.cp,
                          self._check(x), float(u), out)
        return out

    def dark_channel_state(self) -> np.ndarray:
        return np.zeros(self.channel_dim)

    def initial_state(self, neuron_state=None) -> np.ndarray:
        """Neuron state (resting state by default) with the channel dark."""
        from .neurons import resting_state

        xn = resting_state(self.model) if neuron_state is None else np.asarray(neuron_state, float)
        return np.concatenate([xn, self.dark_channel_state()])


def couple(model: NeuronModel, channel: ChannelParams, u_max: float) -> ControlledSystem:
    """Attach a channel model to a neuron model.

    The photocurrent is added to the voltage equation scaled by 1/cap; light
    enters only through the channel kinetics, so the system is affine in u.
    """
    if isinstance(channel, ChR2ThreeParams):
        cp = np.array([channel.k_d, channel.k_r, channel.g_chr2, channel.v_chr2])
        names = model.names + ("o", "d")
        return ControlledSystem(model, channel, u_max, kernels.CH_3, cp, names)
    if isinstance(channel, ChR2FourParams):
        cp = np.array([channel.k_d1, channel.k_d2, channel.e_12, channel.e_21,
                       channel.k_r, channel.eps1, channel.eps2, channel.rho,
                       channel.g_chr2, channel.v_chr2])
        names = model.names + ("o1", "o2", "c2")
        return ControlledSystem(model, channel, u_max, kernels.CH_4, cp, names)
    if isinstance(channel, ExternalCurrent):
        return ControlledSystem(model, channel, u_max, kernels.CH_IEXT,
                                np.empty(0), model.names)
    raise TypeError(f"unsupported channel model: {channel!r}")


def goh_reduce(system: ControlledSystem) -> ControlledSystem:
    """Reduced system in which the open fraction o in [0, 1] acts as the
    control directly: dx/dt = f0(x) + o * (g/cap)(v_rev - v) e1.

    Only defined for three-state couplings; the light-adapted pool decouples
    from the neuron block and is dropped together with o.
    """
    if system.cid != kernels.CH_3:
        raise ValueError("goh_reduce applies to ChR2-3-state couplings only")
    ch = system.channel
    cp = np.array([ch.g_chr2, ch.v_chr2])
    return ControlledSystem(system.model, ch, 1.0, kernels.CH_RED, cp,
                            system.model.names)
