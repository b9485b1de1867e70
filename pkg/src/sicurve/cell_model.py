"""Parsimonious rabbit ventricular action-potential model (three states).

The model carries a fast inward sodium current gated by m^3 h and a single
outward potassium current whose conductance decays exponentially away from
the potassium reversal potential:

    I_Na = g_Na_max * m^3 * h * (V - E_Na)
    I_K  = g_K * exp(-(V - E_K) / k_r) * (V - E_K)

    m_inf(V)  = 1 / (1 + exp(-(V - E_m) / k_m)),   tau_m constant
    h_inf(V)  = 1 / (1 + exp( (V - E_h) / k_h))
    tau_h(V)  = 2 * tau_h0 * exp(delta_h * (V - E_h) / k_h) / (1 + exp((V - E_h) / k_h))

Units: mV, ms, mS/mm^2; current densities in uA/mm^2.  Stimulus currents are
given per unit membrane capacitance (uA/uF), so they add to dV/dt directly
in mV/ms, with depolarizing (cathodal) stimulation positive.

State arrays are vectorized: V, m, h may be scalars or equal-shape ndarrays.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


class IntegrationBlowup(RuntimeError):
    """Raised when a reaction substep produces a non-finite state."""

    def __init__(self, state):
        super().__init__("non-finite values in cell state")
        self.state = state


@dataclass(frozen=True)
class CellParams:
    V_rest: float = -83.0       # mV
    g_Na_max: float = 0.11      # mS/mm^2
    E_Na: float = 65.0          # mV
    E_K: float = -83.0          # mV
    E_h: float = -74.7          # mV
    E_m: float = -41.0          # mV
    k_m: float = 4.0            # mV
    k_r: float = 21.28          # mV
    k_h: float = 4.4            # mV
    tau_m: float = 0.12         # ms
    tau_h0: float = 6.80738     # ms
    delta_h: float = 0.799163   # dimensionless
    g_K: float = 0.003          # mS/mm^2
    C_m: float = 0.01           # uF/mm^2

    def __post_init__(self):
        for name in ("g_Na_max", "g_K", "k_m", "k_r", "k_h", "tau_m", "tau_h0", "C_m"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class CellState:
    """Membrane potential and sodium gates; arrays share one shape."""

    V: np.ndarray
    m: np.ndarray
    h: np.ndarray

    def copy(self) -> "CellState":
        return CellState(np.array(self.V), np.array(self.m), np.array(self.h))


def m_inf(p: CellParams, V):
    return 1.0 / (1.0 + np.exp(-(V - p.E_m) / p.k_m))


def h_inf(p: CellParams, V):
    return 1.0 / (1.0 + np.exp((V - p.E_h) / p.k_h))


def tau_h(p: CellParams, V):
    x = (V - p.E_h) / p.k_h
    return 2.0 * p.tau_h0 * np.exp(p.delta_h * x) / (1.0 + np.exp(x))


def steady_state(p: CellParams, V: float, n: int | None = None) -> CellState:
    """Clamped-V fixed point of the gating dynamics; optionally n sites."""
    if n is not None:
        V = np.full(n, float(V))
    V = np.asarray(V, dtype=float)
    return CellState(V=V, m=m_inf(p, V), h=h_inf(p, V))


def ionic_current(p: CellParams, s: CellState):
    """Total I_Na + I_K (uA/mm^2); positive total current repolarizes."""
    i_na = p.g_Na_max * s.m**3 * s.h * (s.V - p.E_Na)
    i_k = p.g_K * np.exp(-(s.V - p.E_K) / p.k_r) * (s.V - p.E_K)
    return i_na + i_k


def _check_finite(s: CellState) -> CellState:
    if not (np.all(np.isfinite(s.V)) and np.all(np.isfinite(s.m)) and np.all(np.isfinite(s.h))):
        raise IntegrationBlowup(s)
    return s


def reaction_substep_fe(p: CellParams, s: CellState, I_stim, dt_sub: float,
                        clamp_counter: list | None = None) -> CellState:
    """One forward-Euler update of (V, m, h); gates clamped to [0, 1]."""
    if dt_sub < 0:
        raise ValueError("dt_sub must be >= 0")
    if dt_sub == 0:
        return s.copy()
    dV = -ionic_current(p, s) / p.C_m + I_stim
    m = s.m + dt_sub * (m_inf(p, s.V) - s.m) / p.tau_m
    h = s.h + dt_sub * (h_inf(p, s.V) - s.h) / tau_h(p, s.V)
    clipped_m, clipped_h = np.clip(m, 0.0, 1.0), np.clip(h, 0.0, 1.0)
    if clamp_counter is not None:
        clamp_counter[0] += int(np.count_nonzero(clipped_m != m))
        clamp_counter[0] += int(np.count_nonzero(clipped_h != h))
    return _check_finite(CellState(V=s.V + dt_sub * dV, m=clipped_m, h=clipped_h))


def reaction_substep_rl(p: CellParams, s: CellState, I_stim, dt_sub: float) -> CellState:
    """Rush-Larsen gate update (exact for frozen V) with forward-Euler V."""
    if dt_sub < 0:
        raise ValueError("dt_sub must be >= 0")
    if dt_sub == 0:
        return s.copy()
    dV = -ionic_current(p, s) / p.C_m + I_stim
    mi, hi = m_inf(p, s.V), h_inf(p, s.V)
    m = mi + (s.m - mi) * np.exp(-dt_sub / p.tau_m)
    h = hi + (s.h - hi) * np.exp(-dt_sub / tau_h(p, s.V))
    return _check_finite(CellState(V=s.V + dt_sub * dV, m=m, h=h))


def reaction_steps(p: CellParams, s: CellState, I_stim, dt: float, M: int,
                   use_rl: bool, clamp_counter: list | None = None) -> CellState:
    """M equal reaction substeps spanning dt (the split's explicit half).

    Large nodal arrays take a low-allocation vectorized path; the per-substep
    reference path handles everything else and any case that needs clamp
    accounting.
    """
    dt_sub = dt / M
    if (clamp_counter is None and isinstance(s.V, np.ndarray)
            and s.V.ndim == 1 and len(s.V) >= 1024):
        return _reaction_steps_fast(p, s, I_stim, dt_sub, M, use_rl)
    for _ in range(M):
        if use_rl:
            s = reaction_substep_rl(p, s, I_stim, dt_sub)
        else:
            s = reaction_substep_fe(p, s, I_stim, dt_sub, clamp_counter)
    return s


def _reaction_steps_fast(p: CellParams, s: CellState, I_stim,
                         dt_sub: float, M: int, use_rl: bool) -> CellState:
    """In-place substep loop; same update rule as the reference substeps."""
    V, m, h = s.V.copy(), s.m.copy(), s.h.copy()
    n = len(V)
    dV, t1, t2, minf, hinf, tauh = (np.empty(n) for _ in range(6))
    exp_m = np.exp(-dt_sub / p.tau_m)  # RL gate factor, constant tau_m
    for _ in range(M):
        # I_Na + I_K, negated and scaled into dV
        np.subtract(V, p.E_Na, out=t1)
        np.multiply(m, m, out=dV)
        np.multiply(dV, m, out=dV)
        np.multiply(dV, h, out=dV)
        np.multiply(dV, t1, out=dV)
        dV *= p.g_Na_max
        np.subtract(V, p.E_K, out=t1)
        np.multiply(t1, -1.0 / p.k_r, out=t2)
        np.exp(t2, out=t2)
        t2 *= p.g_K
        t2 *= t1
        dV += t2
        dV *= -1.0 / p.C_m
        dV += I_stim
        # gate targets and time constants
        np.subtract(V, p.E_m, out=t1)
        t1 *= -1.0 / p.k_m
        np.exp(t1, out=t1)
        t1 += 1.0
        np.divide(1.0, t1, out=minf)
        np.subtract(V, p.E_h, out=t1)
        t1 *= 1.0 / p.k_h
        np.multiply(t1, p.delta_h, out=t2)
        np.exp(t2, out=tauh)
        tauh *= 2.0 * p.tau_h0
        np.exp(t1, out=t1)
        t1 += 1.0
        np.divide(1.0, t1, out=hinf)
        tauh *= hinf  # tauh = 2 tau_h0 exp(delta_h x) / (1 + exp(x))
        if use_rl:
            m -= minf
            m *= exp_m
            m += minf
            np.divide(-dt_sub, tauh, out=t1)
            np.exp(t1, out=t1)
            h -= hinf
            h *= t1
            h += hinf
        else:
            minf -= m
            minf *= dt_sub / p.tau_m
            m += minf
            np.clip(m, 0.0, 1.0, out=m)
            hinf -= h
            hinf *= dt_sub
            hinf /= tauh
            h += hinf
            np.clip(h, 0.0, 1.0, out=h)
        np.multiply(dV, dt_sub, out=t1)
        V += t1
    return _check_finite(CellState(V=V, m=m, h=h))


