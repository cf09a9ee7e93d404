"""Fixed-step RK4 integration and the FitzHugh-Nagumo / Hodgkin-Huxley vector fields.

Hodgkin-Huxley quantities use the squid-axon convention: mV, ms, mS/cm^2,
uA/cm^2, uF/cm^2, resting potential near -65 mV.  The rate functions accept
floats, numpy arrays or tape nodes, so the same code feeds the integrator and
the training residuals.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import exp, exprel_inv
from .errors import NumericFailure, SingularParameterError

FN_STATE = ("v", "w")
HH_STATE = ("V", "n", "m", "h")


@dataclass(frozen=True)
class CurrentWaveform:
    """External current as a function of time.

    ``constant``: ``values[0]`` everywhere.
    ``step``: piecewise constant; ``values[k]`` holds on ``[times[k-1], times[k])``,
    so ``len(values) == len(times) + 1``.
    ``piecewise``: linear interpolation through ``(times, values)``, held
    constant outside the sampled range.
    """

    kind: str = "constant"
    values: tuple = (0.0,)
    times: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        if self.kind == "constant":
            if len(self.values) != 1:
                raise ValueError("constant waveform takes exactly one value")
        elif self.kind == "step":
            if len(self.values) != len(self.times) + 1:
                raise ValueError("step waveform needs len(values) == len(times) + 1")
        elif self.kind == "piecewise":
            if len(self.values) != len(self.times) or not self.times:
                raise ValueError("piecewise waveform needs matching non-empty times and values")
        else:
            raise ValueError(f"unknown waveform kind {self.kind!r}")
        if np.any(np.diff(self.times) < 0):
            raise ValueError("waveform times must be non-decreasing")

    @classmethod
    def constant(cls, value):
        return cls("constant", (value,))

    @classmethod
    def from_dict(cls, d):
        return cls(d.get("kind", "constant"), tuple(d.get("values", (0.0,))), tuple(d.get("times", ())))

    def to_dict(self):
        return {"kind": self.kind, "values": list(self.values), "times": list(self.times)}

    def __call__(self, t):
        if self.kind == "constant":
            if np.ndim(t):
                return np.full(np.shape(t), self.values[0])
            return self.values[0]
        if self.kind == "step":
            idx = np.searchsorted(self.times, t, side="right")
            return np.asarray(self.values)[idx] if np.ndim(t) else self.values[int(idx)]
        out = np.interp(t, self.times, self.values)
        return out if np.ndim(t) else float(out)


def fn_rhs(state, params, I_ext):
    """FitzHugh-Nagumo vector field ``(dv/dt, dw/dt)``.

    dv/dt = v - v^3 - w + R I_ext,   tau dw/dt = v + a - b w
    """
    if params.tau == 0:
        raise SingularParameterError("FitzHugh-Nagumo tau must be non-zero")
    v, w = state[0], state[1]
    dv = v - v ** 3 - w + params.R * I_ext
    dw = (v + params.a - params.b * w) / params.tau
    return dv, dw


def hh_rate_functions(V):
    """Opening/closing rates (1/ms) of the n, m, h gates at potential ``V`` (mV)."""
    return {
        "alpha_n": 0.1 * exprel_inv((V + 55.0) * 0.1),
        "beta_n": 0.125 * exp(-(V + 65.0) / 80.0),
        "alpha_m": 1.0 * exprel_inv((V + 40.0) * 0.1),
        "beta_m": 4.0 * exp(-(V + 65.0) / 18.0),
        "alpha_h": 0.07 * exp(-(V + 65.0) / 20.0),
        "beta_h": 1.0 / (1.0 + exp(-(V + 35.0) / 10.0)),
    }


def hh_steady_state(V):
    """``(n_inf, m_inf, h_inf)`` at fixed potential ``V``."""
    r = hh_rate_functions(V)
    return tuple(r[f"alpha_{g}"] / (r[f"alpha_{g}"] + r[f"beta_{g}"]) for g in "nmh")


def hh_rhs(state, params, I_ext):
    """Hodgkin-Huxley vector field ``(dV/dt, dn/dt, dm/dt, dh/dt)``."""
    if params.Cm == 0:
        raise SingularParameterError("Hodgkin-Huxley Cm must be non-zero")
    V, n, m, h = state[0], state[1], state[2], state[3]
    r = hh_rate_functions(V)
    i_ion = (params.gK * n ** 4 * (V - params.VK)
             + params.gNa * m ** 3 * h * (V - params.VNa)
             + params.gl * (V - params.Vl))
    dV = (I_ext - i_ion) / params.Cm
    dn = r["alpha_n"] * (1.0 - n) - r["beta_n"] * n
    dm = r["alpha_m"] * (1.0 - m) - r["beta_m"] * m
    dh = r["alpha_h"] * (1.0 - h) - r["beta_h"] * h
    return dV, dn, dm, dh


@dataclass
class Trajectory:
    t: np.ndarray
    y: np.ndarray
    columns: tuple

    def __len__(self):
        return len(self.t)

    def channel(self, name):
        return self.y[:, self.columns.index(name)]

    def to_csv(self, path):
        header = ",".join(("t",) + tuple(self.columns))
        data = np.column_stack([self.t, self.y])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


def rk4_integrate(rhs, state0, t0, t1, n_steps, waveform=None, substeps=1, columns=None):
    """Classic fourth-order Runge-Kutta on a fixed grid.

    ``rhs(state, I_ext)`` returns the derivative.  The returned trajectory has
    ``n_steps + 1`` rows starting at ``state0``; with ``substeps > 1`` each
    output interval is split into that many internal steps.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    if waveform is None:
        waveform = CurrentWaveform.constant(0.0)
    state = np.array(state0, dtype=float)
    if not np.isfinite(state).all():
        raise NumericFailure("non-finite initial state", step=0)
    times = np.linspace(t0, t1, n_steps + 1)
    out = np.empty((n_steps + 1, state.size))
    out[0] = state
    h = (t1 - t0) / (n_steps * substeps)

    def f(t, s):
        return np.array(rhs(s, waveform(t)), dtype=float)

    # overflow is reported below with the step index
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n_steps):
            t = times[i]
            for j in range(substeps):
                tj = t + j * h
                k1 = f(tj, state)
                k2 = f(tj + 0.5 * h, state + 0.5 * h * k1)
                k3 = f(tj + 0.5 * h, state + 0.5 * h * k2)
                k4 = f(tj + h, state + h * k3)
                state = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.isfinite(state).all():
                raise NumericFailure(f"non-finite state at step {i + 1}", step=i + 1)
            out[i + 1] = state
    if columns is None:
        columns = tuple(f"y{k}" for k in range(state.size))
    return Trajectory(times, out, tuple(columns))


def simulate_fn(params, state0, t0, t1, n_points, waveform=None, substeps=10):
    if waveform is None:
        waveform = CurrentWaveform.constant(params.I)
    rhs = lambda s, i: fn_rhs(s, params, i)  # noqa: E731
    return rk4_integrate(rhs, state0, t0, t1, n_points - 1, waveform, substeps, FN_STATE)


def simulate_hh(params, state0, t0, t1, n_points, waveform=None, substeps=10):
    if waveform is None:
        waveform = CurrentWaveform.constant(params.I)
    rhs = lambda s, i: hh_rhs(s, params, i)  # noqa: E731
    return rk4_integrate(rhs, state0, t0, t1, n_points - 1, waveform, substeps, HH_STATE)
