"""Model parameter vectors, ODE residuals, and unit scaling.

Training works in a rescaled frame: time maps affinely onto [-1, 1] and each
observed channel onto [-1, 1].  Trainable parameters are stored in that frame
too; :func:`denormalize_params` converts them back to the units of the data.
"""

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateWindowError
from .odeint import FN_STATE, HH_STATE, hh_rate_functions


@dataclass
class FnParams:
    a: float = -0.3
    b: float = 1.2
    tau: float = 20.0
    I: float = 0.28
    R: float = 1.0
    trainable: frozenset = frozenset({"a", "b", "tau", "I"})

    model = "fn"
    FIELDS = ("a", "b", "tau", "I", "R")
    STATE = FN_STATE


@dataclass
class HhParams:
    Cm: float = 1.0
    gK: float = 36.0
    gNa: float = 120.0
    gl: float = 0.3
    VK: float = -77.0
    VNa: float = 50.0
    Vl: float = -54.4
    V0: float = -65.0
    I: float = 0.0
    trainable: frozenset = frozenset({"Cm", "gK", "gNa", "gl", "VK", "VNa", "Vl", "V0"})

    model = "hh"
    FIELDS = ("Cm", "gK", "gNa", "gl", "VK", "VNa", "Vl", "V0", "I")
    STATE = HH_STATE


# Row labels and order of the parameter statistics table.
HH_TABLE_ROWS = {"Cm": "Cm", "gk": "gK", "gNa": "gNa", "gl": "gl", "vk": "VK",
                 "vNa": "VNa", "vl": "Vl", "v0": "V0", "i": "I"}
FN_TABLE_ROWS = {"I": "I", "a": "a", "b": "b", "tau": "tau"}

MODELS = {"fn": FnParams, "hh": HhParams}


def params_class(model):
    try:
        return MODELS[model]
    except KeyError:
        raise ValueError(f"unknown model {model!r}; expected one of {sorted(MODELS)}") from None


def make_params(model, values=None, trainable=None):
    cls = params_class(model)
    values = dict(values or {})
    unknown = set(values) - set(cls.FIELDS)
    if unknown:
        raise ValueError(f"unknown {model} parameters: {sorted(unknown)}")
    kwargs = {k: float(v) for k, v in values.items()}
    if trainable is not None:
        bad = set(trainable) - set(cls.FIELDS)
        if bad:
            raise ValueError(f"unknown trainable {model} parameters: {sorted(bad)}")
        kwargs["trainable"] = frozenset(trainable)
    return cls(**kwargs)


def param_values(params):
    return {name: getattr(params, name) for name in params.FIELDS}


def replace_values(params, values):
    return dataclasses.replace(params, **values)


@dataclass(frozen=True)
class ScalingSpec:
    """Affine maps between data units and the training frame.

    ``time_unit`` is the length (in data time units) of one model time unit;
    the model equations are written in model time.  ``g_scale`` is the
    conductance unit used for normalized Hodgkin-Huxley parameters.
    """

    t_shift: float = 0.0
    t_scale: float = 1.0
    channels: dict = field(default_factory=dict)
    time_unit: float = 1.0
    g_scale: float = 1.0

    def __post_init__(self):
        if not self.t_scale > 0 or not self.time_unit > 0 or not self.g_scale > 0:
            raise ValueError("scales must be positive")
        for name, (_, scale) in self.channels.items():
            if not scale > 0:
                raise ValueError(f"scale of channel {name!r} must be positive")

    @property
    def model_time_scale(self):
        """Model time elapsed per unit of normalized time."""
        return self.t_scale / self.time_unit

    def channel(self, name):
        return self.channels.get(name, (0.0, 1.0))

    def to_norm_time(self, t):
        return (np.asarray(t, dtype=float) - self.t_shift) / self.t_scale

    def from_norm_time(self, s):
        return self.t_shift + self.t_scale * np.asarray(s, dtype=float)

    def normalize(self, name, x):
        shift, scale = self.channel(name)
        return (np.asarray(x, dtype=float) - shift) / scale

    def denormalize(self, name, x):
        shift, scale = self.channel(name)
        return shift + scale * np.asarray(x, dtype=float)

    def with_channels(self, **channels):
        merged = dict(self.channels)
        merged.update(channels)
        return dataclasses.replace(self, channels=merged)

    def to_dict(self):
        return {"t_shift": self.t_shift, "t_scale": self.t_scale,
                "channels": {k: [float(s), float(c)] for k, (s, c) in self.channels.items()},
                "time_unit": self.time_unit, "g_scale": self.g_scale}

    @classmethod
    def from_dict(cls, d):
        channels = {k: (float(v[0]), float(v[1])) for k, v in d.get("channels", {}).items()}
        return cls(float(d.get("t_shift", 0.0)), float(d.get("t_scale", 1.0)), channels,
                   float(d.get("time_unit", 1.0)), float(d.get("g_scale", 1.0)))


def unit_affine(x):
    """``(shift, scale)`` sending min(x) to -1 and max(x) to +1."""
    x = np.asarray(x, dtype=float)
    lo, hi = float(np.min(x)), float(np.max(x))
    if not hi > lo:
        raise DegenerateWindowError("window has zero range (max == min)")
    return 0.5 * (hi + lo), 0.5 * (hi - lo)


def fit_scaling(t, channels=None, time_unit=1.0, g_scale=1.0):
    """Auto-fit a :class:`ScalingSpec` so that ``t`` and each channel span [-1, 1]."""
    t_shift, t_scale = unit_affine(t)
    fitted = {name: unit_affine(x) for name, x in (channels or {}).items()}
    return ScalingSpec(t_shift, t_scale, fitted, float(time_unit), float(g_scale))


def normalize(t, channels, spec):
    return spec.to_norm_time(t), {k: spec.normalize(k, v) for k, v in channels.items()}


def denormalize(s, channels, spec):
    return spec.from_norm_time(s), {k: spec.denormalize(k, v) for k, v in channels.items()}


def param_affine(params, name, spec):
    """``(offset, scale)`` with physical = offset + scale * normalized for one field."""
    k = spec.model_time_scale
    if params.model == "fn":
        return (0.0, k) if name == "tau" else (0.0, 1.0)
    v_shift, v_scale = spec.channel("V")
    g = spec.g_scale
    if name in ("VK", "VNa", "Vl", "V0"):
        return v_shift, v_scale
    if name in ("gK", "gNa", "gl"):
        return 0.0, g
    if name == "Cm":
        return 0.0, g * k
    if name == "I":
        return 0.0, g * v_scale
    raise KeyError(name)


def normalize_params(params, spec):
    if spec is None:
        raise ValueError("a ScalingSpec is required to normalize parameters")
    out = {}
    for name in params.FIELDS:
        offset, scale = param_affine(params, name, spec)
        out[name] = (getattr(params, name) - offset) / scale
    return replace_values(params, out)


def denormalize_params(params, spec):
    """Map parameters held in the training frame back to data units."""
    if spec is None:
        raise ValueError("a ScalingSpec is required to denormalize parameters")
    out = {}
    for name in params.FIELDS:
        offset, scale = param_affine(params, name, spec)
        out[name] = offset + scale * getattr(params, name)
    return replace_values(params, out)


def fn_residual(u, du_dt, params, I_ext):
    """FitzHugh-Nagumo residuals; zero on exact solutions."""
    v, w = u
    dv, dw = du_dt
    r1 = dv - (v - v ** 3 - w + params.R * I_ext)
    r2 = params.tau * dw - (v + params.a - params.b * w)
    return r1, r2


def hh_residual(u, du_dt, params, I_ext):
    """Hodgkin-Huxley residuals (membrane current balance, then n, m, h).

    ``u`` must hold the membrane potential in data units (mV); the rate
    functions are evaluated on it directly.
    """
    V, n, m, h = u
    dV, dn, dm, dh = du_dt
    r = hh_rate_functions(V)
    r_V = (params.Cm * dV
           + params.gK * n ** 4 * (V - params.VK)
           + params.gNa * m ** 3 * h * (V - params.VNa)
           + params.gl * (V - params.Vl)
           - I_ext)
    r_n = dn - (r["alpha_n"] * (1.0 - n) - r["beta_n"] * n)
    r_m = dm - (r["alpha_m"] * (1.0 - m) - r["beta_m"] * m)
    r_h = dh - (r["alpha_h"] * (1.0 - h) - r["beta_h"] * h)
    return r_V, r_n, r_m, r_h


def residual(params, u, du_dt, I_ext):
    if params.model == "fn":
        return fn_residual(u, du_dt, params, I_ext)
    return hh_residual(u, du_dt, params, I_ext)


def residual_scales(params, spec):
    """Per-equation factors that bring residuals to the training frame."""
    if params.model == "fn":
        return (1.0, 1.0)
    k = spec.model_time_scale
    return (1.0 / (spec.g_scale * spec.channel("V")[1]), k, k, k)


def params_to_dict(params, spec=None):
    """JSON-ready description: normalized value, trainable flag, physical value."""
    norm = normalize_params(params, spec) if spec is not None else params
    fields = {
        name: {"value": float(getattr(norm, name)),
               "trainable": name in params.trainable,
               "physical_value": float(getattr(params, name))}
        for name in params.FIELDS
    }
    return {"model": params.model, "fields": fields,
            "scaling": spec.to_dict() if spec is not None else None}


def params_to_json(params, spec=None):
    return json.dumps(params_to_dict(params, spec), indent=2)


def params_from_dict(d):
    cls = params_class(d["model"])
    fields = d["fields"]
    values = {k: float(v["physical_value"]) for k, v in fields.items()}
    trainable = frozenset(k for k, v in fields.items() if v.get("trainable"))
    return cls(**values, trainable=trainable)
