"""Physics-informed training: collocation sets, the three loss terms, and the fit loop.

The network maps normalized time to normalized state channels.  Residuals are
evaluated after mapping outputs and their time derivatives back to data units,
then multiplied by :func:`neurofit.models.residual_scales`.
"""

import dataclasses
import json
import logging
from contextlib import nullcontext
from dataclasses import dataclass, field

import numpy as np

from . import models
from .autodiff import Tape
from .errors import NumericFailure
from .nn import AdamState, NetworkParams, NetworkSpec, adam_step, forward, init_glorot, predict
from .odeint import CurrentWaveform, hh_steady_state

log = logging.getLogger(__name__)

MODES = ("forward", "inverse")


@dataclass
class Observations:
    """Measured series in data units; ``values`` maps state channel -> samples."""

    t: np.ndarray
    values: dict
    current: np.ndarray = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.values = {k: np.asarray(v, dtype=float) for k, v in self.values.items()}
        if self.current is not None:
            self.current = np.asarray(self.current, dtype=float)
        for k, v in self.values.items():
            if v.shape != self.t.shape:
                raise ValueError(f"channel {k!r} has {v.size} samples, expected {self.t.size}")

    def __len__(self):
        return len(self.t)


@dataclass
class TrainConfig:
    model: str = "fn"
    mode: str = "inverse"
    params: object = None
    hidden_layers: int = 3
    hidden_width: int = 40
    epochs: int = 20000
    lr: float = 1e-3
    weights: tuple = (1.0, 1.0, 1.0)
    n_f: int = 100
    n_m: int = 30
    seed: int = 0
    log_interval: int = 100
    initial_state: dict = None
    observed: tuple = None
    domain: tuple = None
    time_unit: object = 1.0
    g_scale: float = 1.0
    channel_scaling: dict = None
    waveform: object = None
    n_dense: int = 300
    deterministic: bool = True
    restore_best: bool = True

    def __post_init__(self):
        if self.params is None:
            self.params = models.params_class(self.model)()
        if self.params.model != self.model:
            raise ValueError(f"params are for {self.params.model!r}, config model is {self.model!r}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if len(self.weights) != 3 or min(self.weights) < 0:
            raise ValueError("weights must be three non-negative numbers")
        if self.n_f < 1:
            raise ValueError("n_f must be >= 1")
        if self.log_interval < 1:
            raise ValueError("log_interval must be >= 1")
        self.weights = tuple(float(w) for w in self.weights)
        if isinstance(self.waveform, dict):
            self.waveform = CurrentWaveform.from_dict(self.waveform)

    @property
    def network_spec(self):
        n_out = len(self.params.STATE)
        return NetworkSpec(1, self.hidden_layers, self.hidden_width, n_out, "tanh")

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["params"] = models.param_values(self.params)
        d["trainable"] = sorted(self.params.trainable)
        d["weights"] = list(self.weights)
        d["waveform"] = self.waveform.to_dict() if self.waveform is not None else None
        d["domain"] = list(self.domain) if self.domain is not None else None
        d["observed"] = list(self.observed) if self.observed is not None else None
        return d

    @classmethod
    def from_dict(cls, d):
        """Build from the JSON schema used by the CLI (``params`` + ``trainable``)."""
        d = dict(d)
        model = d.get("model", "fn")
        values = d.pop("params", None)
        trainable = d.pop("trainable", None)
        if isinstance(values, (models.FnParams, models.HhParams)):
            d["params"] = values
        else:
            d["params"] = models.make_params(model, values, trainable)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        for key in ("weights", "domain", "observed"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class CollocationSet:
    """Point sets in normalized time.

    ``tau_f``: residual points.  ``tau_b``: initial-condition points.
    ``tau_m``: measurement times, taken from the data at ``m_index``.
    """

    tau_f: np.ndarray
    tau_b: np.ndarray
    tau_m: np.ndarray = field(default_factory=lambda: np.zeros(0))
    m_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def measurement_indices(n_data, n_m):
    """``n_m`` equally spaced indices over ``n_data`` samples, starting at 0."""
    if n_m > n_data:
        raise ValueError(f"n_m={n_m} exceeds the {n_data} available samples")
    if n_m < 1:
        return np.zeros(0, dtype=int)
    return (np.arange(n_m) * n_data) // n_m


def sample_collocation(domain, n_f, n_b=1, data_t=None, n_m=0, seed=0):
    """Draw residual points uniformly in ``domain`` and pick measurement points.

    Only initial conditions are imposed, so ``tau_b`` holds the domain start.
    """
    s0, s1 = float(domain[0]), float(domain[1])
    if not s1 > s0:
        raise ValueError("collocation domain is empty")
    if n_b != 1:
        raise ValueError("only the initial condition is supported as a boundary (n_b = 1)")
    rng = np.random.default_rng(seed)
    tau_f = rng.uniform(s0, s1, size=n_f)
    tau_b = np.array([s0])
    if data_t is None or n_m == 0:
        return CollocationSet(tau_f, tau_b)
    data_t = np.asarray(data_t, dtype=float)
    idx = measurement_indices(len(data_t), n_m)
    return CollocationSet(tau_f, tau_b, data_t[idx], idx)


@dataclass
class FitProblem:
    """Everything the loss needs that stays fixed during training."""

    template: object
    spec: models.ScalingSpec
    cset: CollocationSet
    current_f: object
    b_targets: dict
    m_values: np.ndarray
    observed: tuple
    weights: tuple
    mode: str

    @property
    def state(self):
        return self.template.STATE


def _physical_params(problem, lam):
    """Parameter object whose trainable fields are tape nodes in data units."""
    p = problem.template
    values = {}
    for name, var in lam.items():
        offset, scale = models.param_affine(p, name, problem.spec)
        values[name] = offset + scale * var
    return models.replace_values(p, values)


def _current_at_f(problem, params):
    if problem.current_f is not None:
        return problem.current_f
    return params.I


def loss_physics(layers, params, problem):
    """Mean over residual points of the squared norm of the scaled residual vector."""
    tape = layers[0][0].tape
    out = forward(layers, tape.lift_input(problem.cset.tau_f, is_time=True))
    spec = problem.spec
    k = spec.model_time_scale
    u, du = [], []
    for j, name in enumerate(problem.state):
        shift, scale = spec.channel(name)
        u.append(shift + scale * out.primal[:, j])
        du.append((scale / k) * out.tangent[:, j])
    res = models.residual(params, u, du, _current_at_f(problem, params))
    total = None
    for r, c in zip(res, models.residual_scales(params, spec)):
        term = (r * c) ** 2
        total = term if total is None else total + term
    return total.mean()


def boundary_targets(problem, params):
    """Normalized initial-state targets; entries may be tape nodes."""
    targets = dict(problem.b_targets)
    if params.model == "hh":
        V0 = params.V0
        targets["V"] = (V0 - problem.spec.channel("V")[0]) / problem.spec.channel("V")[1]
        steady = hh_steady_state(V0)
        for g, x in zip("nmh", steady):
            if targets.get(g) is None:
                shift, scale = problem.spec.channel(g)
                targets[g] = (x - shift) / scale
    return {k: v for k, v in targets.items() if v is not None}


def loss_boundary(layers, params, problem):
    """Mean over boundary points of the summed squared deviation from the targets."""
    tape = layers[0][0].tape
    out = forward(layers, tape.lift_input(problem.cset.tau_b)).primal
    targets = boundary_targets(problem, params)
    total = None
    for j, name in enumerate(problem.state):
        if name not in targets:
            continue
        term = ((out[:, j] - targets[name]) ** 2).sum()
        total = term if total is None else total + term
    if total is None:
        return tape.constant(0.0)
    return total * (1.0 / len(problem.cset.tau_b))


def loss_data(layers, problem):
    """Mean over measurement points of the squared error on observed channels."""
    if problem.mode != "inverse":
        raise ValueError("the data term is only defined for inverse problems")
    tape = layers[0][0].tape
    out = forward(layers, tape.lift_input(problem.cset.tau_m)).primal
    total = None
    for j, name in enumerate(problem.state):
        if name not in problem.observed:
            continue
        col = problem.observed.index(name)
        term = ((out[:, j] - problem.m_values[:, col]) ** 2).sum()
        total = term if total is None else total + term
    return total * (1.0 / len(problem.cset.tau_m))


def total_loss(components, weights):
    """Weighted sum ``w_f L_f + w_b L_b + w_m L_m``; absent terms count as 0."""
    total = 0.0
    for c, w in zip(components, weights):
        if c is None or w == 0:
            continue
        total = total + w * c
    return total


def evaluate(theta, lam, problem):
    """Build one tape and return ``(tape, leaves, losses)``.

    ``theta`` is a :class:`NetworkParams`; ``lam`` maps trainable field names to
    normalized values.
    """
    tape = Tape()
    layers = theta.attach(tape)
    lam_vars = {name: tape.variable(x) for name, x in lam.items()}
    params = _physical_params(problem, lam_vars)
    w_f, w_b, w_m = problem.weights
    lf = loss_physics(layers, params, problem)
    lb = loss_boundary(layers, params, problem)
    lm = loss_data(layers, problem) if problem.mode == "inverse" else None
    total = total_loss((lf, lb, lm), (w_f, w_b, w_m if problem.mode == "inverse" else 0.0))
    if not hasattr(total, "tape"):
        total = tape.constant(total)
    losses = {"total": total, "physics": lf, "boundary": lb, "data": lm}
    return tape, layers, lam_vars, losses


def _loss_values(losses):
    return {k: (float(v.value) if v is not None else 0.0) for k, v in losses.items()}


@dataclass
class FitResult:
    config: TrainConfig
    theta: NetworkParams
    spec: models.ScalingSpec
    params: object
    params_normalized: object
    loss_history: list
    lambda_trajectory: list
    reconstruction: dict
    status: str = "ok"
    failure_epoch: int = None
    message: str = ""
    best_epoch: int = 0
    best_loss: float = float("inf")

    def to_dict(self):
        return {
            "status": self.status,
            "failure_epoch": self.failure_epoch,
            "message": self.message,
            "model": self.params.model,
            "lambda": models.params_to_dict(self.params, self.spec),
            "best_epoch": self.best_epoch,
            "best_loss": self.best_loss,
            "final_loss": self.loss_history[-1] if self.loss_history else None,
            "loss_history": self.loss_history,
            "config": self.config.to_dict(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write_trajectory_csv(self, path):
        cols = ["t"] + list(self.params.STATE)
        data = np.column_stack([self.reconstruction[c] for c in cols])
        np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")

    def write_lambda_csv(self, path):
        fields = list(self.params.FIELDS)
        rows = [[row["epoch"]] + [row[f] for f in fields] for row in self.lambda_trajectory]
        np.savetxt(path, np.asarray(rows, dtype=float), delimiter=",",
                   header=",".join(["epoch"] + fields), comments="", fmt="%.17g")

    def write_loss_csv(self, path):
        keys = ["epoch", "total", "physics", "boundary", "data", "best_total"]
        rows = [[row[k] for k in keys] for row in self.loss_history]
        np.savetxt(path, np.asarray(rows, dtype=float), delimiter=",",
                   header=",".join(keys), comments="", fmt="%.17g")


def _resolve_spec(config, data, t0, t1):
    t_shift, t_scale = 0.5 * (t0 + t1), 0.5 * (t1 - t0)
    channels = {}
    if data is not None:
        for name, values in data.values.items():
            channels[name] = models.unit_affine(values)
    for name, pair in (config.channel_scaling or {}).items():
        channels[name] = (float(pair[0]), float(pair[1]))
    if config.time_unit == "window":
        time_unit = t_scale
    else:
        time_unit = float(config.time_unit)
    return models.ScalingSpec(t_shift, t_scale, channels, time_unit, float(config.g_scale))


def build_problem(config, data=None):
    """Resolve scaling, collocation and targets for ``config`` and ``data``."""
    template = config.params
    if config.mode == "inverse":
        if data is None or len(data) == 0:
            raise ValueError("inverse mode needs observations")
    else:
        template = dataclasses.replace(template, trainable=frozenset())
    if config.domain is not None:
        t0, t1 = map(float, config.domain)
    elif data is not None:
        t0, t1 = float(data.t[0]), float(data.t[-1])
    else:
        raise ValueError("forward mode without data needs an explicit domain")
    if not t1 > t0:
        raise ValueError("training domain is empty")

    state = template.STATE
    observed = ()
    if data is not None:
        observed = tuple(c for c in state if c in data.values)
        if config.observed is not None:
            missing = set(config.observed) - set(observed)
            if missing:
                raise ValueError(f"observed channels not in data: {sorted(missing)}")
            observed = tuple(c for c in state if c in config.observed)
        if config.mode == "inverse" and not observed:
            raise ValueError(f"data carries none of the {template.model} state channels {state}")
        data = Observations(data.t, {c: data.values[c] for c in observed}, data.current)

    spec = _resolve_spec(config, data, t0, t1)
    data_s = spec.to_norm_time(data.t) if data is not None else None
    n_m = config.n_m if config.mode == "inverse" else 0
    cset = sample_collocation(spec.to_norm_time([t0, t1]), config.n_f, 1,
                              data_s, n_m, config.seed)
    m_values = np.zeros((0, len(observed)))
    if n_m:
        m_values = np.column_stack([spec.normalize(c, data.values[c][cset.m_index])
                                    for c in observed])

    t_f = spec.from_norm_time(cset.tau_f)
    if config.waveform is not None:
        current_f = np.asarray(config.waveform(t_f), dtype=float)
    elif data is not None and data.current is not None:
        current_f = np.interp(t_f, data.t, data.current)
    else:
        current_f = None

    init = dict(config.initial_state or {})
    unknown = set(init) - set(state)
    if unknown:
        raise ValueError(f"initial_state has unknown channels {sorted(unknown)}")
    if template.model == "hh" and "V" in init:
        template = dataclasses.replace(template, V0=float(init.pop("V")))
    b_targets = {}
    for name in state:
        if template.model == "hh" and name == "V":
            continue
        if init.get(name) is not None:
            b_targets[name] = float(spec.normalize(name, init[name]))
        elif data is not None and name in observed:
            b_targets[name] = float(spec.normalize(name, data.values[name][0]))
        else:
            b_targets[name] = None
    weights = config.weights if config.mode == "inverse" else config.weights[:2] + (0.0,)
    return FitProblem(template, spec, cset, current_f, b_targets, m_values,
                      observed, weights, config.mode)


def _threadpool_limit(deterministic):
    if not deterministic:
        return nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return nullcontext()
    return threadpool_limits(1)


def train(config, data=None, progress=None):
    """Jointly fit network weights and trainable parameters with full-batch Adam.

    One epoch is one optimizer step over all collocation, boundary and
    measurement points.  On a non-finite loss or gradient the fit stops and
    returns the last finite state with ``status == "numeric_failure"``.
    """
    with _threadpool_limit(config.deterministic):
        return _train(config, data, progress)


def _train(config, data, progress):
    problem = build_problem(config, data)
    spec = problem.spec
    template = problem.template
    theta = init_glorot(config.network_spec, config.seed)
    lam_norm = models.normalize_params(template, spec)
    lam = {name: np.array(float(getattr(lam_norm, name)))
           for name in template.FIELDS if name in template.trainable}

    trainables = theta.named()
    for name, x in lam.items():
        trainables[f"lambda.{name}"] = x
    state = AdamState(lr=config.lr)

    history, trajectory = [], []
    best_loss, best_epoch = float("inf"), 0
    status, failure_epoch, message = "ok", None, ""

    best_state = None

    def record(epoch, values):
        nonlocal best_loss, best_epoch, best_state
        if values["total"] < best_loss:
            best_loss, best_epoch = values["total"], epoch
            if config.restore_best:
                best_state = {k: v.copy() for k, v in trainables.items()}
        return values

    def snapshot(epoch, values):
        row = {"epoch": epoch}
        row.update(values)
        row["best_total"] = best_loss
        history.append(row)
        phys = models.denormalize_params(
            models.replace_values(lam_norm, {k: float(v) for k, v in lam.items()}), spec)
        entry = {"epoch": epoch}
        entry.update({k: float(v) for k, v in models.param_values(phys).items()})
        trajectory.append(entry)

    epoch = 0
    # overflow is caught by the tape's finiteness checks, not by numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            for epoch in range(config.epochs):
                tape, layers, lam_vars, losses = evaluate(theta, lam, problem)
                values = record(epoch, _loss_values(losses))
                if epoch % config.log_interval == 0:
                    snapshot(epoch, values)
                    if progress is not None:
                        progress(epoch, values)
                adj = tape.backward(losses["total"])
                grads = {}
                for i, (w, b) in enumerate(layers):
                    grads[f"W{i}"] = adj[w.id]
                    grads[f"b{i}"] = adj[b.id]
                for name, var in lam_vars.items():
                    grads[f"lambda.{name}"] = adj[var.id]
                adam_step(trainables, grads, state)
            epoch = config.epochs
            _, _, _, losses = evaluate(theta, lam, problem)
            values = record(epoch, _loss_values(losses))
            if best_state is not None and best_epoch != epoch:
                for k, v in best_state.items():
                    trainables[k][...] = v
                _, _, _, losses = evaluate(theta, lam, problem)
                values = _loss_values(losses)
            snapshot(epoch, values)
        except NumericFailure as exc:
            status, failure_epoch = "numeric_failure", epoch
            message = f"numeric failure at epoch {epoch}: {exc}"
            log.warning(message)
            if not history or history[-1]["epoch"] != epoch:
                nan = float("nan")
                snapshot(epoch, {"total": nan, "physics": nan, "boundary": nan, "data": nan})

    final_norm = models.replace_values(lam_norm, {k: float(v) for k, v in lam.items()})
    final = models.denormalize_params(final_norm, spec)
    return FitResult(
        config=config,
        theta=theta,
        spec=spec,
        params=final,
        params_normalized=final_norm,
        loss_history=history,
        lambda_trajectory=trajectory,
        reconstruction=reconstruct(theta, spec, final.STATE, config.n_dense),
        status=status,
        failure_epoch=failure_epoch,
        message=message,
        best_epoch=best_epoch,
        best_loss=best_loss,
    )


def reconstruct(theta, spec, state, n=300):
    """Network prediction on a dense grid over the training domain, in data units."""
    s = np.linspace(-1.0, 1.0, n)
    out, _ = predict(theta, s)
    rec = {"t": spec.from_norm_time(s)}
    for j, name in enumerate(state):
        rec[name] = spec.denormalize(name, out[:, j])
    return rec
