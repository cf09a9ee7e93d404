"""``neurofit`` command line: simulate, segment, fit, batch-fit.

Every command reads an optional JSON config, applies flag overrides
(``--set key=value`` plus the named flags), writes the effective config to
``<out>/config.json`` and exits with 0 (success), 1 (usage), 2 (invalid model
or parameters) or 3 (numeric failure).
"""

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import data as datamod
from . import models, pinn, report
from .errors import DataFormatError, DegenerateWindowError, NumericFailure, SingularParameterError
from .odeint import CurrentWaveform, hh_steady_state, simulate_fn, simulate_hh

log = logging.getLogger("neurofit")

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2, 3

# Options consumed by the CLI rather than passed to the trainer.
FIT_ONLY_KEYS = ("data", "rescale_potential", "plots", "segments", "jobs", "seed_stride")


class UsageError(Exception):
    pass


class InvalidModel(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_dotted(cfg, key, value):
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value


def load_config(args, named):
    cfg = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        try:
            cfg = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}") from None
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        _set_dotted(cfg, key, _parse_value(value))
    for key, value in named.items():
        if value is not None:
            cfg[key] = value
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.deterministic:
        cfg["deterministic"] = True
    return cfg


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, (set, frozenset, tuple)):
        return sorted(obj) if isinstance(obj, (set, frozenset)) else list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def echo_config(cfg, out):
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(_dump(cfg))


def _params(model, values, trainable=None):
    try:
        return models.make_params(model, values, trainable)
    except (ValueError, TypeError) as exc:
        raise InvalidModel(str(exc)) from None


def default_initial_state(params):
    if params.model == "fn":
        return {"v": 0.0, "w": 0.0}
    n, m, h = hh_steady_state(params.V0)
    return {"V": params.V0, "n": float(n), "m": float(m), "h": float(h)}


def cmd_simulate(cfg, out):
    model = cfg.setdefault("model", "fn")
    params = _params(model, cfg.get("params"))
    cfg.setdefault("t0", 0.0)
    cfg.setdefault("t1", 50.0)
    cfg.setdefault("n_points", 300)
    cfg.setdefault("substeps", 10)
    cfg.setdefault("noise", 0.0)
    cfg.setdefault("seed", 0)
    init = default_initial_state(params)
    init.update(cfg.get("initial_state") or {})
    if set(init) != set(params.STATE):
        raise InvalidModel(f"initial_state must name exactly {params.STATE}")
    cfg["initial_state"] = init
    waveform = None
    if cfg.get("waveform"):
        try:
            waveform = CurrentWaveform.from_dict(cfg["waveform"])
        except ValueError as exc:
            raise InvalidModel(str(exc)) from None
    echo_config(cfg, out)

    state0 = [float(init[c]) for c in params.STATE]
    sim = simulate_fn if model == "fn" else simulate_hh
    traj = sim(params, state0, float(cfg["t0"]), float(cfg["t1"]), int(cfg["n_points"]),
               waveform, int(cfg["substeps"]))
    traj.to_csv(out / "trajectory.csv")

    potential = traj.y[:, 0].copy()
    if cfg["noise"]:
        rng = np.random.default_rng(cfg["seed"])
        potential += rng.normal(0.0, cfg["noise"] * np.ptp(potential), potential.size)
    current = (waveform or CurrentWaveform.constant(params.I))(traj.t)
    datamod.write_csv(out / "recording.csv", traj.t, potential, current)
    print(f"wrote {len(traj)} rows to {out / 'trajectory.csv'}")
    return EXIT_OK


def cmd_segment(cfg, out):
    path = cfg.get("recording")
    if not path:
        raise UsageError("segment needs a recording (--recording or config 'recording')")
    if not Path(path).exists():
        raise UsageError(f"recording not found: {path}")
    for key in ("pre_window", "post_window"):
        if cfg.get(key) is None:
            raise UsageError(f"segment needs {key}")
    cfg.setdefault("threshold", None)
    cfg.setdefault("refractory", None)
    echo_config(cfg, out)
    rec = datamod.load_csv(path)
    segments = datamod.segment_spikes(rec, cfg["threshold"], float(cfg["pre_window"]),
                                      float(cfg["post_window"]), cfg["refractory"])
    settings = {k: cfg[k] for k in ("threshold", "pre_window", "post_window", "refractory")}
    datamod.write_segments(segments, out, source=str(path), settings=settings)
    if not segments:
        print("warning: no spikes detected; wrote an empty index", file=sys.stderr)
    else:
        print(f"wrote {len(segments)} segments to {out}")
    return EXIT_OK


def _train_config(cfg):
    rest = {k: v for k, v in cfg.items() if k not in FIT_ONLY_KEYS}
    try:
        return pinn.TrainConfig.from_dict(rest)
    except (ValueError, TypeError) as exc:
        raise InvalidModel(str(exc)) from None


def write_fit_outputs(result, out, obs=None, plots=True):
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.json").write_text(result.to_json() + "\n")
    (out / "params.json").write_text(models.params_to_json(result.params, result.spec) + "\n")
    (out / "network.json").write_text(result.theta.to_json() + "\n")
    result.write_trajectory_csv(out / "trajectory.csv")
    result.write_lambda_csv(out / "lambda.csv")
    result.write_loss_csv(out / "loss.csv")
    if plots:
        from .plotting import plot_fit

        plot_fit(result, out / "fit.png", obs)


def _load_observations(path, model, rescale):
    if not Path(path).exists():
        raise UsageError(f"data file not found: {path}")
    rec = datamod.load_csv(path)
    return datamod.observations_for(rec, model, rescale)


def cmd_fit(cfg, out):
    cfg.setdefault("model", "fn")
    cfg.setdefault("mode", "inverse")
    config = _train_config(cfg)
    data_path = cfg.get("data")
    if config.mode == "inverse" and not data_path:
        raise UsageError("inverse fits need a data file (--data)")
    obs = None
    if data_path:
        obs = _load_observations(data_path, config.model, cfg.get("rescale_potential", False))
    echo_config(cfg, out)
    try:
        result = pinn.train(config, obs)
    except ValueError as exc:
        raise InvalidModel(str(exc)) from None
    write_fit_outputs(result, out, obs, cfg.get("plots", True))
    if result.status != "ok":
        print(result.message, file=sys.stderr)
        return EXIT_NUMERIC
    print(report.format_table([report.param_stats(k, [v]) for k, v in
                               models.param_values(result.params).items()]), end="")
    return EXIT_OK


def _fit_one(job):
    cfg, path, seed, out, plots = job
    cfg = dict(cfg, seed=seed)
    config = _train_config(cfg)
    obs = _load_observations(path, config.model, cfg.get("rescale_potential", False))
    result = pinn.train(config, obs)
    write_fit_outputs(result, out, obs, plots)
    return {
        "segment": str(path),
        "seed": seed,
        "status": result.status,
        "message": result.message,
        "params": models.param_values(result.params),
        "trajectory": (result.reconstruction["t"], result.reconstruction[result.params.STATE[0]]),
        "data": (obs.t, obs.values[result.params.STATE[0]]),
    }


def cmd_batch_fit(cfg, out):
    seg_dir = cfg.get("segments")
    if not seg_dir or not Path(seg_dir).is_dir():
        raise UsageError("batch-fit needs a segments directory (--segments)")
    paths = datamod.read_segment_index(seg_dir)
    if not paths:
        raise UsageError(f"no segments found in {seg_dir}")
    cfg.setdefault("model", "fn")
    cfg.setdefault("mode", "inverse")
    cfg.setdefault("seed", 0)
    base = _train_config(cfg)
    if base.mode != "inverse":
        raise UsageError("batch-fit runs inverse fits")
    echo_config(cfg, out)
    plots = cfg.get("plots", True)
    # segment k trains with seed + k * seed_stride; a stride of 0 reuses one seed
    stride = int(cfg.get("seed_stride", 1))
    jobs = [(cfg, p, base.seed + k * stride, out / "fits" / Path(p).stem, plots) for k, p in enumerate(paths)]

    n_jobs = int(cfg.get("jobs", 1) or 1)
    outcomes = []
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as pool:
            futures = [pool.submit(_fit_one, job) for job in jobs]
            for job, fut in zip(jobs, futures):
                outcomes.append(_collect(job, fut.result))
    else:
        for job in jobs:
            outcomes.append(_collect(job, lambda job=job: _fit_one(job)))

    ok = [o for o in outcomes if o["status"] == "ok"]
    fitted = [o["params"] for o in ok]
    stats = report.aggregate(base.model, fitted) if fitted else []
    report.write_stats(stats, out)
    fields = list(base.params.FIELDS)
    lines = [",".join(["segment", "seed"] + fields)]
    for o in ok:
        lines.append(",".join([Path(o["segment"]).name, str(o["seed"])]
                              + [repr(float(o["params"][f])) for f in fields]))
    (out / "params.csv").write_text("\n".join(lines) + "\n")
    summary = {
        "model": base.model,
        "n_segments": len(outcomes),
        "n_ok": len(ok),
        "fits": [{k: o[k] for k in ("segment", "seed", "status", "message")} for o in outcomes],
        "excluded": [o["segment"] for o in outcomes if o["status"] != "ok"],
    }
    (out / "report.json").write_text(_dump(summary))
    if plots and ok:
        from .plotting import plot_parameter_spread, plot_segment_fits

        labels = {k: v for k, v in report.table_rows(base.model).items() if v in base.params.trainable}
        if labels:
            plot_parameter_spread(fitted, labels, out / "parameters.png")
        plot_segment_fits([o["data"] + o["trajectory"] for o in ok], out / "spikes.png")
    sys.stdout.write(report.format_table(stats))
    for o in outcomes:
        if o["status"] != "ok":
            print(f"excluded {o['segment']}: {o['message']}", file=sys.stderr)
    return EXIT_OK if ok else EXIT_NUMERIC


def _collect(job, run):
    try:
        return run()
    except (NumericFailure, DegenerateWindowError, DataFormatError) as exc:
        return {"segment": str(job[1]), "seed": job[2], "status": "failed",
                "message": str(exc), "params": {}}


def build_parser():
    parser = _Parser(prog="neurofit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--deterministic", action="store_true",
                       help="single-threaded numerics for bit-identical reruns")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry (value parsed as JSON)")

    p = sub.add_parser("simulate", help="integrate a model with RK4 and write CSV")
    common(p)
    p.add_argument("--model", choices=sorted(models.MODELS))
    p.add_argument("--n-points", type=int, dest="n_points")
    p.add_argument("--noise", type=float, help="Gaussian noise, fraction of the potential range")
    p.set_defaults(func=cmd_simulate, named=("model", "n_points", "noise"))

    p = sub.add_parser("segment", help="cut a recording into single-spike windows")
    common(p)
    p.add_argument("--recording")
    p.add_argument("--threshold", type=float)
    p.add_argument("--pre", type=float, dest="pre_window")
    p.add_argument("--post", type=float, dest="post_window")
    p.add_argument("--refractory", type=float)
    p.set_defaults(func=cmd_segment,
                   named=("recording", "threshold", "pre_window", "post_window", "refractory"))

    p = sub.add_parser("fit", help="train a PINN (forward or inverse)")
    common(p)
    p.add_argument("--model", choices=sorted(models.MODELS))
    p.add_argument("--mode", choices=pinn.MODES)
    p.add_argument("--data")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_fit, named=("model", "mode", "data", "epochs"))

    p = sub.add_parser("batch-fit", help="fit every segment and tabulate parameter statistics")
    common(p)
    p.add_argument("--model", choices=sorted(models.MODELS))
    p.add_argument("--segments")
    p.add_argument("--epochs", type=int)
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_batch_fit, named=("model", "segments", "epochs", "jobs"))
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args, {k: getattr(args, k) for k in args.named})
        return args.func(cfg, Path(args.out))
    except UsageError as exc:
        print(f"neurofit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataFormatError as exc:
        print(f"neurofit: bad input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InvalidModel, SingularParameterError, DegenerateWindowError) as exc:
        print(f"neurofit: invalid model or parameters: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericFailure as exc:
        print(f"neurofit: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
