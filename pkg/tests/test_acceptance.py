"""End-to-end acceptance checks; one PASS/FAIL line per criterion is printed in the summary.

The slow criteria (1, 2, 7, 9) together take a few minutes on one core.
"""

import json

import numpy as np
import pytest

import test_models
import test_odeint
import test_pinn
from exprgen import central_diff, close, draw_expressions, float_value, reverse_gradient
from neurofit import cli, data, models, odeint, pinn, report
from neurofit.models import FnParams, HhParams

criterion = pytest.mark.criterion

TRUTH = {"a": -0.3, "b": 1.2, "I": 0.28, "tau": 20.0}
GUESS = {"a": 0.0, "b": 1.0, "I": 0.0, "tau": 25.0}


def run(*argv):
    return cli.main([str(a) for a in argv])


def _inverse_fit(workdir, out):
    """Simulate the reference system, then fit a, b, I and tau from 30 of its 300 samples."""
    sim = workdir / "sim"
    if not sim.exists():
        assert run("simulate", "--model", "fn", "--n-points", 300, "--out", sim) == 0
    cfg = {"model": "fn", "mode": "inverse", "params": GUESS, "epochs": 20000, "n_m": 30,
           "initial_state": {"v": 0.0, "w": 0.0}, "plots": False, "log_interval": 1000}
    path = workdir / "inverse.json"
    path.write_text(json.dumps(cfg))
    code = run("fit", "--config", path, "--data", sim / "trajectory.csv", "--seed", 0,
               "--deterministic", "--out", workdir / out)
    return code, workdir / out


@pytest.fixture(scope="session")
def inverse_run(tmp_path_factory):
    return _inverse_fit(tmp_path_factory.mktemp("inverse"), "run1")


@criterion(1, "synthetic FitzHugh-Nagumo inverse recovery within 10%")
def test_inverse_recovery(inverse_run):
    code, out = inverse_run
    assert code == 0
    fields = json.loads((out / "params.json").read_text())["fields"]
    for name, truth in TRUTH.items():
        got = fields[name]["physical_value"]
        assert abs(got - truth) <= 0.1 * abs(truth), (name, got, truth)


@criterion(2, "forward FitzHugh-Nagumo fit within 1e-2 of RK4 on the normalized scale")
def test_forward_fidelity():
    truth = FnParams()
    ref = odeint.simulate_fn(truth, (0.0, 0.0), 0.0, 50.0, 300)
    cfg = pinn.TrainConfig(model="fn", mode="forward", params=truth, epochs=60000, domain=(0.0, 50.0),
                           initial_state={"v": 0.0, "w": 0.0}, n_dense=300, log_interval=5000)
    res = pinn.train(cfg)
    assert res.status == "ok"
    rec = res.reconstruction
    np.testing.assert_allclose(rec["t"], ref.t, rtol=0, atol=1e-9)
    frame = models.fit_scaling(ref.t, {c: ref.channel(c) for c in truth.STATE})
    for c in truth.STATE:
        err = np.abs(frame.normalize(c, rec[c]) - frame.normalize(c, ref.channel(c)))
        assert err.max() <= 1e-2, (c, err.max())


@criterion(3, "reverse-mode gradients match central differences")
def test_autodiff_expressions():
    rng = np.random.default_rng(7)
    for expr, x in draw_expressions(rng, 100):
        g = reverse_gradient(expr, x)
        for i in range(len(x)):
            fd = central_diff(lambda z: float_value(expr, z), x, i)
            assert close(g[i], fd, 1e-5), (expr, x, i)


@criterion(3, "reverse-mode gradients match central differences")
@pytest.mark.parametrize("model", ["fn", "hh"])
def test_autodiff_total_loss(model):
    # 1x4 network, 3 collocation points, time-tangent paths through the residual
    test_pinn.test_total_loss_gradient_matches_fd(model)


@criterion(4, "RK4 error drops by at least 15 per step halving")
def test_integrator_order():
    errors = [test_odeint._decay_error(n) for n in (10, 20, 40, 80)]
    for coarse, fine in zip(errors[:-1], errors[1:]):
        assert coarse / fine >= 15.0


@criterion(5, "Hodgkin-Huxley gates stay in [0, 1] and relax at steady state")
def test_hh_invariants():
    test_odeint.test_gating_stays_in_unit_interval_under_perturbations()
    for V in np.linspace(-90.0, 30.0, 13):
        gates = tuple(float(x) for x in odeint.hh_steady_state(V))
        r = models.hh_residual((V,) + gates, (0.0, 0.0, 0.0, 0.0), HhParams(), 0.0)
        assert max(abs(float(x)) for x in r[1:]) <= 1e-12


@criterion(6, "model residuals vanish on refined RK4 trajectories")
def test_residual_on_solution():
    assert test_models._residual_on_rk4("fn", 3000) <= 1e-4
    assert test_models._residual_on_rk4("hh", 8001) <= 1e-4


def _noisy_spikes(directory, n=5, level=0.02):
    """Copies of one oscillating-regime spike with independent noise on both channels."""
    tr = odeint.simulate_fn(FnParams(I=-0.28), (0.0, 0.0), 0.0, 80.0, 300)
    v, w = tr.channel("v"), tr.channel("w")
    directory.mkdir()
    for k in range(n):
        rng = np.random.default_rng(100 + k)
        vn = v + rng.normal(0.0, level * np.ptp(v), v.size)
        wn = w + rng.normal(0.0, level * np.ptp(w), w.size)
        data.write_csv(directory / f"spike_{k}.csv", tr.t, vn, extra={"w": wn})


@criterion(7, "batch of five noisy spikes: sigma/mu <= 0.15 for a, b and I")
def test_batch_stability(tmp_path):
    _noisy_spikes(tmp_path / "spikes")
    cfg = {"model": "fn", "params": dict(GUESS, tau=30.0), "epochs": 20000, "n_m": 30,
           "initial_state": {"v": 0.0, "w": 0.0}, "plots": False, "log_interval": 1000}
    (tmp_path / "batch.json").write_text(json.dumps(cfg))
    out = tmp_path / "batch"
    assert run("batch-fit", "--config", tmp_path / "batch.json", "--segments", tmp_path / "spikes",
               "--out", out) == 0
    assert json.loads((out / "report.json").read_text())["n_ok"] == 5
    stats = report.read_stats_csv(out / "stats.csv")
    for name in ("a", "b", "I"):
        assert stats[name]["sigma_over_mu"] <= 0.15, (name, stats[name])


@criterion(8, "two seeded deterministic inverse fits write identical result JSON")
def test_determinism(inverse_run):
    code, first = inverse_run
    assert code == 0
    code, second = _inverse_fit(first.parent, "run2")
    assert code == 0
    for name in ("result.json", "params.json", "network.json"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


@criterion(9, "simulate, segment and fit a three-spike recording end to end")
def test_pipeline(tmp_path):
    sim = tmp_path / "sim"
    assert run("simulate", "--model", "fn", "--set", 'params={"I": -0.28}', "--set", "t1=220",
               "--n-points", 881, "--noise", 0.01, "--out", sim) == 0
    rec = data.load_csv(sim / "recording.csv")
    assert len(rec) == 881
    segs = tmp_path / "segs"
    assert run("segment", "--recording", sim / "recording.csv", "--threshold", 0.0,
               "--pre", 15, "--post", 40, "--out", segs) == 0
    files = data.read_segment_index(segs)
    assert len(files) == 3
    fit = tmp_path / "fit"
    assert run("fit", "--data", files[0], "--epochs", 3000, "--set", "params=" + json.dumps(GUESS),
               "--out", fit) == 0
    doc = json.loads((fit / "result.json").read_text())
    assert doc["status"] == "ok"
    assert (fit / "fit.png").exists() and (fit / "trajectory.csv").exists()
