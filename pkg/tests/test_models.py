import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from neurofit import models, odeint
from neurofit.autodiff import Tape
from neurofit.errors import DegenerateWindowError
from neurofit.models import FnParams, HhParams, ScalingSpec

from exprgen import central_diff


def test_fn_residual_fixed_point():
    p = FnParams(a=0.0, b=1.0, tau=1.0, I=0.0)
    assert models.fn_residual((0.0, 0.0), (0.0, 0.0), p, 0.0) == (0.0, 0.0)


def test_fn_residual_matches_vector_field():
    p = FnParams()
    r = models.fn_residual((0.0, 0.0), (0.28, -0.015), p, 0.28)
    assert r[0] == pytest.approx(0.0, abs=1e-15) and r[1] == pytest.approx(0.0, abs=1e-15)


def test_hh_residual_no_currents():
    p = HhParams(gK=0.0, gNa=0.0, gl=0.0)
    r_V = models.hh_residual((-50.0, 0.3, 0.1, 0.6), (0.0, 0.0, 0.0, 0.0), p, 0.0)[0]
    assert r_V == 0.0


def test_hh_residual_gates_at_equilibrium():
    V = -58.0
    gates = tuple(float(x) for x in odeint.hh_steady_state(V))
    r = models.hh_residual((V,) + gates, (0.0, 0.0, 0.0, 0.0), HhParams(), 0.0)
    assert max(abs(float(x)) for x in r[1:]) < 1e-15


def _d4(y, h):
    """Fourth-order central difference (Richardson on the 2nd-order stencil), interior points."""
    return (-y[4:] + 8 * y[3:-1] - 8 * y[1:-3] + y[:-4]) / (12 * h)


def _residual_on_rk4(model, n_points):
    if model == "fn":
        p = FnParams(I=-0.28)
        tr = odeint.simulate_fn(p, (0.0, 0.0), 0.0, 50.0, n_points, substeps=4)
    else:
        p = HhParams(I=10.0)
        rest = (-65.0,) + tuple(float(x) for x in odeint.hh_steady_state(-65.0))
        tr = odeint.simulate_hh(p, rest, 0.0, 20.0, n_points, substeps=4)
    h = tr.t[1] - tr.t[0]
    u = [tr.y[2:-2, j] for j in range(tr.y.shape[1])]
    du = [_d4(tr.y[:, j], h) for j in range(tr.y.shape[1])]
    res = models.residual(p, u, du, p.I)
    return max(float(np.max(np.abs(r))) for r in res)


def test_fn_residual_vanishes_on_refined_solution():
    errs = [_residual_on_rk4("fn", n) for n in (300, 600, 3000)]
    assert errs[1] < errs[0]
    assert errs[2] <= 1e-4


def test_hh_residual_vanishes_on_refined_solution():
    errs = [_residual_on_rk4("hh", n) for n in (1001, 2001, 8001)]
    assert errs[1] < errs[0]
    assert errs[2] <= 1e-4


def test_normalize_three_points():
    spec = models.fit_scaling(np.arange(3.0), {"V": [0.0, 5.0, 10.0]})
    np.testing.assert_array_equal(spec.normalize("V", [0.0, 5.0, 10.0]), [-1.0, 0.0, 1.0])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(2, 40), elements=st.floats(-1e3, 1e3)))
def test_normalize_round_trip(x):
    if np.ptp(x) < 1e-6:
        return
    t = np.arange(x.size, dtype=float)
    spec = models.fit_scaling(t, {"V": x})
    s, ch = models.normalize(t, {"V": x}, spec)
    assert ch["V"].min() == pytest.approx(-1.0, abs=1e-12)
    assert ch["V"].max() == pytest.approx(1.0, abs=1e-12)
    assert s.min() == pytest.approx(-1.0, abs=1e-12) and s.max() == pytest.approx(1.0, abs=1e-12)
    t2, back = models.denormalize(s, ch, spec)
    np.testing.assert_allclose(back["V"], x, rtol=0, atol=1e-12 * max(1.0, np.abs(x).max()))
    np.testing.assert_allclose(t2, t, rtol=0, atol=1e-12 * x.size)


def test_spike_window_auto_fit_in_unit_interval():
    rest = (-65.0,) + tuple(float(x) for x in odeint.hh_steady_state(-65.0))
    tr = odeint.simulate_hh(HhParams(I=10.0), rest, 0.0, 20.0, 400)
    spec = models.fit_scaling(tr.t, {"V": tr.channel("V")})
    v = spec.normalize("V", tr.channel("V"))
    assert v.min() >= -1.0 and v.max() <= 1.0


def test_degenerate_window():
    with pytest.raises(DegenerateWindowError):
        models.unit_affine([3.0, 3.0, 3.0])


def test_scaling_rejects_non_positive_scale():
    with pytest.raises(ValueError):
        ScalingSpec(t_scale=0.0)
    with pytest.raises(ValueError):
        ScalingSpec(channels={"V": (0.0, -1.0)})


def test_scaling_dict_round_trip():
    spec = ScalingSpec(1.5, 2.5, {"V": (-60.0, 40.0)}, time_unit=0.5, g_scale=10.0)
    assert ScalingSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


def test_denormalize_identity_spec():
    for p in (FnParams(), HhParams()):
        assert models.denormalize_params(p, ScalingSpec()) == p


def test_denormalize_requires_spec():
    with pytest.raises(ValueError):
        models.denormalize_params(FnParams(), None)


def test_fn_tau_scales_with_time():
    phys = models.denormalize_params(FnParams(tau=2.0), ScalingSpec(t_scale=10.0))
    assert phys.tau == 20.0
    assert (phys.a, phys.b, phys.I) == (-0.3, 1.2, 0.28)


def test_normalize_params_inverts_denormalize():
    spec = ScalingSpec(3.0, 7.0, {"V": (-40.0, 55.0)}, time_unit=0.25, g_scale=20.0)
    for p in (FnParams(), HhParams(I=3.0)):
        back = models.normalize_params(models.denormalize_params(p, spec), spec)
        for name in p.FIELDS:
            assert getattr(back, name) == pytest.approx(getattr(p, name), rel=1e-13, abs=1e-13)


def _renormalized_sim(traj, spec, names):
    return np.column_stack([spec.normalize(n, traj.channel(n)) for n in names])


def test_fn_denormalized_params_reproduce_normalized_dynamics():
    spec = ScalingSpec(t_shift=1.0, t_scale=2.0, channels={"v": (0.1, 1.5), "w": (0.2, 0.5)})
    lam = FnParams(a=-0.3, b=1.2, tau=10.0, I=-0.28)  # training-frame values
    k = spec.model_time_scale
    (sv, cv), (sw, cw) = spec.channel("v"), spec.channel("w")

    def norm_rhs(y, _):
        # the FitzHugh-Nagumo field rewritten by hand in normalized coordinates
        v, w = sv + cv * y[0], sw + cw * y[1]
        dv = k * (v - v ** 3 - w + lam.I) / cv
        dw = (v + lam.a - lam.b * w) / lam.tau / cw
        return dv, dw

    y0 = (spec.normalize("v", 0.3), spec.normalize("w", -0.1))
    ref = odeint.rk4_integrate(norm_rhs, y0, -1.0, 1.0, 200, substeps=10)
    phys = models.denormalize_params(lam, spec)
    assert phys.tau == 20.0
    t0, t1 = spec.from_norm_time(-1.0), spec.from_norm_time(1.0)
    sim = odeint.simulate_fn(phys, (0.3, -0.1), float(t0), float(t1), 201, substeps=10)
    assert np.max(np.abs(_renormalized_sim(sim, spec, "vw") - ref.y)) <= 1e-6


def test_hh_denormalized_params_reproduce_normalized_dynamics():
    spec = ScalingSpec(t_shift=10.0, t_scale=10.0, channels={"V": (-20.0, 50.0)},
                       time_unit=1.0, g_scale=30.0)
    k = spec.model_time_scale
    shift, scale = spec.channel("V")
    truth = HhParams(I=10.0)
    lam = models.normalize_params(truth, spec)

    def norm_rhs(y, _):
        Vn, n, m, h = y
        V = shift + scale * Vn
        r = odeint.hh_rate_functions(V)
        ionic = (lam.gK * n ** 4 * (Vn - lam.VK) + lam.gNa * m ** 3 * h * (Vn - lam.VNa)
                 + lam.gl * (Vn - lam.Vl))
        dV = (lam.I - ionic) / lam.Cm
        gates = [k * (r[f"alpha_{g}"] * (1 - x) - r[f"beta_{g}"] * x) for g, x in zip("nmh", (n, m, h))]
        return [dV] + gates

    rest = (-65.0,) + tuple(float(x) for x in odeint.hh_steady_state(-65.0))
    y0 = (spec.normalize("V", rest[0]),) + rest[1:]
    ref = odeint.rk4_integrate(norm_rhs, y0, -1.0, 1.0, 400, substeps=10)
    phys = models.denormalize_params(lam, spec)
    sim = odeint.simulate_hh(phys, rest, 0.0, 20.0, 401, substeps=10)
    got = np.column_stack([spec.normalize("V", sim.channel("V")), sim.y[:, 1:]])
    assert np.max(np.abs(got - ref.y)) <= 1e-6


def _residual_float(params, u, du, I_ext):
    return [float(r) for r in models.residual(params, u, du, I_ext)]


@pytest.mark.parametrize("model", ["fn", "hh"])
def test_residual_gradients_wrt_params_match_fd(model):
    if model == "fn":
        base = FnParams(a=-0.2, b=1.1, tau=15.0, I=0.3)
        u, du = (0.4, -0.2), (0.1, 0.05)
    else:
        base = HhParams(I=5.0, trainable=frozenset(HhParams.FIELDS))
        u, du = (-52.0, 0.35, 0.12, 0.55), (3.0, 0.01, 0.05, -0.02)
    names = sorted(base.trainable)
    x0 = np.array([getattr(base, n) for n in names])
    for i, comp in enumerate(models.residual(base, u, du, base.I)):
        tape = Tape()
        leaves = {n: tape.variable(getattr(base, n)) for n in names}
        p = models.replace_values(base, leaves)
        r = models.residual(p, u, du, p.I)[i]
        if not hasattr(r, "tape"):
            continue
        grads = tape.backward(r, wrt=[leaves[n].id for n in names])
        for j, n in enumerate(names):

            def f(x):
                q = models.replace_values(base, dict(zip(names, x)))
                return _residual_float(q, u, du, q.I)[i]

            fd = central_diff(f, x0, j, h=1e-6 * max(1.0, abs(x0[j])))
            g = float(grads[leaves[n].id])
            assert g == pytest.approx(fd, rel=1e-5, abs=1e-8), (model, i, n)


def test_params_json_export():
    spec = ScalingSpec(0.0, 25.0, {"v": (0.0, 1.0)})
    doc = json.loads(models.params_to_json(FnParams(), spec))
    assert doc["model"] == "fn"
    assert set(doc["fields"]) == set(FnParams.FIELDS)
    tau = doc["fields"]["tau"]
    assert tau == {"value": 20.0 / 25.0, "trainable": True, "physical_value": 20.0}
    assert doc["fields"]["R"]["trainable"] is False
    assert ScalingSpec.from_dict(doc["scaling"]) == spec
    back = models.params_from_dict(doc)
    assert back == FnParams()


def test_every_table_row_maps_to_one_field():
    assert sorted(models.HH_TABLE_ROWS.values()) == sorted(HhParams.FIELDS)
    assert len(set(models.HH_TABLE_ROWS.values())) == len(models.HH_TABLE_ROWS)
    assert set(models.FN_TABLE_ROWS.values()) <= set(FnParams.FIELDS)


def test_default_trainable_sets():
    assert "R" not in FnParams().trainable and FnParams().trainable == {"a", "b", "tau", "I"}
    assert HhParams().trainable == set(HhParams.FIELDS) - {"I"}


def test_make_params_validation():
    p = models.make_params("hh", {"gK": 30}, trainable=["gK"])
    assert p.gK == 30.0 and p.trainable == {"gK"}
    with pytest.raises(ValueError):
        models.make_params("fn", {"gK": 1.0})
    with pytest.raises(ValueError):
        models.make_params("fn", trainable=["zeta"])
    with pytest.raises(ValueError):
        models.params_class("lif")
