"""Model-core: rate functions, steady states, RHS, currents, Jacobian."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cardiodyn import (
    BERNUS_IC,
    ModelError,
    NOBLE_IC,
    bernus_model,
    clip_gates,
    noble_model,
)

NOBLE = noble_model()
BERNUS = bernus_model()
MODELS = {"noble": NOBLE, "bernus": BERNUS}


# -- rate coefficients --------------------------------------------------------

def test_noble_a_m_at_singularity():
    a, _ = NOBLE.rate_coeffs("m", -48.0)
    assert a == pytest.approx(1.5, abs=1e-9)


def test_noble_b_m_at_singularity():
    _, b = NOBLE.rate_coeffs("m", -8.0)
    assert b == pytest.approx(0.6, abs=1e-9)


def test_noble_a_h_at_minus_90():
    a, _ = NOBLE.rate_coeffs("h", -90.0)
    assert a == pytest.approx(0.17, abs=1e-12)


def test_noble_b_h_at_midpoint():
    _, b = NOBLE.rate_coeffs("h", -42.0)
    assert b == pytest.approx(0.5, abs=1e-12)


def test_unknown_gate_raises():
    with pytest.raises(ModelError):
        NOBLE.rate_coeffs("zz", -50.0)


def test_rate_continuity_across_singular_points():
    # the series branch (just inside the switch window) and the direct branch
    # (just outside) agree to 1e-8 relative
    for model in MODELS.values():
        for g in model.gates:
            for vs in g.singular_points:
                for sign in (+1.0, -1.0):
                    inner = model.rate_coeffs(g.name, vs + sign * (1e-4 - 1e-9))
                    outer = model.rate_coeffs(g.name, vs + sign * (1e-4 + 1e-9))
                    for a, b in zip(inner, outer):
                        assert a == pytest.approx(b, rel=1e-8)


# -- gate steady states -------------------------------------------------------

def test_noble_h_steady_at_minus_90():
    y_inf, _ = NOBLE.gate_steady("h", -90.0)
    # oracle: 0.17/(0.17 + 1/(1+e^{4.8})), extended-precision evaluation
    assert y_inf == pytest.approx(0.954184702767099, rel=1e-12)


def test_noble_n_steady_at_singularity():
    a, b = NOBLE.rate_coeffs("n", -50.0)
    assert a == pytest.approx(0.001, abs=1e-12)
    y_inf, _ = NOBLE.gate_steady("n", -50.0)
    # oracle: 0.001/(0.001 + 0.002 e^{-0.5}), extended-precision evaluation
    assert y_inf == pytest.approx(0.45186276187760605, rel=1e-12)


@given(st.floats(-150, 100), st.sampled_from(["h", "m", "n"]))
@settings(max_examples=200)
def test_noble_steady_identities(V, gate):
    a, b = NOBLE.rate_coeffs(gate, V)
    y_inf, tau = NOBLE.gate_steady(gate, V)
    assert 0.0 <= y_inf <= 1.0
    assert tau > 0
    assert a * tau == pytest.approx(y_inf, rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("name", ["noble", "bernus"])
def test_gate_invariants_dense_grid(name):
    model = MODELS[name]
    V = np.arange(-150.0, 100.0 + 1e-9, 0.1)
    for g in model.gate_names:
        vals = model._gates_fn(V)
        i = 4 * model.gate_names.index(g)
        a, b, y_inf, tau = (np.broadcast_to(np.asarray(v, float), V.shape)
                            for v in vals[i:i + 4])
        assert np.all(a >= 0), g
        assert np.all(b >= 0), g
        assert np.all(tau > 0), g
        assert np.all((y_inf >= 0) & (y_inf <= 1)), g


# -- rhs ----------------------------------------------------------------------

def test_noble_rhs_golden_at_default_ic():
    # oracle: extended-precision (50-digit) evaluation of the printed formulas
    d = NOBLE.rhs(np.array(NOBLE_IC))
    expect = [-0.06744488594563113, -0.0007939597509941487,
              0.0447820574979253, -0.0008260279644299453]
    assert d == pytest.approx(expect, rel=1e-12)


def test_rhs_zero_gate_components_at_steady_state():
    for model in MODELS.values():
        x = model.steady_state(-79.04)
        d = model.rhs(x)
        assert np.all(d[1:] == 0.0)


def test_rhs_dimension_mismatch():
    with pytest.raises(ModelError):
        NOBLE.rhs(np.zeros(5))


def test_noble_leak_vanishes_at_reversal():
    x = NOBLE.steady_state(-60.0)
    assert NOBLE.currents(x)["I_L"] == 0.0


def test_stimulus_enters_first_component_only():
    x = np.array(NOBLE_IC)
    d0 = NOBLE.rhs(x)
    d1 = NOBLE.rhs(x, I_stim=24.0)
    assert d1[0] - d0[0] == pytest.approx(2.0, rel=1e-12)  # 24 / C_m
    assert np.all(d1[1:] == d0[1:])


# -- currents -----------------------------------------------------------------

def test_noble_currents_golden_at_default_ic():
    # oracle: extended-precision (50-digit) evaluation of the printed formulas
    cur = NOBLE.currents(np.array(NOBLE_IC))
    assert cur["I_Na"] == pytest.approx(-20.18019648, rel=1e-12)
    assert cur["I_K"] == pytest.approx(22.417535111347572, rel=1e-12)
    assert cur["I_L"] == pytest.approx(-1.428, rel=1e-12)


def test_noble_ik_vanishes_at_ek():
    x = NOBLE.steady_state(-100.0)
    assert NOBLE.currents(x)["I_K"] == 0.0


@pytest.mark.parametrize("name", ["noble", "bernus"])
def test_current_decomposition_identity(name):
    model = MODELS[name]
    rng = np.random.default_rng(7)
    for _ in range(100):
        V = rng.uniform(-150, 100)
        x = np.concatenate([[V], rng.uniform(0, 1, model.dim - 1)])
        total = sum(model.currents(x).values())
        dV = model.rhs(x, I_stim=3.0)[0]
        assert total == pytest.approx(
            model.capacitance * (-dV) + 3.0, rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("name", ["noble", "bernus"])
def test_currents_finite_over_voltage_range(name):
    model = MODELS[name]
    V = np.arange(-150.0, 100.0 + 1e-9, 0.5)
    for v in V:
        x = model.steady_state(v)
        assert all(np.isfinite(c) for c in model.currents(x).values())


# -- Jacobian -----------------------------------------------------------------

def _fd_jacobian(model, x, params=None, eps=1e-6):
    n = model.dim
    J = np.zeros((n, n))
    for j in range(n):
        h = eps * max(1.0, abs(x[j]))
        dx = np.zeros(n)
        dx[j] = h
        J[:, j] = (model.rhs(x + dx, params) - model.rhs(x - dx, params)) / (2 * h)
    return J


@pytest.mark.parametrize("name", ["noble", "bernus"])
def test_jacobian_matches_finite_differences(name):
    # central differences, step 1e-6 (component-relative); entries where the
    # FD oracle itself is ill-conditioned (h and 10h estimates disagree, e.g.
    # saturated tanh tails) are certified by the complex-step test below
    model = MODELS[name]
    rng = np.random.default_rng(42)
    for _ in range(50):
        V = rng.uniform(-100, 40)
        x = np.concatenate([[V], rng.uniform(0.05, 0.95, model.dim - 1)])
        J = model.jacobian(x)
        Jfd = _fd_jacobian(model, x)
        Jfd10 = _fd_jacobian(model, x, eps=1e-5)
        scale = np.maximum(np.abs(Jfd), 1e-3)
        trusted = np.abs(Jfd - Jfd10) / scale < 1e-7
        assert trusted.mean() > 0.9
        assert np.max(np.abs(J - Jfd)[trusted] / scale[trusted]) < 1e-5


@pytest.mark.parametrize("name", ["noble", "bernus"])
def test_jacobian_matches_complex_step(name):
    # complex-step differentiation of the RHS is exact to machine precision
    # and shares no code with the symbolic differentiator
    model = MODELS[name]
    p = model.merge_params(None)
    pv = tuple(p[k] for k in model.param_names)
    rng = np.random.default_rng(3)
    h = 1e-30
    for _ in range(50):
        V = rng.uniform(-100, 40)
        x = np.concatenate([[V], rng.uniform(0.05, 0.95, model.dim - 1)])
        J = model.jacobian(x)
        Jcs = np.zeros_like(J)
        for j in range(model.dim):
            z = x.astype(complex)
            z[j] += 1j * h
            Jcs[:, j] = np.imag(model._rhs_fn(*z, *pv, 0.0)) / h
        scale = np.maximum(np.abs(Jcs), 1e-3)
        assert np.max(np.abs(J - Jcs) / scale) < 1e-5


@pytest.mark.parametrize("name", ["noble", "bernus"])
def test_jacobian_gate_rows_structurally_sparse(name):
    model = MODELS[name]
    x = model.steady_state(-30.0)
    J = model.jacobian(x)
    for i in range(1, model.dim):
        for j in range(1, model.dim):
            if i != j:
                assert J[i, j] == 0.0


def test_jacobian_gate_row_entry_at_steady_state():
    # at y = y_inf(V): d/dV[(y_inf - y)/tau] = (1/tau) dy_inf/dV
    model = NOBLE
    V = -62.0
    x = model.steady_state(V)
    J = model.jacobian(x)
    h = 1e-6
    for i, g in enumerate(model.gate_names, start=1):
        y_inf, tau = model.gate_steady(g, V)
        dyinf = (model.gate_steady(g, V + h)[0]
                 - model.gate_steady(g, V - h)[0]) / (2 * h)
        assert J[i, 0] == pytest.approx(dyinf / tau, rel=1e-6)
        assert J[i, i] == pytest.approx(-1.0 / tau, rel=1e-12)


def test_drhs_dparam_matches_finite_difference():
    for model, sym in ((NOBLE, "G_L"), (BERNUS, "G_Ca")):
        x = model.steady_state(-20.0)
        p = model.merge_params(None)
        d = model.drhs_dparam(x, p, sym)
        h = 1e-7 * max(1.0, p[sym])
        hi = dict(p, **{sym: p[sym] + h})
        lo = dict(p, **{sym: p[sym] - h})
        fd = (model.rhs(x, hi) - model.rhs(x, lo)) / (2 * h)
        assert d == pytest.approx(fd, rel=1e-6, abs=1e-10)


# -- parameters and state checks ---------------------------------------------

def test_merge_params_rejects_unknown():
    with pytest.raises(ModelError):
        NOBLE.merge_params({"G_X": 1.0})


def test_negative_conductance_rejected():
    with pytest.raises(ModelError):
        NOBLE.merge_params({"G_L": -0.1})


def test_block_fraction_range_enforced():
    with pytest.raises(ModelError):
        BERNUS.merge_params({"block_Kr": 1.5})
    p = BERNUS.merge_params({"block_Kr": 0.8})
    assert p["block_Kr"] == 0.8


def test_block_kr_scales_ikr():
    x = BERNUS.steady_state(-20.0)
    x[BERNUS.state_names.index("x_r")] = 0.5
    full = BERNUS.currents(x)["I_Kr"]
    blocked = BERNUS.currents(x, {"block_Kr": 0.8})["I_Kr"]
    assert blocked == pytest.approx(0.2 * full, rel=1e-12)


def test_clip_gates_accepts_slack_and_rejects_violations():
    x = np.array(NOBLE_IC)
    x[1] = 1.0 + 0.5e-6
    out = clip_gates(NOBLE, x)
    assert out[1] == 1.0
    x[1] = 1.01
    with pytest.raises(ModelError):
        clip_gates(NOBLE, x)


def test_bernus_default_ic_fast_gates_consistent():
    # fast gates of the documented resting state equal steady values at V0
    V0 = BERNUS_IC[0]
    for g in ("m", "v", "to"):
        y_inf, _ = BERNUS.gate_steady(g, V0)
        got = BERNUS_IC[BERNUS.state_names.index(g)]
        assert y_inf == pytest.approx(got, abs=5e-4)


def test_bernus_resting_state_is_equilibrium():
    x = BERNUS.steady_state(BERNUS_IC[0])
    d = BERNUS.rhs(x)
    assert np.max(np.abs(d)) < 1e-10
