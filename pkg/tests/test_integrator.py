"""Integrator tests: exact linear problems, periodic-orbit timing on the
Purkinje model, tolerance self-consistency, event location, and failure
modes."""

import math

import numpy as np
import pytest

from cardiodyn import (
    BERNUS_IC,
    NOBLE_IC,
    CurrentSpec,
    GateSpec,
    ModelDefinition,
    bernus_model,
    noble_model,
)
from cardiodyn.integrator import (
    IntegrationError,
    SolverConfig,
    StimulusProtocol,
    Trajectory,
    find_crossings,
    integrate,
)


def decay_model(G=1.0):
    """dV/dt = -G*V + I_stim; exact solution known in closed form."""
    return ModelDefinition(
        name="decay",
        capacitance=1.0,
        gates=(),
        current_specs=(CurrentSpec("I_leak", ["*", "G_leak", "V"]),),
        params={"G_leak": G},
    )


def gate_relaxation_model():
    """Zero currents (V frozen) plus one gate with constant rates."""
    return ModelDefinition(
        name="relax",
        capacitance=1.0,
        gates=(GateSpec("w", rate_a=0.2, rate_b=0.3),),
        current_specs=(),
        params={},
    )


# -- exact solutions ---------------------------------------------------------


def test_scalar_exponential_decay():
    cfg = SolverConfig(rtol=1e-10, atol_V=1e-12)
    traj = integrate(decay_model(), [1.0], t_span=(0.0, 1.0), config=cfg)
    v1 = traj.sample(1.0)[0]
    assert abs(v1 - math.exp(-1.0)) < 10 * cfg.rtol


def test_gate_relaxes_to_steady_state():
    # a=0.2, b=0.3 => w_inf = 0.4, tau = 2 ms; at 20 tau the distance to
    # w_inf is e^-20 ~ 2e-9, well below the requested absolute accuracy.
    cfg = SolverConfig(atol_gates=1e-12)
    traj = integrate(gate_relaxation_model(), [-70.0, 0.9],
                     t_span=(0.0, 40.0), config=cfg)
    V, w = traj.states
    assert np.allclose(V, -70.0, rtol=0, atol=1e-9)
    assert abs(w[-1] - 0.4) < 1e-8
    # monotone approach from above
    assert np.all(np.diff(w) <= 1e-12)


def test_stimulus_charges_membrane_exactly():
    # No intrinsic currents: dV/dt = I_stim / C, so each pulse adds
    # amplitude * duration / C millivolts, piecewise linearly.
    model = ModelDefinition(name="bare", capacitance=2.0, gates=(),
                            current_specs=(), params={})
    stim = StimulusProtocol(amplitude=3.0, start=10.0, duration=4.0,
                            period=20.0, count=2)
    traj = integrate(model, [0.0], t_span=(0.0, 50.0), stimulus=stim)
    assert abs(traj.sample(50.0)[0] - 2 * 3.0 * 4.0 / 2.0) < 1e-9
    # pulse edges are mesh points (integration restarts there)
    for e in (10.0, 14.0, 30.0, 34.0):
        assert np.min(np.abs(traj.times - e)) < 1e-12


# -- stimulus protocol -------------------------------------------------------


def test_stimulus_edges_and_current():
    stim = StimulusProtocol(amplitude=5.0, start=100.0, duration=2.0,
                            period=500.0, count=3)
    assert stim.edges(0.0, 2000.0) == [100.0, 102.0, 600.0, 602.0,
                                       1100.0, 1102.0]
    assert stim.edges(0.0, 601.0) == [100.0, 102.0, 600.0]
    assert stim.current(101.0) == 5.0
    assert stim.current(102.0) == 0.0  # half-open interval
    assert stim.current(601.5) == 5.0
    assert stim.current(1500.0) == 0.0
    assert StimulusProtocol().edges(0.0, 100.0) == []


# -- Purkinje periodic orbits ------------------------------------------------


def noble_upstroke_times(G_L, t_span=(0.0, 4000.0)):
    traj = integrate(noble_model(), NOBLE_IC, params={"G_L": G_L},
                     t_span=t_span)
    return np.array(find_crossings(traj, -50.0, "up")), traj


def test_noble_free_running_period():
    ups, _ = noble_upstroke_times(0.075)
    assert len(ups) >= 4
    periods = np.diff(ups)[1:]  # skip the transient first interval
    assert np.allclose(periods, periods[-1], rtol=0, atol=1e-3)
    assert abs(periods[-1] - 564.1345) < 1.0


def test_noble_fast_leak_period():
    ups, _ = noble_upstroke_times(0.18)
    periods = np.diff(ups)[1:]
    assert abs(periods[-1] - 324.2749) < 1.0


def test_noble_large_leak_is_quiescent():
    traj = integrate(noble_model(), NOBLE_IC, params={"G_L": 0.4},
                     t_span=(0.0, 3000.0))
    ups = find_crossings(traj, -20.0, "up")
    assert all(t < 500.0 for t in ups)        # at most one early transient
    tail = traj.states[0][traj.times > 2500.0]
    assert tail.max() - tail.min() < 1e-3     # settled to rest


@pytest.mark.parametrize("model,ic", [
    (noble_model(), NOBLE_IC),
    (bernus_model(), BERNUS_IC),
])
def test_gate_bounds_along_trajectory(model, ic):
    stim = StimulusProtocol(amplitude=30.0, start=20.0, duration=2.0)
    traj = integrate(model, ic, t_span=(0.0, 800.0), stimulus=stim)
    g = traj.states[1:]
    assert g.min() >= -1e-6 and g.max() <= 1 + 1e-6


def test_tolerance_self_consistency():
    # Loosened tolerances converge toward the tightest run's endpoint.
    ends = {}
    for rtol in (1e-6, 1e-8, 1e-10):
        cfg = SolverConfig(rtol=rtol, atol_V=rtol * 1e-2,
                           atol_gates=rtol * 1e-4)
        traj = integrate(noble_model(), NOBLE_IC, t_span=(0.0, 400.0),
                         config=cfg)
        ends[rtol] = traj.states[:, -1]
    err6 = np.max(np.abs(ends[1e-6] - ends[1e-10]))
    err8 = np.max(np.abs(ends[1e-8] - ends[1e-10]))
    assert err8 < err6
    assert err8 < 1e-4


# -- crossings ---------------------------------------------------------------


def test_crossing_time_of_known_decay():
    traj = integrate(decay_model(), [1.0], t_span=(0.0, 3.0))
    downs = find_crossings(traj, 0.5, "down")
    assert len(downs) == 1
    assert abs(downs[0] - math.log(2.0)) < 1e-7
    assert find_crossings(traj, 0.5, "up") == []


def test_constant_trajectory_has_no_crossings():
    model = ModelDefinition(name="bare", capacitance=1.0, gates=(),
                            current_specs=(), params={})
    traj = integrate(model, [0.0], t_span=(0.0, 10.0))
    assert find_crossings(traj, 0.0, "up") == []
    assert find_crossings(traj, 0.0, "down") == []


def test_crossings_direction_validation():
    traj = integrate(decay_model(), [1.0], t_span=(0.0, 1.0))
    with pytest.raises(ValueError):
        find_crossings(traj, 0.5, "sideways")


def test_noble_up_down_crossings_alternate():
    ups, traj = noble_upstroke_times(0.075, t_span=(0.0, 2000.0))
    downs = np.array(find_crossings(traj, -50.0, "down"))
    assert len(ups) >= 2 and len(downs) >= 2
    merged = sorted([(t, "u") for t in ups] + [(t, "d") for t in downs])
    kinds = [k for _, k in merged]
    assert all(a != b for a, b in zip(kinds, kinds[1:]))


# -- trajectory container ----------------------------------------------------


def test_sample_matches_mesh_and_rejects_outside():
    traj = integrate(decay_model(), [1.0], t_span=(0.0, 2.0))
    mid = len(traj.times) // 2
    assert np.allclose(traj.sample(traj.times[mid]), traj.states[:, mid],
                       rtol=0, atol=1e-12)
    many = traj.sample(traj.times[:5])
    assert many.shape == (1, 5)
    with pytest.raises(ValueError):
        traj.sample(2.5)


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory(times=np.array([0.0, 0.0]),
                   states=np.zeros((1, 2)), state_names=("V",))
    with pytest.raises(ValueError):
        Trajectory(times=np.array([0.0, 1.0]),
                   states=np.array([[0.0, np.nan]]), state_names=("V",))


def test_to_csv_round_trip(tmp_path):
    traj = integrate(decay_model(), [1.0], t_span=(0.0, 1.0))
    path = tmp_path / "traj.csv"
    traj.to_csv(path, stride=2)
    rows = path.read_text().strip().split("\n")
    assert rows[0] == "t,V"
    assert len(rows) == 1 + (len(traj.times) + 1) // 2
    t0, v0 = map(float, rows[1].split(","))
    assert t0 == 0.0 and v0 == 1.0
    tN, vN = map(float, rows[-1].split(","))
    assert abs(vN - math.exp(-tN)) < 1e-8


# -- failure modes -----------------------------------------------------------


def test_invalid_inputs_raise():
    model = decay_model()
    with pytest.raises(ValueError):
        integrate(model, [1.0], t_span=(1.0, 1.0))
    with pytest.raises(ValueError):
        integrate(model, [1.0], t_span=(0.0, -5.0))
    with pytest.raises(ValueError):
        integrate(model, [1.0, 2.0], t_span=(0.0, 1.0))
    with pytest.raises(ValueError):
        integrate(model, [np.nan], t_span=(0.0, 1.0))
    with pytest.raises(ValueError):
        SolverConfig(rtol=-1.0)


def test_divergence_reports_last_state():
    # dV/dt = V^3 blows up in finite time (t* = 1/(2 V0^2) = 0.5).
    model = ModelDefinition(
        name="blowup", capacitance=1.0, gates=(),
        current_specs=(CurrentSpec("I_cubic", ["neg", ["pow", "V", 3]]),),
        params={},
    )
    with pytest.raises(IntegrationError) as exc:
        integrate(model, [1.0], t_span=(0.0, 1.0))
    err = exc.value
    assert err.t is not None and 0.0 < err.t <= 1.0
    assert err.state is not None and err.state.shape == (1,)
