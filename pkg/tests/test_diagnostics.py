"""Diagnostics tests: period measurement against synthetic signals with
known periods and against the Purkinje model, EAD counting on constructed
and simulated action potentials, Lyapunov classification, and the metrics
CSV format."""

import csv

import numpy as np
import pytest

from cardiodyn import BERNUS_IC, NOBLE_IC, bernus_model, noble_model
from cardiodyn.diagnostics import (
    ApMetrics,
    DiagnosticsError,
    LyapunovResult,
    ap_metrics,
    count_eads,
    largest_lyapunov,
    measure_period,
    write_metrics_csv,
)
from cardiodyn.integrator import StimulusProtocol, integrate

NOBLE = noble_model()
BERNUS = bernus_model()
BERNUS_STIM = StimulusProtocol(amplitude=40.0, start=10.0, duration=2.0)


class SyntheticTrajectory:
    """Minimal trajectory double: tabulated states with linear dense
    output, enough for the measurement routines."""

    def __init__(self, times, states):
        self.times = np.asarray(times, dtype=float)
        self.states = np.asarray(states, dtype=float)

    @property
    def t_span(self):
        return float(self.times[0]), float(self.times[-1])

    def sample(self, t):
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tq = np.atleast_1d(t)
        out = np.vstack([np.interp(tq, self.times, row)
                         for row in self.states])
        return out[:, 0] if scalar else out


def sine_trajectory(period=100.0, n_periods=12, amp=30.0, offset=-20.0,
                    dt=0.1):
    t = np.arange(0.0, n_periods * period, dt)
    V = offset + amp * np.sin(2.0 * np.pi * t / period)
    w = 0.5 + 0.1 * np.cos(2.0 * np.pi * t / period)
    return SyntheticTrajectory(t, np.vstack([V, w]))


def synthetic_ap(bumps=(), t_end=600.0, dt=0.25, upstroke=10.0,
                 repol=500.0):
    """One AP: rest at -85, fast upstroke to +30, linear plateau decay to
    -85 at ``repol``, optional Gaussian bumps (time, amplitude)."""
    t = np.arange(0.0, t_end, dt)
    V = np.full_like(t, -85.0)
    rising = (t >= upstroke) & (t < upstroke + 2.0)
    V[rising] = -85.0 + (30.0 + 85.0) * (t[rising] - upstroke) / 2.0
    plateau = (t >= upstroke + 2.0) & (t < repol)
    frac = (t[plateau] - upstroke - 2.0) / (repol - upstroke - 2.0)
    V[plateau] = 30.0 - (30.0 + 85.0) * frac
    for (tb, ab) in bumps:
        V += ab * np.exp(-0.5 * ((t - tb) / 8.0) ** 2)
    return SyntheticTrajectory(t, V[None, :])


# -- measure_period: synthetic ground truth --------------------------------------


def test_period_of_pure_sine():
    T = measure_period(sine_trajectory(period=100.0))
    assert T is not None
    assert abs(T - 100.0) < 0.01


def test_constant_trajectory_has_no_period():
    t = np.linspace(0.0, 1000.0, 2001)
    traj = SyntheticTrajectory(t, np.full((1, t.size), -80.0))
    assert measure_period(traj) is None


def test_too_few_crossings_rejected():
    assert measure_period(sine_trajectory(period=100.0, n_periods=2)) is None


def test_irregular_spacing_rejected():
    # chirp: crossing spacings drift by far more than 1%
    t = np.arange(0.0, 1200.0, 0.05)
    phase = 2.0 * np.pi * (t / 100.0 + 0.3 * (t / 1200.0) ** 2)
    traj = SyntheticTrajectory(t, (-20.0 + 30.0 * np.sin(phase))[None, :])
    assert measure_period(traj) is None


def test_recurrence_check_rejects_drifting_state():
    # voltage is exactly periodic but a hidden component drifts, so the
    # state never recurs
    traj = sine_trajectory(period=100.0)
    drift = np.linspace(0.0, 1.0, traj.times.size)
    traj.states = np.vstack([traj.states[0], drift])
    assert measure_period(traj) is None


def test_period_of_purkinje_oscillation():
    traj = integrate(NOBLE, NOBLE_IC, params={"G_L": 0.075},
                     t_span=(0.0, 6000.0))
    T = measure_period(traj)
    assert T is not None
    assert abs(T - 564.13) < 1.0


@pytest.mark.slow
def test_period_of_purkinje_zero_leak():
    traj = integrate(NOBLE, NOBLE_IC, params={"G_L": 0.0},
                     t_span=(0.0, 8000.0))
    T = measure_period(traj)
    assert T is not None
    assert abs(T - 839.50) < 1.5


@pytest.mark.slow
def test_chaotic_trajectory_has_no_period():
    ic = np.array([-40.8454, 0.0268, 0.3233, 0.5852])
    traj = integrate(NOBLE, ic, params={"G_L": 0.1845},
                     t_span=(0.0, 8000.0))
    assert measure_period(traj) is None


# -- count_eads -------------------------------------------------------------------


def test_two_injected_bumps_count_as_two():
    traj = synthetic_ap(bumps=[(250.0, 6.0), (350.0, 6.0)])
    assert count_eads(traj) == [2]


def test_clean_ap_counts_zero():
    assert count_eads(synthetic_ap()) == [0]


def test_subthreshold_bumps_ignored():
    # a 4 mV bump on the sloping plateau leaves only a ~0.35 mV prominence
    traj = synthetic_ap(bumps=[(250.0, 4.0), (350.0, 4.0)])
    assert count_eads(traj) == [0]


def test_prominence_threshold_configurable():
    traj = synthetic_ap(bumps=[(250.0, 4.0)])
    assert count_eads(traj, prominence=0.2) == [1]


def test_early_notch_dome_excluded_by_default():
    # a reversal right after the upstroke is normal AP morphology
    traj = synthetic_ap(bumps=[(80.0, 6.0)])
    assert count_eads(traj) == [0]
    assert count_eads(traj, notch_window=0.0) == [1]


def test_bumps_after_repolarization_not_counted():
    traj = synthetic_ap(bumps=[(550.0, 6.0)], t_end=700.0)
    assert count_eads(traj) == [0]


def test_explicit_window_treated_as_single_ap():
    traj = synthetic_ap(bumps=[(250.0, 6.0)])
    assert count_eads(traj, ap_window=(0.0, 590.0)) == [1]


def test_bernus_standard_ap_has_no_eads():
    traj = integrate(BERNUS, BERNUS_IC, t_span=(0.0, 600.0),
                     stimulus=BERNUS_STIM)
    assert count_eads(traj) == [0]


def test_noble_aps_have_no_eads():
    traj = integrate(NOBLE, NOBLE_IC, params={"G_L": 0.1},
                     t_span=(0.0, 3000.0))
    counts = count_eads(traj)
    assert len(counts) >= 3
    assert all(c == 0 for c in counts)


@pytest.mark.slow
def test_bernus_blocked_ead_train():
    # with 80% I_Kr block near the fold of the depolarized branch, a single
    # stimulated AP carries a train of EADs before repolarizing (this
    # transcription places the six-EAD point at G_Ca ~ 0.1037785)
    traj = integrate(BERNUS, BERNUS_IC,
                     params={"G_Ca": 0.1037785, "block_Kr": 0.8},
                     t_span=(0.0, 9000.0), stimulus=BERNUS_STIM)
    counts = count_eads(traj)
    assert len(counts) == 1
    assert 5 <= counts[0] <= 7


# -- ap_metrics -------------------------------------------------------------------


def test_ap_metrics_of_purkinje_cycle():
    traj = integrate(NOBLE, NOBLE_IC, params={"G_L": 0.075},
                     t_span=(0.0, 6000.0))
    met = ap_metrics(traj)
    assert met.period is not None and abs(met.period - 564.13) < 1.0
    assert met.V_max > 0.0 > met.V_min
    assert met.apd is not None and 0.0 < met.apd < met.period
    assert met.ead_count == 0


def test_ap_metrics_validation():
    with pytest.raises(ValueError):
        ApMetrics(period=100.0, V_max=-80.0, V_min=-20.0, apd=50.0,
                  ead_count=0)
    with pytest.raises(ValueError):
        ApMetrics(period=100.0, V_max=30.0, V_min=-80.0, apd=120.0,
                  ead_count=0)


def test_ap_metrics_rejects_constant_input():
    t = np.linspace(0.0, 1000.0, 1001)
    traj = SyntheticTrajectory(t, np.full((1, t.size), -80.0))
    with pytest.raises(DiagnosticsError):
        ap_metrics(traj)


# -- largest_lyapunov -------------------------------------------------------------


def test_lyapunov_negative_at_stable_equilibrium():
    res = largest_lyapunov(NOBLE, {"G_L": 0.4}, NOBLE_IC, horizon=3000.0)
    assert res.exponent < 0.0
    assert res.verdict == "non-chaotic"
    assert res.series.size > 10


@pytest.mark.slow
def test_lyapunov_near_zero_on_stable_cycle():
    res = largest_lyapunov(NOBLE, {"G_L": 0.075}, NOBLE_IC, horizon=20000.0)
    assert abs(res.exponent) < res.threshold
    assert res.verdict == "non-chaotic"


@pytest.mark.slow
def test_lyapunov_positive_in_chaotic_regime():
    ic = np.array([-40.8454, 0.0268, 0.3233, 0.5852])
    res = largest_lyapunov(NOBLE, {"G_L": 0.1845}, ic, horizon=20000.0)
    assert res.exponent > res.threshold
    assert res.verdict == "chaotic"
    assert res.tail_drift < 0.2


@pytest.mark.slow
def test_lyapunov_robust_to_discretization_choices():
    ic = np.array([-40.8454, 0.0268, 0.3233, 0.5852])
    base = largest_lyapunov(NOBLE, {"G_L": 0.1845}, ic, horizon=15000.0)
    half_d0 = largest_lyapunov(NOBLE, {"G_L": 0.1845}, ic, horizon=15000.0,
                               delta0=5e-9)
    half_dt = largest_lyapunov(NOBLE, {"G_L": 0.1845}, ic, horizon=15000.0,
                               renorm_dt=5.0)
    for other in (half_d0, half_dt):
        assert abs(other.exponent - base.exponent) < 0.3 * abs(base.exponent)
        assert other.verdict == base.verdict


def test_lyapunov_input_validation():
    with pytest.raises(ValueError):
        largest_lyapunov(NOBLE, None, [0.0, 0.0], horizon=1000.0)
    with pytest.raises(ValueError):
        largest_lyapunov(NOBLE, None, NOBLE_IC, horizon=50.0,
                         renorm_dt=10.0)


def test_lyapunov_result_fields():
    res = LyapunovResult(exponent=1e-3, series=np.linspace(1e-3, 1e-3, 20),
                         horizon=1000.0, renorm_dt=10.0, delta0=1e-8,
                         verdict="chaotic")
    assert res.tail_drift < 1e-9


# -- metrics CSV -------------------------------------------------------------------


def test_write_metrics_csv(tmp_path):
    rows = [
        {"run_id": "a", "T": 564.13, "V_max": 23.4, "V_min": -81.6,
         "APD90": 289.0, "EAD_count": 0, "lambda1": -1e-4,
         "verdict": "non-chaotic"},
        {"run_id": "b", "EAD_count": 6},
    ]
    path = tmp_path / "metrics.csv"
    write_metrics_csv(path, rows)
    with open(path) as fh:
        got = list(csv.DictReader(fh))
    assert got[0]["run_id"] == "a"
    assert float(got[0]["T"]) == 564.13
    assert got[0]["verdict"] == "non-chaotic"
    assert got[1]["EAD_count"] == "6"
    assert got[1]["T"] == ""
