"""Trajectory-level measurements: oscillation period, action-potential
metrics, early-afterdepolarization (EAD) counting, and the largest Lyapunov
exponent for chaos classification.

All measurements operate on :class:`~cardiodyn.integrator.Trajectory`
objects (period, AP metrics, EADs) or directly on a model (Lyapunov).  The
voltage component is always row 0 of the state matrix.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.signal import find_peaks

from .integrator import IntegrationError, SolverConfig, find_crossings

#: scale used to nondimensionalize voltage against the unit-interval gates
V_SCALE = 100.0

#: default chaos threshold on the leading Lyapunov exponent, 1/ms
LYAPUNOV_THRESHOLD = 5e-4


class DiagnosticsError(RuntimeError):
    """Raised when a measurement cannot be made on the given input."""


@dataclass(frozen=True)
class ApMetrics:
    """Per-train action-potential summary.

    ``apd`` is the action-potential duration at ``repol_fraction``
    repolarization (APD90 by default); ``ead_count`` is the count for a
    representative (last complete) AP of the train.
    """

    period: float | None        # ms, None if not periodic
    V_max: float                # mV
    V_min: float                # mV
    apd: float | None           # ms
    ead_count: int
    repol_fraction: float = 0.9

    def __post_init__(self):
        if self.V_max <= self.V_min:
            raise ValueError("V_max must exceed V_min")
        if self.period is not None and self.apd is not None \
                and self.apd >= self.period:
            raise ValueError("APD must be below the period")


@dataclass(frozen=True)
class LyapunovResult:
    """Benettin estimate of the leading Lyapunov exponent."""

    exponent: float             # 1/ms
    series: np.ndarray          # running estimates after each renormalization
    horizon: float              # ms
    renorm_dt: float            # ms
    delta0: float               # initial scaled separation
    verdict: str                # chaotic | non-chaotic | marginal
    threshold: float = LYAPUNOV_THRESHOLD

    @property
    def tail_drift(self) -> float:
        """Relative drift of the running estimate over the last quarter."""
        return _tail_drift(self.series)


def _tail_drift(series):
    series = np.asarray(series, dtype=float)
    if series.size < 8:
        return np.inf
    a = series[int(0.75 * series.size)]
    b = series[-1]
    denom = max(abs(b), 1e-12)
    return abs(a - b) / denom


def _scales(dim):
    s = np.ones(dim)
    s[0] = V_SCALE
    return s


def _tail(traj, discard):
    """Times/states past the transient-discard window."""
    t0, t1 = traj.t_span
    cut = t0 + discard * (t1 - t0)
    keep = traj.times >= cut
    if np.count_nonzero(keep) < 4:
        raise DiagnosticsError("trajectory too short after transient discard")
    return traj.times[keep], traj.states[:, keep]


def measure_period(traj, discard=0.2, spread_tol=0.01, recurrence_tol=1e-3):
    """Oscillation period of a trajectory, or None if not periodic.

    The period is the median spacing of upward crossings of the mid-range
    voltage level on the post-transient tail.  The measurement is rejected
    (None) when fewer than 3 crossings exist, when the crossing spacings
    spread by more than ``spread_tol`` relative, or when the state fails to
    recur (all components within ``recurrence_tol``, voltage scaled) one
    period after the last usable crossing.
    """
    t, x = _tail(traj, discard)
    V = x[0]
    vmin, vmax = float(V.min()), float(V.max())
    if vmax - vmin < 1e-6:
        return None
    level = 0.5 * (vmin + vmax)
    cross = [tc for tc in find_crossings(traj, level, "up") if tc >= t[0]]
    if len(cross) < 3:
        return None
    spacings = np.diff(cross)
    T = float(np.median(spacings))
    if T <= 0:
        return None
    if (spacings.max() - spacings.min()) / T > spread_tol:
        return None
    # recurrence confirmation in scaled state space
    t_ref = cross[-2]
    if t_ref + T > traj.t_span[1]:
        t_ref = cross[-2] - T
        if t_ref < traj.t_span[0]:
            return None
    s = _scales(x.shape[0])
    a = traj.sample(t_ref) / s
    b = traj.sample(t_ref + T) / s
    if np.max(np.abs(a - b)) > recurrence_tol:
        return None
    return T


def _resample(traj, window, dt):
    lo = max(window[0], traj.t_span[0])
    hi = min(window[1], traj.t_span[1])
    if hi - lo <= 2 * dt:
        raise DiagnosticsError("AP window too short to resample")
    n = int(np.ceil((hi - lo) / dt)) + 1
    t = np.linspace(lo, hi, n)
    return t, traj.sample(t)[0]


def _count_eads_in_window(t, V, prominence, repol_fraction, notch_window):
    """EADs in one AP window: a local minimum followed by a local maximum,
    after the upstroke peak and before the repolarization level is reached,
    with the given prominence in mV.  Depolarization reversals whose local
    minimum falls within ``notch_window`` ms of the upstroke peak are the
    phase-1 notch-and-dome of the normal AP morphology and are excluded."""
    i_peak = int(np.argmax(V))
    v_peak = V[i_peak]
    v_base = float(V.min())
    v_repol = v_peak - repol_fraction * (v_peak - v_base)
    # end of the AP: first return below the repolarization level
    below = np.nonzero(V[i_peak:] <= v_repol)[0]
    i_end = i_peak + int(below[0]) if below.size else len(V) - 1
    if i_end - i_peak < 3:
        return 0
    seg = V[i_peak:i_end + 1]
    tseg = t[i_peak:i_end + 1]
    peaks, props = find_peaks(seg, prominence=prominence)
    count = 0
    for j, pi in enumerate(peaks):
        if pi == 0:
            continue  # the upstroke peak itself
        t_min = tseg[int(props["left_bases"][j])]
        if t_min - tseg[0] < notch_window:
            continue  # phase-1 notch/dome
        count += 1
    return count


def count_eads(traj, ap_window=None, prominence=1.0, repol_fraction=0.9,
               notch_window=150.0, dt=0.25, min_amplitude=20.0):
    """Per-AP counts of early afterdepolarizations.

    An EAD is a local minimum followed by a local maximum, both strictly
    inside the AP (after the upstroke peak, before the first return below
    the ``repol_fraction`` repolarization level), with prominence at least
    ``prominence`` mV.  With ``ap_window=(t0, t1)`` the window is treated
    as a single AP; otherwise APs are segmented by upward crossings of the
    mid-range voltage level.  Reversals whose local minimum falls within
    ``notch_window`` ms of the upstroke peak are treated as the phase-1
    notch-and-dome of the normal AP morphology, not EADs.  Returns a list
    of counts, one per AP (empty if no AP is found).  A trace whose total
    voltage excursion stays below ``min_amplitude`` mV contains no action
    potential and yields no windows.
    """
    if ap_window is not None:
        t, V = _resample(traj, ap_window, dt)
        return [_count_eads_in_window(t, V, prominence, repol_fraction,
                                      notch_window)]

    V_all = traj.states[0]
    vmin, vmax = float(V_all.min()), float(V_all.max())
    if vmax - vmin < min_amplitude:
        return []
    level = 0.5 * (vmin + vmax)
    ups = find_crossings(traj, level, "up")
    if not ups:
        return []
    # close each window at the next upstroke (or trajectory end); EAD
    # oscillations live in the plateau, well above the mid-range level, so
    # mid-level upstrokes segment APs cleanly
    edges = list(ups) + [traj.t_span[1]]
    counts = []
    for a, b in zip(edges[:-1], edges[1:]):
        if b - a < 5 * dt:
            continue
        t, V = _resample(traj, (a, b), dt)
        counts.append(_count_eads_in_window(t, V, prominence, repol_fraction,
                                            notch_window))
    return counts


def ap_metrics(traj, discard=0.2, prominence=1.0, repol_fraction=0.9,
               notch_window=150.0):
    """Summary :class:`ApMetrics` for the post-transient tail of a train."""
    t, x = _tail(traj, discard)
    V = x[0]
    vmin, vmax = float(V.min()), float(V.max())
    if vmax - vmin < 1e-6:
        raise DiagnosticsError("trajectory is constant; no AP to measure")
    period = measure_period(traj, discard=discard)
    level = 0.5 * (vmin + vmax)
    ups = [tc for tc in find_crossings(traj, level, "up") if tc >= t[0]]
    apd = None
    ead = 0
    if ups:
        end = ups[1] if len(ups) > 1 else traj.t_span[1]
        tw, Vw = _resample(traj, (ups[0], end), 0.25)
        i_peak = int(np.argmax(Vw))
        v_repol = Vw[i_peak] - repol_fraction * (Vw[i_peak] - vmin)
        below = np.nonzero(Vw[i_peak:] <= v_repol)[0]
        if below.size:
            apd = float(tw[i_peak + below[0]] - ups[0])
        ead = _count_eads_in_window(tw, Vw, prominence, repol_fraction,
                                    notch_window)
    if period is not None and apd is not None and apd >= period:
        apd = None
    return ApMetrics(period=period, V_max=vmax, V_min=vmin, apd=apd,
                     ead_count=ead, repol_fraction=repol_fraction)


def largest_lyapunov(model, params, ic, horizon=20000.0, renorm_dt=10.0,
                     delta0=1e-8, discard=0.1, threshold=LYAPUNOV_THRESHOLD,
                     rtol=1e-8, atol=1e-10):
    """Leading Lyapunov exponent by the two-trajectory Benettin method.

    A reference trajectory and a companion offset by a scaled separation
    ``delta0`` are advanced together; every ``renorm_dt`` ms the separation
    is measured (voltage scaled by 100 against the unit gates), accumulated
    as log-growth, and renormalized back to ``delta0``.  The first
    ``discard`` fraction of renormalization intervals is dropped as
    transient.  The verdict is "chaotic" when the exponent exceeds
    ``threshold`` with a converged tail (last-quarter drift below 20%),
    "marginal" when it exceeds the threshold without convergence, and
    "non-chaotic" otherwise.
    """
    ic = np.asarray(ic, dtype=float)
    if ic.shape != (model.dim,) or not np.all(np.isfinite(ic)):
        raise ValueError("initial condition must be a finite state vector")
    if not horizon > 10 * renorm_dt:
        raise ValueError("horizon must be much larger than renorm_dt")
    p = model.merge_params(params)
    pv = tuple(p[k] for k in model.param_names)
    rhs_fn, dim = model._rhs_scalar_fn, model.dim
    s = _scales(dim)

    def f(t, y):
        return (list(rhs_fn(*y[:dim], *pv, 0.0))
                + list(rhs_fn(*y[dim:], *pv, 0.0)))

    rng_dir = np.ones(dim) / np.sqrt(dim)
    x = ic.copy()
    xp = x + delta0 * rng_dir * s
    n_steps = int(round(horizon / renorm_dt))
    logs = []
    t = 0.0
    for _ in range(n_steps):
        sol = solve_ivp(f, (t, t + renorm_dt), np.concatenate([x, xp]),
                        method="LSODA", rtol=rtol, atol=atol,
                        dense_output=False)
        if not sol.success or not np.all(np.isfinite(sol.y[:, -1])):
            raise IntegrationError(
                f"Lyapunov companion integration failed at t={t:.3f}: "
                f"{sol.message}", t=t, state=x)
        y = sol.y[:, -1]
        x, xp = y[:dim], y[dim:]
        d = (xp - x) / s
        dist = float(np.linalg.norm(d))
        if dist <= 0.0:
            raise DiagnosticsError("separation collapsed to zero")
        logs.append(np.log(dist / delta0))
        xp = x + (xp - x) * (delta0 / dist)
        t += renorm_dt
    logs = np.asarray(logs)
    keep = logs[int(discard * len(logs)):]
    cum = np.cumsum(keep)
    series = cum / (renorm_dt * np.arange(1, len(keep) + 1))
    lam = float(series[-1])
    drift = _tail_drift(series)
    if lam > threshold:
        verdict = "chaotic" if drift < 0.2 else "marginal"
    else:
        verdict = "non-chaotic"
    return LyapunovResult(exponent=lam, series=series, horizon=horizon,
                          renorm_dt=renorm_dt, delta0=delta0,
                          verdict=verdict, threshold=threshold)


def write_metrics_csv(path, rows):
    """Write per-run metrics rows.

    Each row is a mapping with keys ``run_id`` and optionally ``T``,
    ``V_max``, ``V_min``, ``APD90``, ``EAD_count``, ``lambda1``,
    ``verdict``; missing values are left blank.
    """
    cols = ["run_id", "T", "V_max", "V_min", "APD90", "EAD_count",
            "lambda1", "verdict"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in cols})
