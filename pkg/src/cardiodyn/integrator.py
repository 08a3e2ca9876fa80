"""Stiff initial-value integration with dense output and event location.

Wraps scipy's variable-step, variable-order implicit solvers (LSODA by
default, BDF/Radau selectable) with the model's analytic Jacobian.  Square
stimulus pulses are handled by restarting the integration at every pulse
edge so the discontinuity never degrades the method order.  Dense output is
kept per segment, so a trajectory can be queried at arbitrary times within
the covered span; crossings of a voltage level are located by bisection on
the solver mesh followed by root polishing on the dense output.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq


class IntegrationError(RuntimeError):
    """Stiffness failure or divergence; carries the last valid state."""

    def __init__(self, message, t=None, state=None):
        super().__init__(message)
        self.t = t
        self.state = state


@dataclass(frozen=True)
class StimulusProtocol:
    """Square current pulses: amplitude for t in [start, start+duration),
    repeated ``count`` times every ``period`` ms."""

    amplitude: float = 0.0  # uA/cm^2
    start: float = 0.0      # ms
    duration: float = 2.0   # ms
    period: float = 0.0     # ms; ignored when count == 1
    count: int = 1

    def edges(self, t0, t1):
        """Pulse on/off times strictly inside (t0, t1), sorted."""
        if self.amplitude == 0.0 or self.count < 1:
            return []
        out = []
        for k in range(self.count):
            on = self.start + k * self.period
            for e in (on, on + self.duration):
                if t0 < e < t1:
                    out.append(e)
        return sorted(out)

    def current(self, t):
        if self.amplitude == 0.0:
            return 0.0
        k = 0 if self.period <= 0 else int(np.floor((t - self.start) / self.period))
        k = min(max(k, 0), self.count - 1)
        on = self.start + k * self.period
        return self.amplitude if on <= t < on + self.duration else 0.0


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and method choice for stiff integration."""

    rtol: float = 1e-10
    atol_V: float = 1e-12
    atol_gates: float = 1e-14
    max_step: float = np.inf
    method: str = "LSODA"   # or "BDF", "Radau"
    event_tol: float = 1e-8  # ms

    def __post_init__(self):
        if self.rtol <= 0 or self.atol_V <= 0 or self.atol_gates <= 0:
            raise ValueError("tolerances must be positive")

    def atol(self, dim):
        return np.array([self.atol_V] + [self.atol_gates] * (dim - 1))


@dataclass
class Trajectory:
    """Time-stamped states with dense output and event records."""

    times: np.ndarray                 # strictly increasing, ms
    states: np.ndarray                # (dim, len(times))
    state_names: tuple
    events: list = field(default_factory=list)  # (time, kind, state)
    stats: dict = field(default_factory=dict)
    _segments: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("non-finite states in trajectory")

    @property
    def t_span(self):
        return float(self.times[0]), float(self.times[-1])

    def sample(self, t):
        """Dense-output state at time(s) t within the covered span."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tq = np.atleast_1d(t)
        lo, hi = self.t_span
        if np.any(tq < lo - 1e-9) or np.any(tq > hi + 1e-9):
            raise ValueError("sample time outside covered span")
        out = np.empty((self.states.shape[0], tq.size))
        for i, ti in enumerate(tq):
            for (a, b, sol) in self._segments:
                if a - 1e-9 <= ti <= b + 1e-9:
                    out[:, i] = sol(np.clip(ti, a, b))
                    break
            else:
                raise ValueError(f"no dense output covering t={ti}")
        return out[:, 0] if scalar else out

    def to_csv(self, path, stride=1):
        """Write `t,V,<gates>` rows, sub-sampled by ``stride``."""
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t"] + list(self.state_names))
            for i in range(0, len(self.times), stride):
                w.writerow([repr(float(self.times[i]))]
                           + [repr(float(v)) for v in self.states[:, i]])


def integrate(model, ic, params=None, t_span=(0.0, 1000.0), config=None,
              stimulus=None):
    """Integrate a cell model over ``t_span``; returns a :class:`Trajectory`."""
    config = config or SolverConfig()
    stimulus = stimulus or StimulusProtocol()
    t0, t1 = map(float, t_span)
    if not (np.isfinite(t0) and np.isfinite(t1)) or t1 <= t0:
        raise ValueError(f"bad t_span {t_span}")
    ic = np.asarray(ic, dtype=float)
    if ic.shape != (model.dim,) or not np.all(np.isfinite(ic)):
        raise ValueError("initial condition must be a finite state vector")

    p = model.merge_params(params)
    pv = tuple(p[k] for k in model.param_names)
    rhs_fn, jac_fn, dim = model._rhs_scalar_fn, model._jac_scalar_fn, model.dim

    def make_fns(I_stim):
        def f(t, y):
            return rhs_fn(*y, *pv, I_stim)

        def jac(t, y):
            return np.array(jac_fn(*y, *pv, I_stim), dtype=float).reshape(dim, dim)

        return f, jac

    cuts = [t0] + stimulus.edges(t0, t1) + [t1]
    times = [np.array([t0])]
    states = [ic.reshape(-1, 1)]
    segments = []
    stats = {"steps": 0, "rejections": 0, "jac_evals": 0, "segments": 0}
    y = ic
    for a, b in zip(cuts[:-1], cuts[1:]):
        I = stimulus.current(0.5 * (a + b))
        f, jac = make_fns(I)
        sol = solve_ivp(
            f, (a, b), y, method=config.method, jac=jac,
            rtol=config.rtol, atol=config.atol(dim),
            max_step=config.max_step, dense_output=True,
        )
        if sol.status == -1:
            raise IntegrationError(
                f"solver failed at t={sol.t[-1]:.6g}: {sol.message}",
                t=float(sol.t[-1]), state=sol.y[:, -1].copy(),
            )
        if not np.all(np.isfinite(sol.y)):
            raise IntegrationError("divergence: non-finite state",
                                   t=float(sol.t[-1]), state=sol.y[:, -1])
        times.append(sol.t[1:])
        states.append(sol.y[:, 1:])
        segments.append((a, b, sol.sol))
        stats["steps"] += int(sol.nfev)
        stats["jac_evals"] += int(sol.njev)
        stats["segments"] += 1
        y = sol.y[:, -1]

    t = np.concatenate(times)
    x = np.concatenate(states, axis=1)
    keep = np.concatenate([[True], np.diff(t) > 0])
    traj = Trajectory(times=t[keep], states=x[:, keep],
                      state_names=model.state_names, stats=stats)
    traj._segments = segments
    return traj


def find_crossings(traj, level, direction="up"):
    """Times where V crosses ``level`` in the given direction, polished on
    the dense output to the event tolerance; strict crossings only."""
    if direction not in ("up", "down"):
        raise ValueError("direction must be 'up' or 'down'")
    V = traj.states[0] - level
    t = traj.times
    out = []
    for i in range(len(t) - 1):
        a, b = V[i], V[i + 1]
        if direction == "up" and not (a < 0.0 <= b):
            continue
        if direction == "down" and not (a > 0.0 >= b):
            continue
        g = lambda s: traj.sample(s)[0] - level
        if g(t[i]) * g(t[i + 1]) < 0:
            out.append(brentq(g, t[i], t[i + 1], xtol=1e-8))
        else:
            out.append(t[i + 1])
    return out
