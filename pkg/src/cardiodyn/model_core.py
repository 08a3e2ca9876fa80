"""Cell models as data: gates, currents, parameters, and evaluatable RHS.

A model is a :class:`ModelDefinition` whose gate kinetics and current
formulas are expression trees (see :mod:`cardiodyn.expressions`).  All
evaluation paths (right-hand side, currents, analytic Jacobian) are compiled
once per model into plain numpy functions, so the same definition serves
single-cell integration, continuation, and vectorized cable simulation.

Units project-wide: mV, ms, uA/cm^2, mS/cm^2, uF/cm^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import expressions as ex


class ModelError(ValueError):
    """Inconsistent model definition or bad symbol."""


@dataclass(frozen=True)
class GateSpec:
    """One gating variable.

    Kinetics are given either as opening/closing rates ``rate_a``/``rate_b``
    (1/ms, closed forms in V) or directly as ``y_inf``/``tau`` closed forms.
    ``singular_points`` lists V values where a rate formula has a removable
    singularity (handled by the series branches of linexp/expm1r).
    """

    name: str
    rate_a: object = None
    rate_b: object = None
    y_inf: object = None
    tau: object = None
    singular_points: tuple = ()

    def __post_init__(self):
        has_rates = self.rate_a is not None and self.rate_b is not None
        has_steady = self.y_inf is not None and self.tau is not None
        if has_rates == has_steady:
            raise ModelError(
                f"gate {self.name!r}: give exactly one of (rate_a, rate_b) "
                "or (y_inf, tau)"
            )
        for e in (self.rate_a, self.rate_b, self.y_inf, self.tau):
            if e is not None:
                ex.validate(e, {"V"})

    def steady_exprs(self):
        """(y_inf, tau) expression trees."""
        if self.y_inf is not None:
            return self.y_inf, self.tau
        a, b = self.rate_a, self.rate_b
        s = ["+", a, b]
        return ["/", a, s], ["/", 1.0, s]

    def rate_exprs(self):
        """(a, b) expression trees; derived from y_inf/tau if needed."""
        if self.rate_a is not None:
            return self.rate_a, self.rate_b
        return (
            ["/", self.y_inf, self.tau],
            ["/", ["-", 1.0, self.y_inf], self.tau],
        )


@dataclass(frozen=True)
class CurrentSpec:
    """One transmembrane current: expression over V, gate names, parameters."""

    name: str
    expr: object
    conductance: str = ""
    reversal: str = ""


@dataclass(frozen=True)
class ModelDefinition:
    name: str
    capacitance: float
    gates: tuple
    current_specs: tuple
    params: dict
    notes: str = ""

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        object.__setattr__(self, "current_specs", tuple(self.current_specs))
        object.__setattr__(self, "params", dict(self.params))
        if self.capacitance <= 0:
            raise ModelError("capacitance must be positive")
        names = [g.name for g in self.gates]
        if len(set(names)) != len(names) or "V" in names:
            raise ModelError("duplicate or reserved gate names")
        allowed = {"V"} | set(names) | set(self.params)
        for c in self.current_specs:
            try:
                ex.validate(c.expr, allowed)
            except ex.ExprError as err:
                raise ModelError(f"current {c.name!r}: {err}") from err
        validate_params(self.params)

    # -- layout ------------------------------------------------------------

    @property
    def dim(self):
        return 1 + len(self.gates)

    @property
    def state_names(self):
        return ("V",) + tuple(g.name for g in self.gates)

    @property
    def gate_names(self):
        return tuple(g.name for g in self.gates)

    @property
    def param_names(self):
        return tuple(self.params)

    def gate(self, name):
        for g in self.gates:
            if g.name == name:
                return g
        raise ModelError(f"model {self.name!r} has no gate {name!r}")

    def merge_params(self, overrides=None):
        """Defaults updated with ``overrides``; unknown symbols rejected."""
        p = dict(self.params)
        if overrides:
            bad = set(overrides) - set(p)
            if bad:
                raise ModelError(
                    f"unknown parameter(s) {sorted(bad)}; "
                    f"valid: {sorted(p)}"
                )
            p.update(overrides)
        validate_params(p)
        return p

    # -- compiled evaluation -----------------------------------------------

    def _rhs_exprs(self):
        named = {}
        total = 0.0
        for c in self.current_specs:
            total = ex._add(total, c.expr)
        named["dV"] = ["/", ["-", "I_stim", total], self.capacitance]
        for g in self.gates:
            y_inf, tau = g.steady_exprs()
            named[f"d{g.name}"] = ["/", ["-", y_inf, g.name], tau]
        return named

    @cached_property
    def _args(self):
        return ("V",) + self.gate_names + self.param_names + ("I_stim",)

    @cached_property
    def _rhs_fn(self):
        return ex.compile_exprs(self._rhs_exprs(), self._args, "_rhs")

    @cached_property
    def _rhs_scalar_fn(self):
        """Scalar (math-module) RHS; fast path for stiff integration."""
        return ex.compile_exprs(self._rhs_exprs(), self._args, "_rhs_s",
                                scalar=True)

    @cached_property
    def _jac_scalar_fn(self):
        return ex.compile_exprs(self._jac_named_exprs(), self._args, "_jac_s",
                                scalar=True)

    @cached_property
    def _currents_fn(self):
        named = {c.name: c.expr for c in self.current_specs}
        return ex.compile_exprs(named, self._args[:-1], "_currents")

    @cached_property
    def _gates_fn(self):
        named = {}
        for g in self.gates:
            a, b = g.rate_exprs()
            y_inf, tau = g.steady_exprs()
            named[f"a_{g.name}"] = a
            named[f"b_{g.name}"] = b
            named[f"yinf_{g.name}"] = y_inf
            named[f"tau_{g.name}"] = tau
        return ex.compile_exprs(named, ("V",), "_gates")

    def _jac_named_exprs(self):
        """Analytic Jacobian entries, row-major, by symbolic differentiation."""
        rhs = self._rhs_exprs()
        state = self.state_names
        named = {}
        for i, comp in enumerate(rhs.values()):
            for j, sym in enumerate(state):
                if i > 0 and j > 0 and i != j:
                    named[f"j_{i}_{j}"] = 0.0  # gate rows couple only to V, self
                else:
                    named[f"j_{i}_{j}"] = ex.diff(comp, sym)
        return named

    @cached_property
    def _jac_fn(self):
        return ex.compile_exprs(self._jac_named_exprs(), self._args, "_jac")

    @cached_property
    def _dv_dparam_fns(self):
        return {}

    def _param_values(self, params):
        return tuple(params[k] for k in self.param_names)

    def _check_state(self, state):
        state = np.asarray(state, dtype=float)
        if state.shape[0] != self.dim:
            raise ModelError(
                f"state has {state.shape[0]} components, model {self.name!r} "
                f"has dim {self.dim}"
            )
        return state

    # -- operations ----------------------------------------------------------

    def rhs(self, state, params=None, I_stim=0.0):
        """Time derivative of the state; vectorized over trailing axes."""
        state = self._check_state(state)
        p = self.merge_params(params) if not isinstance(params, _Checked) else params.p
        out = self._rhs_fn(*state, *self._param_values(p), I_stim)
        return np.array(np.broadcast_arrays(*out))

    def currents(self, state, params=None):
        """Map current name -> uA/cm^2."""
        state = self._check_state(state)
        p = self.merge_params(params)
        vals = self._currents_fn(*state, *self._param_values(p))
        return {c.name: v for c, v in zip(self.current_specs, vals)}

    def rate_coeffs(self, gate, V):
        """(a, b) rate coefficients of one gate at voltage V, in 1/ms."""
        self.gate(gate)
        vals = self._gates_fn(V)
        i = 4 * self.gate_names.index(gate)
        return float(vals[i]), float(vals[i + 1])

    def gate_steady(self, gate, V):
        """(y_inf, tau) of one gate at voltage V."""
        self.gate(gate)
        vals = self._gates_fn(V)
        i = 4 * self.gate_names.index(gate)
        return float(vals[i + 2]), float(vals[i + 3])

    def gate_steady_all(self, V):
        """Array of y_inf for every gate (vectorized over V)."""
        vals = self._gates_fn(V)
        return np.array([vals[4 * i + 2] for i in range(len(self.gates))])

    def steady_state(self, V, params=None):
        """Full state with every gate at its steady value for voltage V."""
        y = self.gate_steady_all(V)
        return np.concatenate([[V], y])

    def jacobian(self, state, params=None, I_stim=0.0):
        """Analytic dim x dim Jacobian of the RHS at ``state``."""
        state = self._check_state(state)
        p = self.merge_params(params)
        vals = self._jac_fn(*state, *self._param_values(p), I_stim)
        J = np.array(np.broadcast_arrays(*vals))
        return J.reshape((self.dim, self.dim) + np.shape(state[0]))

    def drhs_dparam(self, state, params, symbol):
        """Analytic derivative of the RHS with respect to one parameter."""
        if symbol not in self.param_names:
            raise ModelError(f"unknown parameter {symbol!r}")
        fn = self._dv_dparam_fns.get(symbol)
        if fn is None:
            named = {
                f"d{i}": ex.diff(c, symbol)
                for i, c in enumerate(self._rhs_exprs().values())
            }
            fn = ex.compile_exprs(named, self._args, f"_dp_{symbol}")
            self._dv_dparam_fns[symbol] = fn
        state = self._check_state(state)
        p = self.merge_params(params)
        out = fn(*state, *self._param_values(p), 0.0)
        return np.array(np.broadcast_arrays(*out))


class _Checked:
    """Wrapper marking a parameter dict as already merged/validated."""

    __slots__ = ("p",)

    def __init__(self, p):
        self.p = p


def validate_params(p):
    for k, v in p.items():
        if k.startswith("G_") and v < 0:
            raise ModelError(f"conductance {k} must be nonnegative, got {v}")
        if k == "block_Kr" and not 0.0 <= v <= 1.0:
            raise ModelError(f"block_Kr must be in [0, 1], got {v}")


def clip_gates(model, state, eps=1e-6):
    """Assert-and-clip gate components to [-eps, 1+eps]."""
    state = np.array(state, dtype=float)
    g = state[1:]
    if np.any(g < -eps) or np.any(g > 1 + eps):
        raise ModelError("gate component outside [-1e-6, 1+1e-6]")
    np.clip(g, 0.0, 1.0, out=g)
    state[1:] = g
    return state
