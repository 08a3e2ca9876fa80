"""The Noble (1962) Purkinje-fibre model, hard-coded.

State (V, h, m, n); C_m = 12 uF/cm^2.  Membrane currents:

    I_Na = (G_Na m^3 h + 0.14)(V - E_Na)
    I_K  = (G_K1 n^4 + G_K2 e^{-(V+90)/50} + (G_K2/80) e^{(V+90)/60})(V - E_K)
    I_L  = G_L (V - E_L)

The 0.14 leak term inside I_Na is part of the original formulation and is
kept as printed.  Rate functions use the singularity-safe ``linexp``/
``expm1r`` primitives; removable singularities sit at V = -48 (a_m),
V = -8 (b_m) and V = -50 (a_n).
"""

from __future__ import annotations

from .model_core import CurrentSpec, GateSpec, ModelDefinition

#: Default initial condition (V0, h0, m0, n0).
NOBLE_IC = (-79.04, 0.81, 0.045, 0.52)

#: Initial condition inside the chaotic regime at G_L = 0.1845.
NOBLE_CHAOTIC_IC = (-40.8454, 0.0268, 0.3233, 0.5852)

NOBLE_PARAMS = {
    "G_Na": 400.0,
    "G_K1": 1.2,
    "G_K2": 1.2,
    "G_L": 0.075,
    "E_Na": 40.0,
    "E_K": -100.0,
    "E_L": -60.0,
}


def _vplus(c):
    return ["+", "V", float(c)]


def noble_model():
    """Build the Noble model definition."""
    gates = (
        GateSpec(
            "h",
            rate_a=["*", 0.17, ["exp", ["/", ["neg", _vplus(90)], 20.0]]],
            rate_b=["/", 1.0, ["+", 1.0, ["exp", ["/", ["neg", _vplus(42)], 10.0]]]],
        ),
        GateSpec(
            "m",
            rate_a=["*", 0.1, ["linexp", _vplus(48), 15.0]],
            rate_b=["*", 0.12, ["expm1r", _vplus(8), 5.0]],
            singular_points=(-48.0, -8.0),
        ),
        GateSpec(
            "n",
            rate_a=["*", 0.0001, ["linexp", _vplus(50), 10.0]],
            rate_b=["*", 0.002, ["exp", ["/", ["neg", _vplus(90)], 80.0]]],
            singular_points=(-50.0,),
        ),
    )
    current_specs = (
        CurrentSpec(
            "I_Na",
            ["*",
             ["+", ["*", "G_Na", ["*", ["pow", "m", 3], "h"]], 0.14],
             ["-", "V", "E_Na"]],
            conductance="G_Na",
            reversal="E_Na",
        ),
        CurrentSpec(
            "I_K",
            ["*",
             ["+",
              ["+",
               ["*", "G_K1", ["pow", "n", 4]],
               ["*", "G_K2", ["exp", ["/", ["neg", _vplus(90)], 50.0]]]],
              ["*", ["/", "G_K2", 80.0], ["exp", ["/", _vplus(90), 60.0]]]],
             ["-", "V", "E_K"]],
            conductance="G_K1",
            reversal="E_K",
        ),
        CurrentSpec(
            "I_L",
            ["*", "G_L", ["-", "V", "E_L"]],
            conductance="G_L",
            reversal="E_L",
        ),
    )
    return ModelDefinition(
        name="noble62",
        capacitance=12.0,
        gates=gates,
        current_specs=current_specs,
        params=dict(NOBLE_PARAMS),
        notes="Noble 1962 Purkinje-fibre model; self-oscillatory at defaults.",
    )
