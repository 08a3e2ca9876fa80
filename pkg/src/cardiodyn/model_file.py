"""Reading and writing model definitions as JSON documents.

The document lists the state layout, parameters (with units), gate kinetics
as expression trees in the small arithmetic grammar of
:mod:`cardiodyn.expressions`, declared removable-singularity points, and
current formulas.  Serialization is deterministic (sorted keys, fixed
separators), so a definition round-trips bit-identically:
``dumps(loads(dumps(m))) == dumps(m)``, and for the bundled Noble file the
JSON equals the hard-coded builder's output byte for byte.
"""

from __future__ import annotations

import importlib.resources
import json

from .model_core import CurrentSpec, GateSpec, ModelDefinition, ModelError

FORMAT = "cardiodyn-model/1"

#: Units of the project-wide quantity kinds, recorded in the files.
UNITS = {
    "capacitance": "uF/cm^2",
    "voltage": "mV",
    "time": "ms",
    "current": "uA/cm^2",
    "conductance": "mS/cm^2",
}

BUNDLED = ("noble", "bernus")


def _gate_doc(g):
    d = {"name": g.name}
    if g.rate_a is not None:
        d["rate_a"] = g.rate_a
        d["rate_b"] = g.rate_b
    else:
        d["y_inf"] = g.y_inf
        d["tau"] = g.tau
    if g.singular_points:
        d["singular_points"] = list(g.singular_points)
    return d


def _current_doc(c):
    d = {"name": c.name, "expr": c.expr}
    if c.conductance:
        d["conductance"] = c.conductance
    if c.reversal:
        d["reversal"] = c.reversal
    return d


def dumps(model):
    """Serialize a model definition to a deterministic JSON string."""
    doc = {
        "format": FORMAT,
        "name": model.name,
        "units": UNITS,
        "capacitance": model.capacitance,
        "state_names": list(model.state_names),
        "gates": [_gate_doc(g) for g in model.gates],
        "currents": [_current_doc(c) for c in model.current_specs],
        "params": dict(model.params),
        "notes": model.notes,
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def loads(text):
    """Parse a model definition from a JSON string."""
    doc = json.loads(text)
    if doc.get("format") != FORMAT:
        raise ModelError(f"unsupported model-file format {doc.get('format')!r}")
    gates = tuple(
        GateSpec(
            g["name"],
            rate_a=g.get("rate_a"),
            rate_b=g.get("rate_b"),
            y_inf=g.get("y_inf"),
            tau=g.get("tau"),
            singular_points=tuple(g.get("singular_points", ())),
        )
        for g in doc["gates"]
    )
    current_specs = tuple(
        CurrentSpec(
            c["name"], c["expr"],
            conductance=c.get("conductance", ""),
            reversal=c.get("reversal", ""),
        )
        for c in doc["currents"]
    )
    model = ModelDefinition(
        name=doc["name"],
        capacitance=doc["capacitance"],
        gates=gates,
        current_specs=current_specs,
        params=doc["params"],
        notes=doc.get("notes", ""),
    )
    declared = doc.get("state_names")
    if declared is not None and tuple(declared) != model.state_names:
        raise ModelError(
            f"state_names {declared} inconsistent with gates "
            f"{model.state_names}"
        )
    return model


def save_model(model, path):
    """Write a model definition to ``path`` as JSON."""
    with open(path, "w") as f:
        f.write(dumps(model))


def load_model(source):
    """Load a model definition.

    ``source`` may be a bundled model name (``"noble"`` or ``"bernus"``) or
    a filesystem path to a model JSON file.
    """
    if source in BUNDLED:
        text = (
            importlib.resources.files("cardiodyn.data")
            .joinpath(f"{source}.json")
            .read_text()
        )
        return loads(text)
    try:
        with open(source) as f:
            return loads(f.read())
    except FileNotFoundError:
        raise ModelError(f"no bundled model or file named {source!r}") from None
