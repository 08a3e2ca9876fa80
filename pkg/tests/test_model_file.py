"""Model-definition JSON files: round-tripping and bundled models."""

import numpy as np
import pytest

from cardiodyn import (
    ModelError,
    bernus_model,
    dumps,
    load_model,
    loads,
    noble_model,
    save_model,
)


def test_noble_round_trip_bit_identical():
    m = noble_model()
    text = dumps(m)
    assert dumps(loads(text)) == text


def test_bernus_round_trip_bit_identical():
    m = bernus_model()
    text = dumps(m)
    assert dumps(loads(text)) == text


def test_bundled_noble_matches_hard_coded():
    assert dumps(load_model("noble")) == dumps(noble_model())


def test_bundled_bernus_matches_builder():
    assert dumps(load_model("bernus")) == dumps(bernus_model())


def test_loaded_model_evaluates_identically():
    m1 = noble_model()
    m2 = load_model("noble")
    x = np.array([-79.04, 0.81, 0.045, 0.52])
    assert np.array_equal(m1.rhs(x), m2.rhs(x))
    assert np.array_equal(m1.jacobian(x), m2.jacobian(x))


def test_save_and_load_file(tmp_path):
    path = tmp_path / "noble.json"
    save_model(noble_model(), path)
    m = load_model(str(path))
    assert m.name == "noble62"
    assert m.dim == 4


def test_missing_model_raises():
    with pytest.raises(ModelError):
        load_model("does-not-exist")


def test_bad_format_rejected():
    with pytest.raises(ModelError):
        loads('{"format": "something-else/9"}')


def test_inconsistent_state_names_rejected():
    text = dumps(noble_model())
    broken = text.replace('"h",', '"hh",', 1)  # state_names entry only
    with pytest.raises(ModelError):
        loads(broken)
