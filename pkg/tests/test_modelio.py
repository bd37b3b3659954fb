import json
import os

import numpy as np
import pytest

from cyclegen.modelio import atomic_write, load_model, model_from_dict, model_to_dict, save_model
from cyclegen.nn import Architecture, NormStats, init_weights


def _model():
    m = init_weights(Architecture((5, 7, 3), "tanh"), 12)
    rng = np.random.default_rng(0)
    for b in m.biases:
        b[:] = rng.normal(size=b.shape) * 1e-7
    m.weights[0][0, 0] = 1 / 3
    m.weights[0][0, 1] = 5e-324
    m.input_stats = m.output_stats = NormStats(2.7, 4.2)
    m.parameter, m.direction, m.trained_epochs = "voltage", "charge", 400
    return m


def test_roundtrip_exact(tmp_path):
    m = _model()
    path = save_model(m, tmp_path / "m.json")
    back = load_model(path)
    assert back.arch == m.arch and back.seed == 12 and back.trained_epochs == 400
    assert (back.parameter, back.direction) == ("voltage", "charge")
    assert back.input_stats == m.input_stats
    for a, b in zip(m.weights + m.biases, back.weights + back.biases):
        assert a.tobytes() == b.tobytes()


def test_file_schema(tmp_path):
    save_model(_model(), tmp_path / "m.json")
    d = json.loads((tmp_path / "m.json").read_text())
    assert set(d) == {"format_version", "parameter", "direction", "widths", "activation", "seed",
                      "trained_epochs", "norm_stats", "layers"}
    assert d["widths"] == [5, 7, 3]
    assert len(d["layers"]) == 2 and len(d["layers"][0]["W"]) == 5 and len(d["layers"][0]["W"][0]) == 7
    assert d["norm_stats"]["input"] == {"min": 2.7, "max": 4.2}


def test_bad_files():
    d = model_to_dict(_model())
    with pytest.raises(ValueError):
        model_from_dict({**d, "format_version": 99})
    with pytest.raises(ValueError):
        model_from_dict({**d, "direction": "sideways"})


def test_atomic_write_leaves_no_temp(tmp_path):
    atomic_write(tmp_path / "sub" / "a.txt", "hello\n")
    atomic_write(tmp_path / "sub" / "a.txt", "again\n")
    assert (tmp_path / "sub" / "a.txt").read_text() == "again\n"
    assert os.listdir(tmp_path / "sub") == ["a.txt"]
