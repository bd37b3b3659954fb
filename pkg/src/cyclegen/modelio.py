"""JSON model files and atomic file output."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .nn import Architecture, ModelWeights, NormStats

FORMAT_VERSION = 1
_DIRECTIONS = ("charge", "discharge")


def atomic_write(path, data: str | bytes) -> Path:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def dumps_json(obj) -> str:
    # json emits repr() of floats, which round-trips every finite double
    return json.dumps(obj, indent=1, allow_nan=False) + "\n"


def model_to_dict(model: ModelWeights) -> dict:
    if model.input_stats is None or model.output_stats is None:
        raise ValueError("model has no normalization stats")
    return {
        "format_version": FORMAT_VERSION,
        "parameter": model.parameter,
        "direction": model.direction,
        "widths": list(model.arch.widths),
        "activation": model.arch.activation,
        "seed": model.seed,
        "trained_epochs": model.trained_epochs,
        "norm_stats": {"input": model.input_stats.to_dict(), "output": model.output_stats.to_dict()},
        "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in zip(model.weights, model.biases)],
    }


def model_from_dict(d: dict) -> ModelWeights:
    if d.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format_version {d.get('format_version')!r}")
    if d.get("direction") not in _DIRECTIONS:
        raise ValueError(f"bad direction {d.get('direction')!r}")
    arch = Architecture(tuple(d["widths"]), d["activation"])
    layers = d["layers"]
    return ModelWeights(
        arch,
        [np.array(L["W"], dtype=float).reshape(arch.widths[i], arch.widths[i + 1]) for i, L in enumerate(layers)],
        [np.array(L["b"], dtype=float) for L in layers],
        NormStats.from_dict(d["norm_stats"]["input"]),
        NormStats.from_dict(d["norm_stats"]["output"]),
        int(d["seed"]),
        int(d["trained_epochs"]),
        d["parameter"],
        d["direction"],
    )


def save_model(model: ModelWeights, path) -> Path:
    return atomic_write(path, dumps_json(model_to_dict(model)))


def load_model(path) -> ModelWeights:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
