"""JSON model files.

Floats are written with Python's shortest round-trip repr, so every f64 payload
reloads bit-exactly.  Layout::

    {"format": "ladderpoly-model", "version": 1, "d_0": ..., "head": "...",
     "dropout_rate": ..., "layers": [{"d_out", "d_in", "w", "v", "b"}, ...],
     "bn": null | [null | {"gamma", "beta", "mu", "sigma", "eps"}, ...],
     "extra": {...}}

Weight arrays are flat row-major lists.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import BatchNormParams, Head, LadderLayer, LadderNetwork
from .errors import DataError

FORMAT = "ladderpoly-model"
VERSION = 1


def _flat(a):
    return None if a is None else [float(v) for v in np.asarray(a).ravel()]


def network_to_dict(net: LadderNetwork, extra: dict | None = None) -> dict:
    layers = [
        {"d_out": l.d_out, "d_in": l.d_in, "w": _flat(l.w), "v": _flat(l.v), "b": _flat(l.b)}
        for l in net.layers
    ]
    bn = None
    if net.bn is not None:
        bn = [
            None
            if p is None
            else {
                "gamma": _flat(p.gamma),
                "beta": _flat(p.beta),
                "mu": _flat(p.mu),
                "sigma": _flat(p.sigma),
                "eps": float(p.eps),
            }
            for p in net.bn
        ]
    return {
        "format": FORMAT,
        "version": VERSION,
        "d_0": net.d_0,
        "head": net.head.value,
        "dropout_rate": float(net.dropout_rate),
        "layers": layers,
        "bn": bn,
        "extra": extra or {},
    }


def network_from_dict(doc: dict) -> tuple[LadderNetwork, dict]:
    if doc.get("format") != FORMAT:
        raise DataError(f"not a {FORMAT} document")
    if doc.get("version") != VERSION:
        raise DataError(f"unsupported model version {doc.get('version')!r}")
    d_0 = int(doc["d_0"])
    try:
        layers = []
        for layer in doc["layers"]:
            d_out, d_in = int(layer["d_out"]), int(layer["d_in"])
            w = np.array(layer["w"], dtype=np.float64).reshape(d_out, d_in)
            v = np.array(layer["v"], dtype=np.float64).reshape(d_out, d_0)
            b = None if layer.get("b") is None else np.array(layer["b"], dtype=np.float64)
            layers.append(LadderLayer(w, v, b))
        bn = None
        if doc.get("bn") is not None:
            bn = tuple(
                None
                if p is None
                else BatchNormParams(p["gamma"], p["beta"], p["mu"], p["sigma"], float(p["eps"]))
                for p in doc["bn"]
            )
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"malformed model document: {exc}") from exc
    net = LadderNetwork(
        tuple(layers), head=Head(doc["head"]), bn=bn, dropout_rate=float(doc.get("dropout_rate", 0.0))
    )
    return net, dict(doc.get("extra") or {})


def dumps(net: LadderNetwork, extra: dict | None = None) -> str:
    return json.dumps(network_to_dict(net, extra), indent=1, sort_keys=True) + "\n"


def save_model(net: LadderNetwork, path, extra: dict | None = None) -> None:
    Path(path).write_text(dumps(net, extra))


def read_model(path) -> tuple[LadderNetwork, dict]:
    """Load a model file, returning the network and its ``extra`` metadata."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read model file {path}: {exc}") from exc
    return network_from_dict(doc)


def load_model(path) -> LadderNetwork:
    return read_model(path)[0]
