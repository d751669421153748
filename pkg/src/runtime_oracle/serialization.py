"""Deterministic JSON/CSV writers.

Floats are written with their shortest round-trip representation, so every
saved file reloads to the exact same bits and rewrites to the same bytes.
"""

import json
import math

import numpy as np


def format_float(x):
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return repr(x)


def _encode(obj, out):
    if obj is None:
        out.append("null")
    elif isinstance(obj, (bool, np.bool_)):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(format_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, np.ndarray):
        _encode(obj.tolist(), out)
    elif isinstance(obj, dict):
        out.append("{")
        for n, (k, v) in enumerate(obj.items()):
            if n:
                out.append(", ")
            out.append(json.dumps(str(k)))
            out.append(": ")
            _encode(v, out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for n, v in enumerate(obj):
            if n:
                out.append(", ")
            _encode(v, out)
        out.append("]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj):
    """Serialize ``obj`` to a JSON string with round-trip floats.

    Key order is preserved as given, so callers control canonical ordering.
    """
    out = []
    _encode(obj, out)
    return "".join(out)


def dump(obj, path):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps(obj))
        f.write("\n")


def load(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def array_to_json(a):
    """Named-shape representation of a float array."""
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def array_from_json(d):
    return np.asarray(d["data"], dtype=np.float64).reshape(d["shape"])
