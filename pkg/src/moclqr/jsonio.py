"""JSON writer that prints every float with 17 significant digits."""
from __future__ import annotations

import json
import math

import numpy as np


def _num(v: float) -> str:
    if math.isnan(v) or math.isinf(v):
        raise ValueError(f"cannot serialise non-finite number {v}")
    s = "%.17g" % v
    if "e" not in s and "." not in s:
        s += ".0"
    return s


def _encode(obj, indent, level, out):
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if obj is None or isinstance(obj, (bool, np.bool_)):
        out.append(json.dumps(None if obj is None else bool(obj)))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_num(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        pad = "\n" + " " * (indent * (level + 1)) if indent else ""
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if i:
                out.append(",")
            out.append(pad)
            out.append(json.dumps(str(k)))
            out.append(": ")
            _encode(v, indent, level + 1, out)
        out.append(("\n" + " " * (indent * level)) if indent else "")
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        # numeric vectors and matrices stay on one line
        flat = all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj)
        if flat or not indent:
            out.append("[")
            for i, v in enumerate(obj):
                if i:
                    out.append(", ")
                _encode(v, indent, level + 1, out)
            out.append("]")
            return
        pad = "\n" + " " * (indent * (level + 1))
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(",")
            out.append(pad)
            _encode(v, indent, level + 1, out)
        out.append("\n" + " " * (indent * level) + "]")
    else:
        raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj, indent: int = 0) -> str:
    out: list[str] = []
    _encode(obj, indent, 0, out)
    return "".join(out)
