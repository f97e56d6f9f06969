"""JSON environment files.

Layout::

    {"dims": {"d": 2, "L": 16}, "kind": "drift" | "stream",
     "data": ["0.25", "-0.25", ...], "generator": {...}}

``data`` is the flattened row-major stored array (positive drift components,
or ``i < j`` tensor components, in axis order).  Values are shortest
round-trip decimal strings so that a save/load cycle is bit-identical.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .exceptions import ParseError, ValidationError
from .lattice import DriftField, LatticeDims, StreamTensorField, curl, validate_drift


def encode_floats(values):
    return [repr(float(x)) for x in np.asarray(values, dtype=np.float64).ravel()]


def environment_to_dict(obj, generator=None):
    if isinstance(obj, DriftField):
        kind, arr = "drift", obj.v
    elif isinstance(obj, StreamTensorField):
        kind, arr = "stream", obj.h
    else:
        raise TypeError(f"cannot serialise {type(obj).__name__}")
    doc = {"dims": {"d": obj.dims.d, "L": obj.dims.L}, "kind": kind,
           "data": encode_floats(arr)}
    if generator is not None:
        doc["generator"] = generator
    return doc


def save_environment(obj, path, generator=None):
    doc = environment_to_dict(obj, generator)
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n")


def environment_from_dict(doc):
    try:
        dims = LatticeDims(int(doc["dims"]["d"]), int(doc["dims"]["L"]))
        kind = doc["kind"]
        data = np.array([float(s) for s in doc["data"]], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed environment document: {exc}") from exc
    if kind == "drift":
        shape = (dims.d,) + dims.shape
    elif kind == "stream":
        shape = (len(dims.pairs),) + dims.shape
    else:
        raise ParseError(f"unknown environment kind {kind!r}")
    if data.size != int(np.prod(shape)):
        raise ParseError(f"expected {int(np.prod(shape))} values, found {data.size}")
    data = data.reshape(shape)
    if kind == "stream":
        tensor = StreamTensorField(dims, data)
        curl(tensor)  # raises OutOfRange (a ValidationError) on oversized tensors
        return tensor
    field = DriftField(dims, data)
    report = validate_drift(field)
    if not report.passed:
        bad = report.failures()[0]
        raise ValidationError(f"{bad.name} check failed at site {bad.site} "
                              f"(residual {bad.residual:g})", report)
    return field


def load_environment(path):
    """Parse and validate an environment file (drift or stream tensor)."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top-level JSON value must be an object")
    return environment_from_dict(doc)


def load_generator_block(path):
    doc = json.loads(Path(path).read_text())
    return doc.get("generator")
