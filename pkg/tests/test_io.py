import json

import numpy as np
import pytest

from conftest import make_env
from driftwalk.exceptions import OutOfRange, ParseError, ValidationError
from driftwalk.generators import GeneratorSpec, generate
from driftwalk.io import load_environment, load_generator_block, save_environment
from driftwalk.lattice import DriftField, LatticeDims, StreamTensorField


def test_roundtrip_bit_identical(tmp_path):
    v = make_env("plaquette_iid", 2, 8, 3, continuous=True)
    path = tmp_path / "env.json"
    save_environment(v, path)
    w = load_environment(path)
    assert np.array_equal(v.v, w.v)
    save_environment(w, tmp_path / "again.json")
    assert path.read_bytes() == (tmp_path / "again.json").read_bytes()


def test_stream_roundtrip(tmp_path):
    spec = GeneratorSpec("plaquette_iid", LatticeDims(3, 4), seed=2)
    tensor, _ = generate(spec)
    save_environment(tensor, tmp_path / "h.json", generator=spec.to_dict())
    back = load_environment(tmp_path / "h.json")
    assert isinstance(back, StreamTensorField) and back == tensor
    assert load_generator_block(tmp_path / "h.json")["seed"] == 2


def test_malformed_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ParseError):
        load_environment(p)


def test_wrong_length(tmp_path):
    p = tmp_path / "short.json"
    p.write_text(json.dumps({"dims": {"d": 2, "L": 4}, "kind": "drift", "data": ["0.0"] * 5}))
    with pytest.raises(ParseError):
        load_environment(p)


def test_invalid_drift_rejected(tmp_path):
    v = np.zeros((2, 4, 4))
    v[0, 0, 0] = 0.5
    p = tmp_path / "div.json"
    save_environment(DriftField(LatticeDims(2, 4), v), p)
    with pytest.raises(ValidationError) as exc:
        load_environment(p)
    assert not exc.value.report.passed


def test_oversized_tensor_rejected(tmp_path):
    h = np.zeros((1, 4, 4))
    h[0, 0, 0], h[0, 0, 3] = 0.75, -0.75
    p = tmp_path / "big.json"
    save_environment(StreamTensorField(LatticeDims(2, 4), h), p)
    with pytest.raises(OutOfRange):
        load_environment(p)
