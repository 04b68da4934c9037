import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adapfair.errors import InvalidInput
from adapfair.serialization import read_params, write_params


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.integers(0, 50), elements=st.floats(allow_nan=False)),
       st.dictionaries(st.text(max_size=5), st.integers(), max_size=3))
def test_round_trip(tmp_path_factory, params, header):
    path = tmp_path_factory.mktemp("p") / "x.bin"
    write_params(path, "flow", header, params)
    kind, back_header, back = read_params(path)
    assert kind == "flow" and back_header == header
    assert back.tobytes() == params.astype("<f8").tobytes()


def test_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.bin"
    path.write_bytes(b"not a parameter file")
    with pytest.raises(InvalidInput):
        read_params(path)


def test_rejects_truncated(tmp_path):
    path = tmp_path / "x.bin"
    write_params(path, "mlp", {}, np.arange(5.0))
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(InvalidInput):
        read_params(path)
