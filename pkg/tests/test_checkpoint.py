import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from entrannas import checkpoint as ckpt


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=0, max_dims=3, max_side=4)),
       st.dictionaries(st.text(min_size=1, max_size=5), st.integers(), max_size=3))
def test_round_trip_is_bit_exact(arr, meta):
    arrays, back = ckpt.decode(ckpt.encode({"a": arr, "b": np.arange(3.0)}, meta))
    assert arrays["a"].shape == arr.shape
    assert arrays["a"].tobytes() == np.ascontiguousarray(arr).tobytes()
    assert back == meta


def test_no_meta():
    arrays, meta = ckpt.decode(ckpt.encode({"x": np.ones((2, 2))}))
    assert meta is None and arrays["x"].sum() == 4


def test_bad_magic_and_truncation():
    raw = ckpt.encode({"x": np.ones(10)})
    with pytest.raises(ckpt.CheckpointError):
        ckpt.decode(b"XXXX" + raw[4:])
    with pytest.raises(ckpt.CheckpointError):
        ckpt.decode(raw[:-8])
    with pytest.raises(ckpt.CheckpointError):
        ckpt.decode(raw[:14])


def test_save_load_atomic(tmp_path):
    path = tmp_path / "sub" / "c.bin"
    ckpt.save(path, {"w": np.array([1.5])}, {"epoch": 3})
    ckpt.save(path, {"w": np.array([2.5])}, {"epoch": 4})
    arrays, meta = ckpt.load(path)
    assert arrays["w"][0] == 2.5 and meta == {"epoch": 4}
    assert [p.name for p in path.parent.iterdir()] == ["c.bin"]
