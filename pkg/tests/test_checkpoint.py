"""Binary container round trips and corruption handling."""
import struct

import numpy as np
import pytest

from dualstream.checkpoint import decode, encode, entry_text, load, save, text_entry
from dualstream.errors import FormatError


def sample_entries():
    rng = np.random.default_rng(0)
    return {
        "f32": rng.normal(size=(3, 4)).astype(np.float32),
        "f64": rng.normal(size=(2, 2, 2)),
        "i64": np.arange(5, dtype=np.int64),
        "i32": np.array([[-1, 2]], dtype=np.int32),
        "u8": np.array([0, 255], dtype=np.uint8),
        "scalar": np.array(3.25),
        "empty": np.zeros((0, 3), np.float32),
        "text": text_entry("a red square moving up"),
    }


def test_round_trip_preserves_values_dtypes_and_shapes(tmp_path):
    entries = sample_entries()
    save(entries, tmp_path / "x.dsdn")
    back = load(tmp_path / "x.dsdn")
    assert sorted(back) == sorted(entries)
    for name, arr in entries.items():
        assert back[name].dtype == arr.dtype and back[name].shape == arr.shape
        assert np.array_equal(back[name], arr)
    assert entry_text(back["text"]) == "a red square moving up"


def test_save_load_save_is_byte_identical(tmp_path):
    save(sample_entries(), tmp_path / "a.dsdn")
    save(load(tmp_path / "a.dsdn"), tmp_path / "b.dsdn")
    assert (tmp_path / "a.dsdn").read_bytes() == (tmp_path / "b.dsdn").read_bytes()


def test_encoding_is_independent_of_insertion_order():
    entries = sample_entries()
    assert encode(entries) == encode(dict(reversed(list(entries.items()))))


def test_big_endian_and_bool_are_normalised():
    back = decode(encode({"be": np.arange(3, dtype=">f4"), "flag": np.array([True, False])}))
    assert back["be"].dtype == np.dtype("<f4") and back["be"].tolist() == [0, 1, 2]
    assert back["flag"].dtype == np.uint8 and back["flag"].tolist() == [1, 0]


def test_unsupported_dtype():
    with pytest.raises(FormatError, match="'c'"):
        encode({"c": np.zeros(2, np.complex64)})


def test_header_layout():
    blob = encode({"a": np.zeros((2,), np.float32)})
    assert blob[:4] == b"DSDN"
    assert struct.unpack("<II", blob[4:12]) == (1, 1)


def test_bad_magic():
    with pytest.raises(FormatError, match="magic"):
        decode(b"XXXX" + encode({})[4:])


def test_unknown_version():
    blob = bytearray(encode({}))
    blob[4:8] = struct.pack("<I", 9)
    with pytest.raises(FormatError, match="version 9"):
        decode(bytes(blob))


def test_truncation_names_the_entry():
    blob = encode({"weights": np.ones(10, np.float32)})
    with pytest.raises(FormatError, match="payload of entry 'weights'"):
        decode(blob[:-3])


def test_trailing_bytes():
    with pytest.raises(FormatError, match="trailing"):
        decode(encode({}) + b"\0")


def test_unknown_dtype_code():
    blob = bytearray(encode({"a": np.zeros(1, np.float32)}))
    blob[12 + 4 + 1] = 99
    with pytest.raises(FormatError, match="dtype code 99"):
        decode(bytes(blob))


def test_missing_file(tmp_path):
    with pytest.raises(FormatError, match="cannot read"):
        load(tmp_path / "none.dsdn")
