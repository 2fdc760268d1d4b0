from __future__ import annotations

import json
import pathlib
import struct
import tempfile
import unittest
from typing import TYPE_CHECKING, Any

import numpy as np

from utils.errors import WireFormatError
from utils.wire_format import (
    CHECKPOINT_MAGIC,
    TENSOR_MAGIC,
    VIDEO_MAGIC,
    decode_tensor,
    encode_tensor,
    pack_container,
    read_tensor,
    unpack_container,
)

if TYPE_CHECKING:
    from collections.abc import Callable


def _rewrite_header(buf: bytes, edit: Callable[[dict[str, Any]], Any]) -> bytes:
    (length,) = struct.unpack_from("<I", buf, 8)
    header = json.loads(buf[12 : 12 + length])
    edit(header)
    payload = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return buf[:8] + struct.pack("<I", len(payload)) + payload + buf[12 + length :]


class TensorFormatTests(unittest.TestCase):
    def test_layout(self) -> None:
        array = np.arange(6, dtype=np.float32).reshape(2, 3)
        buf = encode_tensor(array)
        self.assertEqual(buf[:8], TENSOR_MAGIC)
        (length,) = struct.unpack_from("<I", buf, 8)
        self.assertEqual(json.loads(buf[12 : 12 + length]), {"dtype": "f32le", "shape": [2, 3]})
        self.assertEqual(buf[12 + length :], array.astype("<f4").tobytes())

    def test_decode_returns_end_offset(self) -> None:
        first = encode_tensor(np.ones(3, dtype=np.float64))
        second = encode_tensor(np.array([True, False]))
        array, end = decode_tensor(first + second, 0)
        self.assertEqual(end, len(first))
        flags, _ = decode_tensor(first + second, end)
        self.assertEqual(flags.dtype, np.uint8)
        np.testing.assert_array_equal(flags, [1, 0])
        np.testing.assert_array_equal(array, np.ones(3))

    def test_truncated_data(self) -> None:
        buf = encode_tensor(np.zeros((4, 4), dtype=np.float32))
        with self.assertRaises(WireFormatError) as ctx:
            decode_tensor(buf[:-3])
        (length,) = struct.unpack_from("<I", buf, 8)
        self.assertEqual(ctx.exception.offset, 12 + length)

    def test_bad_magic_and_header(self) -> None:
        buf = encode_tensor(np.zeros(2, dtype=np.float32))
        with self.assertRaises(WireFormatError) as ctx:
            decode_tensor(b"XXXXXXXX" + buf[8:])
        self.assertEqual(ctx.exception.offset, 0)
        garbage = TENSOR_MAGIC + struct.pack("<I", 3) + b"{no"
        with self.assertRaises(WireFormatError):
            decode_tensor(garbage)
        with self.assertRaises(WireFormatError):
            decode_tensor(_rewrite_header(buf, lambda h: h.update(dtype="f16le")))
        with self.assertRaises(WireFormatError):
            decode_tensor(_rewrite_header(buf, lambda h: h.update(shape=[-1])))

    def test_header_length_beyond_file(self) -> None:
        with self.assertRaises(WireFormatError) as ctx:
            decode_tensor(TENSOR_MAGIC + struct.pack("<I", 1000) + b"{}")
        self.assertEqual(ctx.exception.offset, 12)

    def test_read_tensor_rejects_trailing_bytes(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            path = pathlib.Path(tmp) / "x.wtt"
            path.write_bytes(encode_tensor(np.zeros(2, dtype=np.float32)) + b"\x00")
            with self.assertRaises(WireFormatError):
                read_tensor(path)


class ContainerTests(unittest.TestCase):
    def setUp(self) -> None:
        self.tensors = [("a", np.ones((2, 2), dtype=np.float32)), ("b", np.arange(3, dtype=np.int64))]
        self.buf = pack_container(VIDEO_MAGIC, {"T": 1}, self.tensors)

    def test_unpack(self) -> None:
        meta, tensors = unpack_container(self.buf, VIDEO_MAGIC)
        self.assertEqual(meta, {"T": 1})
        self.assertEqual(sorted(tensors), ["a", "b"])
        np.testing.assert_array_equal(tensors["b"], [0, 1, 2])

    def test_wrong_container_magic(self) -> None:
        with self.assertRaises(WireFormatError) as ctx:
            unpack_container(self.buf, CHECKPOINT_MAGIC)
        self.assertEqual(ctx.exception.offset, 0)

    def test_corrupt_offset(self) -> None:
        def shift(header: dict) -> None:
            header["tensors"][1]["offset"] += 4

        with self.assertRaises(WireFormatError):
            unpack_container(_rewrite_header(self.buf, shift), VIDEO_MAGIC)

    def test_corrupt_length_and_shape(self) -> None:
        def bad_length(header: dict) -> None:
            header["tensors"][0]["length"] += 1

        def bad_shape(header: dict) -> None:
            header["tensors"][0]["shape"] = [4]

        for edit in (bad_length, bad_shape):
            with self.subTest(edit=edit.__name__), self.assertRaises(WireFormatError):
                unpack_container(_rewrite_header(self.buf, edit), VIDEO_MAGIC)

    def test_trailing_and_truncated(self) -> None:
        with self.assertRaises(WireFormatError):
            unpack_container(self.buf + b"\x00\x00", VIDEO_MAGIC)
        with self.assertRaises(WireFormatError):
            unpack_container(self.buf[:-1], VIDEO_MAGIC)

    def test_missing_manifest(self) -> None:
        with self.assertRaises(WireFormatError):
            unpack_container(_rewrite_header(self.buf, lambda h: h.pop("tensors")), VIDEO_MAGIC)


if __name__ == "__main__":
    unittest.main()
