"""二進位檔案格式模組

三種格式共用同一種框架：8 位元組 magic、uint32 LE 長度前綴的 UTF-8 JSON 標頭、
接著是原始資料。所有多位元組整數皆為 little-endian。

- WTT1 (`WTTENSR1`): 單一張量，標頭 {"shape": [...], "dtype": "f32le"}
- WTV1 (`WTVIDEO1`): 影片片段，標頭 {"T","H","W","C","N", "tensors": [...]}，後接 WTT1 區塊
- WTC1 (`WTCHKPT1`): 檢查點，標頭為排序過鍵值的清單（名稱、形狀、位移、設定雜湊），後接 WTT1 區塊

解析失敗一律拋出 WireFormatError 並附上位元組位置，不會返回部分結果。
"""

from __future__ import annotations

import json
import pathlib
import struct
from typing import TYPE_CHECKING, Any

import numpy as np
from loguru import logger

from utils.errors import WireFormatError
from utils.misc import atomic_write_bytes

if TYPE_CHECKING:
    import os
    from collections.abc import Mapping, Sequence

TENSOR_MAGIC = b"WTTENSR1"
VIDEO_MAGIC = b"WTVIDEO1"
CHECKPOINT_MAGIC = b"WTCHKPT1"

_LENGTH = struct.Struct("<I")

DTYPES: dict[str, np.dtype[Any]] = {
    "f32le": np.dtype("<f4"),
    "f64le": np.dtype("<f8"),
    "u8": np.dtype("u1"),
    "i64le": np.dtype("<i8"),
}


def _dtype_tag(array: np.ndarray) -> str:
    if array.dtype == np.bool_:
        return "u8"
    for tag, dtype in DTYPES.items():
        if array.dtype == dtype or array.dtype == dtype.newbyteorder("="):
            return tag
    msg = f"不支援的 dtype: {array.dtype}"
    raise WireFormatError(msg, 0)


def _canonical_json(header: Mapping[str, Any]) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _frame(magic: bytes, header: Mapping[str, Any]) -> bytes:
    payload = _canonical_json(header)
    return magic + _LENGTH.pack(len(payload)) + payload


def _read_frame(buf: bytes, offset: int, magic: bytes) -> tuple[dict[str, Any], int]:
    end = offset + len(magic)
    if len(buf) < end:
        msg = f"檔案過短，無法讀取 magic {magic!r}"
        raise WireFormatError(msg, offset)
    if buf[offset:end] != magic:
        msg = f"magic 不符: 預期 {magic!r}，收到 {bytes(buf[offset:end])!r}"
        raise WireFormatError(msg, offset)
    if len(buf) < end + _LENGTH.size:
        msg = "檔案在標頭長度處被截斷"
        raise WireFormatError(msg, end)
    (length,) = _LENGTH.unpack_from(buf, end)
    start = end + _LENGTH.size
    if len(buf) < start + length:
        msg = f"標頭宣告 {length} 位元組，但檔案只剩 {len(buf) - start} 位元組"
        raise WireFormatError(msg, start)
    try:
        header = json.loads(buf[start : start + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        msg = f"標頭不是合法的 UTF-8 JSON: {e}"
        raise WireFormatError(msg, start) from e
    if not isinstance(header, dict):
        msg = "標頭必須是 JSON 物件"
        raise WireFormatError(msg, start)
    return header, start + length


def encode_tensor(array: np.ndarray) -> bytes:
    """把陣列編碼成一個 WTT1 區塊。"""
    array = np.asarray(array)
    tag = _dtype_tag(array)
    data = np.ascontiguousarray(array, dtype=DTYPES[tag]).tobytes(order="C")
    return _frame(TENSOR_MAGIC, {"shape": list(array.shape), "dtype": tag}) + data


def decode_tensor(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """從 offset 解碼一個 WTT1 區塊。

    Returns:
        (陣列, 區塊結束位置)
    """
    header, start = _read_frame(buf, offset, TENSOR_MAGIC)
    shape = header.get("shape")
    tag = header.get("dtype")
    if not isinstance(shape, list) or not all(isinstance(n, int) and n >= 0 for n in shape):
        msg = f"shape 欄位不合法: {shape!r}"
        raise WireFormatError(msg, offset)
    if tag not in DTYPES:
        msg = f"未知的 dtype: {tag!r}"
        raise WireFormatError(msg, offset)
    dtype = DTYPES[tag]
    count = int(np.prod(shape, dtype=np.int64))
    end = start + count * dtype.itemsize
    if len(buf) < end:
        msg = f"資料被截斷: 需要 {count * dtype.itemsize} 位元組，只剩 {len(buf) - start}"
        raise WireFormatError(msg, start)
    array = np.frombuffer(buf, dtype=dtype, count=count, offset=start).reshape(shape)
    return array.astype(dtype.newbyteorder("="), copy=True), end


def pack_container(
    magic: bytes, meta: Mapping[str, Any], tensors: Sequence[tuple[str, np.ndarray]]
) -> bytes:
    """把 meta 與具名張量打包成容器；標頭記錄每個張量相對於資料區的位移。"""
    blobs = [encode_tensor(array) for _, array in tensors]
    manifest = []
    cursor = 0
    for (name, array), blob in zip(tensors, blobs, strict=True):
        manifest.append({
            "name": name,
            "shape": list(np.shape(array)),
            "offset": cursor,
            "length": len(blob),
        })
        cursor += len(blob)
    header = dict(meta)
    header["tensors"] = manifest
    return _frame(magic, header) + b"".join(blobs)


def unpack_container(buf: bytes, magic: bytes) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    """解析容器，檢查每個區塊的位移、長度與形狀是否與標頭一致。"""
    header, data_start = _read_frame(buf, 0, magic)
    manifest = header.pop("tensors", None)
    if not isinstance(manifest, list):
        msg = "標頭缺少 tensors 清單"
        raise WireFormatError(msg, 0)

    tensors: dict[str, np.ndarray] = {}
    cursor = data_start
    for entry in manifest:
        try:
            name, shape = entry["name"], entry["shape"]
            rel_offset, length = int(entry["offset"]), int(entry["length"])
        except (KeyError, TypeError, ValueError) as e:
            msg = f"tensors 清單項目不合法: {entry!r}"
            raise WireFormatError(msg, 0) from e
        if data_start + rel_offset != cursor:
            msg = f"張量 {name} 的位移 {rel_offset} 與實際位置不符"
            raise WireFormatError(msg, cursor)
        array, end = decode_tensor(buf, cursor)
        if end - cursor != length:
            msg = f"張量 {name} 長度不符: 標頭 {length}，實際 {end - cursor}"
            raise WireFormatError(msg, cursor)
        if list(array.shape) != list(shape):
            msg = f"張量 {name} 形狀不符: 標頭 {shape}，實際 {list(array.shape)}"
            raise WireFormatError(msg, cursor)
        tensors[name] = array
        cursor = end
    if cursor != len(buf):
        msg = f"檔案尾端有 {len(buf) - cursor} 位元組多餘資料"
        raise WireFormatError(msg, cursor)
    return header, tensors


def write_tensor(path: str | os.PathLike[str], array: np.ndarray) -> pathlib.Path:
    return atomic_write_bytes(path, encode_tensor(array))


def read_tensor(path: str | os.PathLike[str]) -> np.ndarray:
    """讀取單一 WTT1 檔案。"""
    buf = pathlib.Path(path).read_bytes()
    array, end = decode_tensor(buf, 0)
    if end != len(buf):
        msg = f"檔案尾端有 {len(buf) - end} 位元組多餘資料"
        raise WireFormatError(msg, end)
    logger.debug(f"[WIRE] read tensor {array.shape} {array.dtype} from {path}")
    return array
