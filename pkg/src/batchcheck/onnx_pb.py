"""Minimal protobuf wire codec for the ONNX model subset we analyze.

Reads and writes ModelProto/GraphProto/NodeProto/AttributeProto/TensorProto
and the value-info/type messages, without a protobuf dependency. Messages
are represented as plain dicts keyed by field name; repeated fields are
lists and absent optional fields are simply missing keys. Unknown fields
are skipped on read and never produced on write, so load(save(m)) is
structurally idempotent for the supported subset.
"""

from __future__ import annotations

import struct
from typing import Any

# kind markers
_VARINT = "varint"  # int64/enum, two's-complement varint
_FLOAT = "float"  # fixed32 float
_DOUBLE = "double"  # fixed64 double
_BYTES = "bytes"
_STRING = "string"
_MSG = "msg"

_WT_VARINT, _WT_FIXED64, _WT_LEN, _WT_FIXED32 = 0, 1, 2, 5

# field id -> (name, kind, repeated, sub-schema name)
SCHEMAS: dict[str, dict[int, tuple]] = {
    "ModelProto": {
        1: ("ir_version", _VARINT, False, None),
        2: ("producer_name", _STRING, False, None),
        3: ("producer_version", _STRING, False, None),
        4: ("domain", _STRING, False, None),
        5: ("model_version", _VARINT, False, None),
        6: ("doc_string", _STRING, False, None),
        7: ("graph", _MSG, False, "GraphProto"),
        8: ("opset_import", _MSG, True, "OperatorSetIdProto"),
    },
    "OperatorSetIdProto": {
        1: ("domain", _STRING, False, None),
        2: ("version", _VARINT, False, None),
    },
    "GraphProto": {
        1: ("node", _MSG, True, "NodeProto"),
        2: ("name", _STRING, False, None),
        5: ("initializer", _MSG, True, "TensorProto"),
        10: ("doc_string", _STRING, False, None),
        11: ("input", _MSG, True, "ValueInfoProto"),
        12: ("output", _MSG, True, "ValueInfoProto"),
        13: ("value_info", _MSG, True, "ValueInfoProto"),
    },
    "NodeProto": {
        1: ("input", _STRING, True, None),
        2: ("output", _STRING, True, None),
        3: ("name", _STRING, False, None),
        4: ("op_type", _STRING, False, None),
        5: ("attribute", _MSG, True, "AttributeProto"),
        6: ("doc_string", _STRING, False, None),
        7: ("domain", _STRING, False, None),
    },
    "AttributeProto": {
        1: ("name", _STRING, False, None),
        2: ("f", _FLOAT, False, None),
        3: ("i", _VARINT, False, None),
        4: ("s", _BYTES, False, None),
        5: ("t", _MSG, False, "TensorProto"),
        7: ("floats", _FLOAT, True, None),
        8: ("ints", _VARINT, True, None),
        9: ("strings", _BYTES, True, None),
        20: ("type", _VARINT, False, None),
    },
    "TensorProto": {
        1: ("dims", _VARINT, True, None),
        2: ("data_type", _VARINT, False, None),
        4: ("float_data", _FLOAT, True, None),
        5: ("int32_data", _VARINT, True, None),
        7: ("int64_data", _VARINT, True, None),
        8: ("name", _STRING, False, None),
        9: ("raw_data", _BYTES, False, None),
        10: ("double_data", _DOUBLE, True, None),
        11: ("uint64_data", _VARINT, True, None),
        13: ("external_data", _MSG, True, "StringStringEntryProto"),
        14: ("data_location", _VARINT, False, None),
    },
    "StringStringEntryProto": {
        1: ("key", _STRING, False, None),
        2: ("value", _STRING, False, None),
    },
    "ValueInfoProto": {
        1: ("name", _STRING, False, None),
        2: ("type", _MSG, False, "TypeProto"),
        3: ("doc_string", _STRING, False, None),
    },
    "TypeProto": {
        1: ("tensor_type", _MSG, False, "TypeProtoTensor"),
    },
    "TypeProtoTensor": {
        1: ("elem_type", _VARINT, False, None),
        2: ("shape", _MSG, False, "TensorShapeProto"),
    },
    "TensorShapeProto": {
        1: ("dim", _MSG, True, "Dimension"),
    },
    "Dimension": {
        1: ("dim_value", _VARINT, False, None),
        2: ("dim_param", _STRING, False, None),
    },
}


class WireError(ValueError):
    """Malformed protobuf payload."""


# -- decoding --


def _read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise WireError("truncated varint")
        byte = buf[pos]
        result |= (byte & 0x7F) << shift
        pos += 1
        if not byte & 0x80:
            break
        shift += 7
        if shift >= 70:
            raise WireError("varint too long")
    if result >= 1 << 63:  # two's-complement int64
        result -= 1 << 64
    return result, pos


def _skip(buf: bytes, pos: int, wire_type: int) -> int:
    if wire_type == _WT_VARINT:
        return _read_varint(buf, pos)[1]
    if wire_type == _WT_FIXED64:
        return pos + 8
    if wire_type == _WT_FIXED32:
        return pos + 4
    if wire_type == _WT_LEN:
        n, pos = _read_varint(buf, pos)
        return pos + n
    raise WireError(f"unsupported wire type {wire_type}")


def decode(buf: bytes, schema: str = "ModelProto") -> dict[str, Any]:
    fields = SCHEMAS[schema]
    msg: dict[str, Any] = {
        name: [] for name, _, rep, _ in fields.values() if rep
    }
    pos = 0
    while pos < len(buf):
        tag, pos = _read_varint(buf, pos)
        fid, wt = tag >> 3, tag & 7
        spec = fields.get(fid)
        if spec is None:
            pos = _skip(buf, pos, wt)
            continue
        name, kind, repeated, sub = spec
        if kind in (_VARINT, _FLOAT, _DOUBLE) and wt == _WT_LEN and repeated:
            # packed repeated scalars
            n, pos = _read_varint(buf, pos)
            end = pos + n
            vals = []
            while pos < end:
                if kind == _VARINT:
                    v, pos = _read_varint(buf, pos)
                elif kind == _FLOAT:
                    v = struct.unpack_from("<f", buf, pos)[0]
                    pos += 4
                else:
                    v = struct.unpack_from("<d", buf, pos)[0]
                    pos += 8
                vals.append(v)
            msg[name].extend(vals)
            continue
        if kind == _VARINT:
            val, pos = _read_varint(buf, pos)
        elif kind == _FLOAT:
            val = struct.unpack_from("<f", buf, pos)[0]
            pos += 4
        elif kind == _DOUBLE:
            val = struct.unpack_from("<d", buf, pos)[0]
            pos += 8
        elif kind in (_BYTES, _STRING, _MSG):
            n, pos = _read_varint(buf, pos)
            raw = buf[pos : pos + n]
            if len(raw) != n:
                raise WireError("truncated length-delimited field")
            pos += n
            if kind == _STRING:
                val = raw.decode("utf-8")
            elif kind == _BYTES:
                val = bytes(raw)
            else:
                val = decode(raw, sub)
        else:  # pragma: no cover
            raise WireError(f"unknown kind {kind}")
        if repeated:
            msg[name].append(val)
        else:
            msg[name] = val
    return msg


# -- encoding --


def _write_varint(out: bytearray, value: int) -> None:
    if value < 0:
        value += 1 << 64
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return


def _write_tag(out: bytearray, fid: int, wire_type: int) -> None:
    _write_varint(out, (fid << 3) | wire_type)


def encode(msg: dict[str, Any], schema: str = "ModelProto") -> bytes:
    fields = SCHEMAS[schema]
    out = bytearray()
    for fid in sorted(fields):
        name, kind, repeated, sub = fields[fid]
        if name not in msg:
            continue
        values = msg[name] if repeated else [msg[name]]
        if repeated and kind in (_VARINT, _FLOAT, _DOUBLE):
            if not values:
                continue
            payload = bytearray()  # packed encoding
            for v in values:
                if kind == _VARINT:
                    _write_varint(payload, int(v))
                elif kind == _FLOAT:
                    payload += struct.pack("<f", float(v))
                else:
                    payload += struct.pack("<d", float(v))
            _write_tag(out, fid, _WT_LEN)
            _write_varint(out, len(payload))
            out += payload
            continue
        for v in values:
            if kind == _VARINT:
                _write_tag(out, fid, _WT_VARINT)
                _write_varint(out, int(v))
            elif kind == _FLOAT:
                _write_tag(out, fid, _WT_FIXED32)
                out += struct.pack("<f", float(v))
            elif kind == _DOUBLE:
                _write_tag(out, fid, _WT_FIXED64)
                out += struct.pack("<d", float(v))
            else:
                if kind == _STRING:
                    raw = str(v).encode("utf-8")
                elif kind == _BYTES:
                    raw = bytes(v)
                else:
                    raw = encode(v, sub)
                _write_tag(out, fid, _WT_LEN)
                _write_varint(out, len(raw))
                out += raw
    return bytes(out)
