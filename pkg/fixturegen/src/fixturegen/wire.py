"""Self-contained ONNX ModelProto writer (protobuf wire format, no deps).

Only the fields the fixture corpus needs: graph inputs/outputs with concrete
shapes, raw-data initializers, nodes with int/float/ints/tensor attributes,
and a single default-domain opset import.
"""

from __future__ import annotations

import struct

import numpy as np

DTYPE_CODES = {
    np.dtype("float32"): 1,
    np.dtype("uint8"): 2,
    np.dtype("int8"): 3,
    np.dtype("int32"): 6,
    np.dtype("int64"): 7,
    np.dtype("bool"): 9,
    np.dtype("float64"): 11,
}

_WT_VARINT, _WT_LEN, _WT_FIXED32 = 0, 2, 5


def _varint(value: int) -> bytes:
    value &= (1 << 64) - 1  # two's complement for negative ints
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def _tag(fid: int, wire_type: int) -> bytes:
    return _varint((fid << 3) | wire_type)


def uint_field(fid: int, value: int) -> bytes:
    return _tag(fid, _WT_VARINT) + _varint(int(value))


def float_field(fid: int, value: float) -> bytes:
    return _tag(fid, _WT_FIXED32) + struct.pack("<f", value)


def bytes_field(fid: int, payload: bytes) -> bytes:
    return _tag(fid, _WT_LEN) + _varint(len(payload)) + payload


def str_field(fid: int, text: str) -> bytes:
    return bytes_field(fid, text.encode("utf-8"))


def tensor(name: str, arr: np.ndarray) -> bytes:
    # TensorProto: dims=1, data_type=2, name=8, raw_data=9
    out = b"".join(uint_field(1, d) for d in arr.shape)
    out += uint_field(2, DTYPE_CODES[arr.dtype])
    out += str_field(8, name)
    out += bytes_field(9, np.ascontiguousarray(arr).tobytes())
    return out


def value_info(name: str, dtype: np.dtype, shape: tuple[int, ...]) -> bytes:
    # Dimension: dim_value=1; TensorShapeProto: dim=1
    dims = b"".join(bytes_field(1, uint_field(1, d)) for d in shape)
    # TypeProto.Tensor: elem_type=1, shape=2
    tensor_type = uint_field(1, DTYPE_CODES[np.dtype(dtype)]) + bytes_field(2, dims)
    # ValueInfoProto: name=1, type=2 (TypeProto: tensor_type=1)
    return str_field(1, name) + bytes_field(2, bytes_field(1, tensor_type))


_ATTR_FLOAT, _ATTR_INT, _ATTR_TENSOR, _ATTR_INTS = 1, 2, 4, 7


def attribute(name: str, value) -> bytes:
    # AttributeProto: name=1, f=2, i=3, t=5, ints=8, type=20
    out = str_field(1, name)
    if isinstance(value, np.ndarray):
        out += bytes_field(5, tensor("", value)) + uint_field(20, _ATTR_TENSOR)
    elif isinstance(value, (bool, int, np.integer)):
        out += uint_field(3, int(value)) + uint_field(20, _ATTR_INT)
    elif isinstance(value, float):
        out += float_field(2, value) + uint_field(20, _ATTR_FLOAT)
    elif isinstance(value, (tuple, list)):
        out += b"".join(uint_field(8, int(v)) for v in value)
        out += uint_field(20, _ATTR_INTS)
    else:
        raise TypeError(f"attribute '{name}': unsupported value {type(value).__name__}")
    return out


def node(op_type: str, inputs, outputs, name: str = "", **attrs) -> bytes:
    # NodeProto: input=1, output=2, name=3, op_type=4, attribute=5
    out = b"".join(str_field(1, t) for t in inputs)
    out += b"".join(str_field(2, t) for t in outputs)
    if name:
        out += str_field(3, name)
    out += str_field(4, op_type)
    out += b"".join(bytes_field(5, attribute(k, v)) for k, v in attrs.items())
    return out


def model(name: str, nodes: list[bytes], inputs: list[bytes], outputs: list[bytes],
          initializers: dict[str, np.ndarray], opset: int = 13) -> bytes:
    # GraphProto: node=1, name=2, initializer=5, input=11, output=12
    graph = b"".join(bytes_field(1, n) for n in nodes)
    graph += str_field(2, name)
    graph += b"".join(bytes_field(5, tensor(k, v)) for k, v in initializers.items())
    graph += b"".join(bytes_field(11, vi) for vi in inputs)
    graph += b"".join(bytes_field(12, vi) for vi in outputs)
    # ModelProto: ir_version=1, producer_name=2, graph=7, opset_import=8
    # OperatorSetIdProto: domain=1, version=2
    opset_entry = str_field(1, "") + uint_field(2, opset)
    return (uint_field(1, 8) + str_field(2, "fixturegen")
            + bytes_field(7, graph) + bytes_field(8, opset_entry))
