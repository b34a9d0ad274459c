"""In-memory dataflow graph: parsing, validation, shape binding, ordering.

The model is an ONNX-subset graph with named tensors, constant initializers
and operator nodes. After :func:`bind_dimensions` every tensor extent is a
fixed nonnegative integer; all downstream analyses assume that.
"""

from __future__ import annotations

import heapq
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import onnx_pb

MIN_OPSET = 13

#: Supported operator set (v1).
SUPPORTED_OPS = frozenset({
    "Add", "Sub", "Mul", "Div", "Neg", "Relu", "Sigmoid", "Tanh", "Exp",
    "Sin", "Sqrt", "Cast", "Greater", "GreaterOrEqual", "Less",
    "LessOrEqual", "Equal", "And", "Or", "Not", "MatMul", "Gemm", "Conv",
    "ReduceSum", "ReduceMax", "ReduceMean", "Softmax", "Reshape",
    "Transpose", "Flatten", "Squeeze", "Unsqueeze", "Concat", "Split",
    "Slice", "Expand", "Gather", "GatherElements", "ScatterND", "Shape",
    "Size", "Constant", "ConstantOfShape", "Where", "RandomNormal",
    "RandomUniform", "DynamicQuantizeLinear", "DequantizeLinear",
})

_CONTROL_FLOW = frozenset({"If", "Loop", "Scan"})

# ONNX TensorProto.DataType -> numpy
DTYPES = {
    1: np.dtype("float32"),
    2: np.dtype("uint8"),
    3: np.dtype("int8"),
    6: np.dtype("int32"),
    7: np.dtype("int64"),
    9: np.dtype("bool"),
    11: np.dtype("float64"),
}
DTYPE_CODES = {v: k for k, v in DTYPES.items()}


class GraphError(ValueError):
    """Structurally invalid or unsupported model."""


@dataclass(frozen=True)
class TensorSpec:
    name: str
    dtype: np.dtype
    shape: tuple  # ints after binding; strs are symbolic dims

    @property
    def is_concrete(self) -> bool:
        return all(isinstance(d, int) for d in self.shape)


@dataclass(frozen=True)
class NodeSpec:
    op_type: str
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    attributes: dict = field(default_factory=dict)
    name: str = ""

    def attr(self, key, default=None):
        return self.attributes.get(key, default)


@dataclass
class GraphModel:
    inputs: list[TensorSpec]
    outputs: list[TensorSpec]
    initializers: dict[str, np.ndarray]
    nodes: list[NodeSpec]
    opset: int = MIN_OPSET
    name: str = "graph"

    def input_names(self) -> list[str]:
        return [t.name for t in self.inputs]

    def output_names(self) -> list[str]:
        return [t.name for t in self.outputs]

    def producer_of(self) -> dict[str, int]:
        """Tensor name -> index of the node producing it."""
        table = {}
        for i, node in enumerate(self.nodes):
            for out in node.outputs:
                if out:
                    table[out] = i
        return table


# -- protobuf <-> model --


def _decode_tensor(t: dict, base_dir: str | None) -> np.ndarray:
    code = t.get("data_type", 0)
    if code not in DTYPES:
        raise GraphError(f"tensor '{t.get('name', '?')}': unsupported dtype code {code}")
    dtype = DTYPES[code]
    dims = tuple(int(d) for d in t["dims"])
    if t.get("data_location") == 1:  # external data file
        info = {e["key"]: e["value"] for e in t["external_data"]}
        if base_dir is None:
            raise GraphError(
                f"tensor '{t.get('name', '?')}' uses external data but no model path is known"
            )
        path = os.path.join(base_dir, info["location"])
        offset = int(info.get("offset", 0))
        length = int(info.get("length", dtype.itemsize * int(np.prod(dims, dtype=np.int64))))
        with open(path, "rb") as fh:
            fh.seek(offset)
            raw = fh.read(length)
        return np.frombuffer(raw, dtype=dtype).reshape(dims).copy()
    if "raw_data" in t:
        return np.frombuffer(t["raw_data"], dtype=dtype).reshape(dims).copy()
    for key, cast in (
        ("float_data", np.float32),
        ("int32_data", None),
        ("int64_data", np.int64),
        ("double_data", np.float64),
        ("uint64_data", np.uint64),
    ):
        if t.get(key):
            arr = np.array(t[key])
            return arr.astype(dtype).reshape(dims)
    return np.zeros(dims, dtype=dtype)


def _encode_tensor(name: str, arr: np.ndarray) -> dict:
    if arr.dtype not in DTYPE_CODES:
        raise GraphError(f"tensor '{name}': unsupported dtype {arr.dtype}")
    return {
        "name": name,
        "dims": [int(d) for d in arr.shape],
        "data_type": DTYPE_CODES[arr.dtype],
        "raw_data": np.ascontiguousarray(arr).tobytes(),
    }


# AttributeProto.type codes
_ATTR_FLOAT, _ATTR_INT, _ATTR_STRING, _ATTR_TENSOR = 1, 2, 3, 4
_ATTR_FLOATS, _ATTR_INTS, _ATTR_STRINGS = 6, 7, 8


def _decode_attr(a: dict, base_dir):
    kind = a.get("type")
    if kind == _ATTR_FLOAT:
        return float(a.get("f", 0.0))
    if kind == _ATTR_INT:
        return int(a.get("i", 0))
    if kind == _ATTR_STRING:
        return a.get("s", b"").decode("utf-8")
    if kind == _ATTR_TENSOR:
        return _decode_tensor(a["t"], base_dir)
    if kind == _ATTR_FLOATS:
        return tuple(float(x) for x in a["floats"])
    if kind == _ATTR_INTS:
        return tuple(int(x) for x in a["ints"])
    if kind == _ATTR_STRINGS:
        return tuple(s.decode("utf-8") for s in a["strings"])
    raise GraphError(f"attribute '{a.get('name', '?')}': unsupported type code {kind}")


def _encode_attr(name: str, value) -> dict:
    a: dict = {"name": name}
    if isinstance(value, np.ndarray):
        a.update(type=_ATTR_TENSOR, t=_encode_tensor("", value))
    elif isinstance(value, bool):
        a.update(type=_ATTR_INT, i=int(value))
    elif isinstance(value, int):
        a.update(type=_ATTR_INT, i=value)
    elif isinstance(value, float):
        a.update(type=_ATTR_FLOAT, f=value)
    elif isinstance(value, str):
        a.update(type=_ATTR_STRING, s=value.encode("utf-8"))
    elif isinstance(value, (tuple, list)):
        if all(isinstance(v, int) for v in value):
            a.update(type=_ATTR_INTS, ints=list(value))
        elif all(isinstance(v, float) for v in value):
            a.update(type=_ATTR_FLOATS, floats=list(value))
        elif all(isinstance(v, str) for v in value):
            a.update(type=_ATTR_STRINGS, strings=[v.encode("utf-8") for v in value])
        else:
            raise GraphError(f"attribute '{name}': mixed-type list")
    else:
        raise GraphError(f"attribute '{name}': unsupported value {type(value).__name__}")
    return a


def _decode_value_info(vi: dict) -> TensorSpec:
    tt = vi.get("type", {}).get("tensor_type")
    if tt is None:
        raise GraphError(f"value '{vi.get('name', '?')}' has no tensor type")
    code = tt.get("elem_type", 0)
    if code not in DTYPES:
        raise GraphError(f"value '{vi['name']}': unsupported dtype code {code}")
    shape = []
    for d in tt.get("shape", {}).get("dim", []):
        if "dim_value" in d:
            shape.append(int(d["dim_value"]))
        elif "dim_param" in d:
            shape.append(d["dim_param"])
        else:
            raise GraphError(f"value '{vi['name']}': unknown dimension")
    return TensorSpec(vi["name"], DTYPES[code], tuple(shape))


def _encode_value_info(spec: TensorSpec) -> dict:
    dims = []
    for d in spec.shape:
        dims.append({"dim_value": int(d)} if isinstance(d, int) else {"dim_param": str(d)})
    return {
        "name": spec.name,
        "type": {"tensor_type": {"elem_type": DTYPE_CODES[np.dtype(spec.dtype)],
                                 "shape": {"dim": dims}}},
    }


def load_model(data: bytes | str | os.PathLike, base_dir: str | None = None) -> GraphModel:
    """Parse a serialized ONNX ModelProto (bytes or a file path)."""
    if isinstance(data, (str, os.PathLike)):
        path = os.fspath(data)
        base_dir = base_dir or os.path.dirname(os.path.abspath(path))
        with open(path, "rb") as fh:
            data = fh.read()
    try:
        proto = onnx_pb.decode(data, "ModelProto")
    except onnx_pb.WireError as exc:
        raise GraphError(f"parse failure: {exc}") from exc
    if "graph" not in proto:
        raise GraphError("model has no graph")

    opset = 0
    for entry in proto.get("opset_import", []):
        if entry.get("domain", "") in ("", "ai.onnx"):
            opset = max(opset, int(entry.get("version", 0)))
    if opset and opset < MIN_OPSET:
        raise GraphError(f"opset {opset} below supported minimum {MIN_OPSET}")

    g = proto["graph"]
    initializers = {}
    for t in g["initializer"]:
        name = t.get("name", "")
        if name in initializers:
            raise GraphError(f"duplicate initializer '{name}'")
        initializers[name] = _decode_tensor(t, base_dir)

    inputs = [_decode_value_info(vi) for vi in g["input"]
              if vi["name"] not in initializers]
    outputs = [_decode_value_info(vi) for vi in g["output"]]
    nodes = []
    for n in g["node"]:
        if n.get("domain", "") not in ("", "ai.onnx"):
            raise GraphError(f"node '{n.get('name', '')}': unsupported domain '{n['domain']}'")
        attrs = {a["name"]: _decode_attr(a, base_dir) for a in n["attribute"]}
        nodes.append(NodeSpec(
            op_type=n.get("op_type", ""),
            inputs=tuple(n["input"]),
            outputs=tuple(n["output"]),
            attributes=attrs,
            name=n.get("name", ""),
        ))

    model = GraphModel(inputs=inputs, outputs=outputs, initializers=initializers,
                       nodes=nodes, opset=opset or MIN_OPSET,
                       name=g.get("name", "graph"))
    validate_structure(model)
    return model


def save_model(model: GraphModel) -> bytes:
    """Serialize back to ONNX ModelProto bytes (supported subset only)."""
    graph = {
        "name": model.name,
        "node": [
            {
                "name": n.name,
                "op_type": n.op_type,
                "input": list(n.inputs),
                "output": list(n.outputs),
                "attribute": [_encode_attr(k, v) for k, v in sorted(n.attributes.items())],
            }
            for n in model.nodes
        ],
        "initializer": [_encode_tensor(k, v) for k, v in model.initializers.items()],
        "input": [_encode_value_info(s) for s in model.inputs],
        "output": [_encode_value_info(s) for s in model.outputs],
    }
    proto = {
        "ir_version": 8,
        "producer_name": "batchcheck",
        "opset_import": [{"domain": "", "version": model.opset}],
        "graph": graph,
    }
    return onnx_pb.encode(proto, "ModelProto")


def save_model_to(model: GraphModel, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(save_model(model))


# -- validation --


def validate_structure(model: GraphModel) -> None:
    """Raise GraphError on duplicate names, dangling inputs, or cycles."""
    seen: set[str] = set()
    for spec in model.inputs:
        if spec.name in seen:
            raise GraphError(f"duplicate tensor name '{spec.name}'")
        seen.add(spec.name)
    for name in model.initializers:
        if name in seen:
            raise GraphError(f"initializer '{name}' shadows a graph input")
        seen.add(name)
    for node in model.nodes:
        for out in node.outputs:
            if not out:
                continue
            if out in seen:
                raise GraphError(f"duplicate tensor name '{out}'")
            seen.add(out)
    for node in model.nodes:
        for inp in node.inputs:
            if inp and inp not in seen:
                raise GraphError(
                    f"node '{node.name or node.op_type}': dangling input '{inp}'"
                )
    for spec in model.outputs:
        if spec.name not in seen:
            raise GraphError(f"graph output '{spec.name}' is never produced")
    topological_order(model)  # raises on cycles


def topological_order(model: GraphModel) -> list[int]:
    """Kahn's algorithm, deterministic: lowest node index first among ready."""
    available = set(model.input_names()) | set(model.initializers)
    consumers: dict[str, list[int]] = {}
    missing: list[set[str]] = []
    for i, node in enumerate(model.nodes):
        need = {t for t in node.inputs if t and t not in available}
        missing.append(need)
        for t in need:
            consumers.setdefault(t, []).append(i)
    # tensors produced by nodes resolve consumer dependencies as they appear
    produced = model.producer_of()
    for i, need in enumerate(missing):
        for t in list(need):
            if t not in produced:
                # dangling; validate_structure reports this with a better message
                raise GraphError(
                    f"node '{model.nodes[i].name or model.nodes[i].op_type}': "
                    f"dangling input '{t}'"
                )
    ready = [i for i, need in enumerate(missing) if not need]
    heapq.heapify(ready)
    order: list[int] = []
    while ready:
        i = heapq.heappop(ready)
        order.append(i)
        for out in model.nodes[i].outputs:
            for j in consumers.get(out, ()):
                missing[j].discard(out)
                if not missing[j]:
                    heapq.heappush(ready, j)
    if len(order) != len(model.nodes):
        stuck = [model.nodes[i].name or model.nodes[i].op_type
                 for i in range(len(model.nodes)) if i not in set(order)]
        raise GraphError(f"cycle detected involving nodes {stuck}")
    return order


def validate_support(model: GraphModel) -> list[str]:
    """Diagnostics for every op_type lacking a rule or kernel (first occurrence order)."""
    from . import kernels, rules  # deferred: rules/kernels import this module

    diagnostics = []
    reported = set()
    for node in model.nodes:
        op = node.op_type
        if op in reported:
            continue
        if op in _CONTROL_FLOW:
            diagnostics.append(f"{op}: unsupported (control flow out of scope)")
        elif op not in SUPPORTED_OPS:
            diagnostics.append(f"{op}: unsupported operator")
        elif op not in rules.RULES:
            diagnostics.append(f"{op}: no label propagation rule")
        elif op not in kernels.KERNELS:
            diagnostics.append(f"{op}: no interpreter kernel")
        else:
            continue
        reported.add(op)
    return diagnostics


# -- dimension binding and shape inference --


def bind_dimensions(model: GraphModel, bindings: dict[str, int]) -> GraphModel:
    """Substitute symbolic dimensions; all graph inputs must become concrete."""

    def bind_spec(spec: TensorSpec, require: bool) -> TensorSpec:
        shape = []
        for d in spec.shape:
            if isinstance(d, int):
                shape.append(d)
                continue
            if d not in bindings:
                if require:
                    raise GraphError(f"unbound symbolic dimension '{d}' in '{spec.name}'")
                shape.append(d)
                continue
            val = int(bindings[d])
            if val < 1:
                raise GraphError(f"binding '{d}'={val}: axes must be nonempty")
            shape.append(val)
        return replace(spec, shape=tuple(shape))

    return replace_specs(
        model,
        inputs=[bind_spec(s, require=True) for s in model.inputs],
        outputs=[bind_spec(s, require=False) for s in model.outputs],
    )


def replace_specs(model: GraphModel, inputs=None, outputs=None) -> GraphModel:
    return GraphModel(
        inputs=list(inputs if inputs is not None else model.inputs),
        outputs=list(outputs if outputs is not None else model.outputs),
        initializers=dict(model.initializers),
        nodes=list(model.nodes),
        opset=model.opset,
        name=model.name,
    )


def infer_shapes(model: GraphModel) -> dict[str, tuple[int, ...]]:
    """Fixed shape (and implicitly dtype) of every tensor in the graph.

    Shapes are obtained by tracing the reference kernels over zero-filled
    inputs; shape-computation subgraphs (Shape -> Concat -> Reshape chains)
    come out exact because Shape is exact, and no supported operator has a
    value-dependent output shape otherwise.
    """
    from . import interp  # deferred: interp imports this module

    for spec in model.inputs:
        if not spec.is_concrete:
            raise GraphError(f"input '{spec.name}' has unbound shape {spec.shape}")
    diags = validate_support(model)
    if diags:
        raise GraphError("unsupported operators: " + "; ".join(diags))

    zeros = {s.name: np.zeros(s.shape, dtype=s.dtype) for s in model.inputs}
    trace = interp.execute(model, zeros, seed=0, trace=True)
    shapes = {name: tuple(arr.shape) for name, arr in trace.items()}
    for spec in model.outputs:
        got = shapes.get(spec.name)
        declared = tuple(spec.shape)
        if spec.is_concrete and got != declared:
            raise GraphError(
                f"output '{spec.name}': inferred shape {got} != declared {declared}"
            )
    return shapes


def structurally_equal(a: GraphModel, b: GraphModel) -> bool:
    """Deep equality including initializer contents (for round-trip checks)."""
    if (a.input_names() != b.input_names() or a.output_names() != b.output_names()
            or a.opset != b.opset or len(a.nodes) != len(b.nodes)):
        return False
    if [s.shape for s in a.inputs] != [s.shape for s in b.inputs]:
        return False
    if [s.dtype for s in a.inputs] != [s.dtype for s in b.inputs]:
        return False
    if set(a.initializers) != set(b.initializers):
        return False
    for name, arr in a.initializers.items():
        other = b.initializers[name]
        if arr.dtype != other.dtype or arr.shape != other.shape:
            return False
        if not np.array_equal(arr, other):
            return False
    for na, nb in zip(a.nodes, b.nodes):
        if (na.op_type != nb.op_type or na.inputs != nb.inputs
                or na.outputs != nb.outputs or na.name != nb.name):
            return False
        if set(na.attributes) != set(nb.attributes):
            return False
        for key, val in na.attributes.items():
            other = nb.attributes[key]
            if isinstance(val, np.ndarray) or isinstance(other, np.ndarray):
                if not (isinstance(val, np.ndarray) and isinstance(other, np.ndarray)
                        and val.dtype == other.dtype and np.array_equal(val, other)):
                    return False
            elif val != other:
                return False
    return True
