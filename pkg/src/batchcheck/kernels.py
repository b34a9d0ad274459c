"""Reference numpy kernels for the supported operator set.

Each kernel takes the node (for attributes), the resolved input arrays
(None for absent optional inputs) and an RNG, and returns the list of
output arrays. Numeric semantics follow the ONNX operator definitions in
float32 with row-major accumulation order; these kernels define the
golden execution semantics for the whole package.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .ir import DTYPES, NodeSpec


class KernelError(ValueError):
    pass


def _axes_arg(node: NodeSpec, inputs, input_idx: int):
    """Reduction axes from an input tensor (opset >= 13/18) or attribute."""
    if len(inputs) > input_idx and inputs[input_idx] is not None:
        return tuple(int(a) for a in np.atleast_1d(inputs[input_idx]))
    axes = node.attr("axes")
    return tuple(int(a) for a in axes) if axes is not None else None


def _reduce(node: NodeSpec, inputs, fn):
    x = inputs[0]
    axes = _axes_arg(node, inputs, 1)
    keepdims = bool(node.attr("keepdims", 1))
    if axes is None or len(axes) == 0:
        if node.attr("noop_with_empty_axes", 0) and axes is not None:
            return [x.copy()]
        axes = None
    return [fn(x, axis=axes, keepdims=keepdims).astype(x.dtype, copy=False)]


def _binary(fn):
    return lambda node, inputs, rng: [fn(inputs[0], inputs[1])]


def _unary(fn):
    return lambda node, inputs, rng: [fn(inputs[0])]


def _div(a, b):
    if np.issubdtype(a.dtype, np.integer):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.trunc(np.true_divide(a, b)).astype(a.dtype)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.divide(a, b)


def _sigmoid(x):
    with np.errstate(over="ignore"):
        return (1.0 / (1.0 + np.exp(-x.astype(np.float64)))).astype(x.dtype)


def _cast(node, inputs, rng):
    code = node.attr("to")
    if code not in DTYPES:
        raise KernelError(f"Cast: unsupported target dtype code {code}")
    return [inputs[0].astype(DTYPES[code])]


def _matmul(node, inputs, rng):
    a, b = inputs
    if a.ndim == 0 or b.ndim == 0:
        raise KernelError("MatMul: operands must be at least 1-D")
    try:
        return [np.matmul(a, b)]
    except ValueError as exc:
        raise KernelError(f"MatMul: inner dimensions disagree ({a.shape} x {b.shape})") from exc


def _gemm(node, inputs, rng):
    a, b = inputs[0], inputs[1]
    if node.attr("transA", 0):
        a = a.T
    if node.attr("transB", 0):
        b = b.T
    alpha = np.float32(node.attr("alpha", 1.0))
    beta = np.float32(node.attr("beta", 1.0))
    if a.shape[-1] != b.shape[0]:
        raise KernelError(f"Gemm: inner dimensions disagree ({a.shape} x {b.shape})")
    y = alpha * (a @ b)
    if len(inputs) > 2 and inputs[2] is not None:
        y = y + beta * inputs[2]
    return [y.astype(inputs[0].dtype, copy=False)]


def conv_geometry(node: NodeSpec, x_shape, w_shape):
    """Resolved (strides, pads, dilations, group) for a 2-D Conv."""
    if len(x_shape) != 4 or len(w_shape) != 4:
        raise KernelError("Conv: only 2-D (NCHW) convolution is supported")
    if node.attr("auto_pad", "NOTSET") not in ("NOTSET", ""):
        raise KernelError("Conv: auto_pad is not supported; use explicit pads")
    strides = tuple(node.attr("strides", (1, 1)))
    pads = tuple(node.attr("pads", (0, 0, 0, 0)))
    dilations = tuple(node.attr("dilations", (1, 1)))
    group = int(node.attr("group", 1))
    kernel = tuple(node.attr("kernel_shape", w_shape[2:]))
    if tuple(w_shape[2:]) != kernel:
        raise KernelError("Conv: kernel_shape disagrees with weight tensor")
    if x_shape[1] != w_shape[1] * group:
        raise KernelError("Conv: channel count disagrees with weights/group")
    return strides, pads, dilations, group


def _conv_windows(x: np.ndarray, kernel, strides, pads, dilations, fill):
    """Sliding receptive-field view: (N, C, Ho, Wo, kh, kw)."""
    kh, kw = kernel
    dh, dw = dilations
    sh, sw = strides
    xp = np.pad(x, ((0, 0), (0, 0), (pads[0], pads[2]), (pads[1], pads[3])),
                constant_values=fill)
    span_h, span_w = (kh - 1) * dh + 1, (kw - 1) * dw + 1
    if xp.shape[2] < span_h or xp.shape[3] < span_w:
        raise KernelError("Conv: kernel larger than padded input")
    v = sliding_window_view(xp, (span_h, span_w), axis=(2, 3))
    return v[:, :, ::sh, ::sw, ::dh, ::dw]


def _conv(node, inputs, rng):
    x, w = inputs[0], inputs[1]
    strides, pads, dilations, group = conv_geometry(node, x.shape, w.shape)
    kernel = w.shape[2:]
    cout = w.shape[0]
    v = _conv_windows(x, kernel, strides, pads, dilations, fill=0)
    n, _, ho, wo = v.shape[0], v.shape[1], v.shape[2], v.shape[3]
    out = np.empty((n, cout, ho, wo), dtype=x.dtype)
    cg_in, cg_out = x.shape[1] // group, cout // group
    for g in range(group):
        vg = v[:, g * cg_in:(g + 1) * cg_in]
        wg = w[g * cg_out:(g + 1) * cg_out]
        out[:, g * cg_out:(g + 1) * cg_out] = np.einsum(
            "nchwkl,ockl->nohw", vg, wg, optimize=True)
    if len(inputs) > 2 and inputs[2] is not None:
        out = out + inputs[2].reshape(1, cout, 1, 1)
    return [out.astype(x.dtype, copy=False)]


def _softmax(node, inputs, rng):
    x = inputs[0]
    axis = int(node.attr("axis", -1))
    shifted = x - np.max(x, axis=axis, keepdims=True)
    with np.errstate(under="ignore"):
        e = np.exp(shifted)
    return [(e / np.sum(e, axis=axis, keepdims=True)).astype(x.dtype, copy=False)]


def reshape_target(data_shape, target, allowzero: int) -> tuple[int, ...]:
    """Resolve an ONNX Reshape target (0 = copy dim, -1 = infer)."""
    target = [int(t) for t in np.atleast_1d(target)]
    out = []
    for i, t in enumerate(target):
        if t == 0 and not allowzero:
            if i >= len(data_shape):
                raise KernelError("Reshape: 0 dim has no matching input dim")
            out.append(data_shape[i])
        else:
            out.append(t)
    if out.count(-1) > 1:
        raise KernelError("Reshape: more than one -1 dim")
    if -1 in out:
        known = int(np.prod([d for d in out if d != -1], dtype=np.int64))
        total = int(np.prod(data_shape, dtype=np.int64))
        if known == 0 or total % known:
            raise KernelError(f"Reshape: cannot infer -1 for {data_shape} -> {out}")
        out[out.index(-1)] = total // known
    return tuple(out)


def _reshape(node, inputs, rng):
    shape = reshape_target(inputs[0].shape, inputs[1], node.attr("allowzero", 0))
    return [inputs[0].reshape(shape)]


def _flatten(node, inputs, rng):
    x = inputs[0]
    axis = int(node.attr("axis", 1)) % (x.ndim + 1)
    lead = int(np.prod(x.shape[:axis], dtype=np.int64))
    return [x.reshape(lead, -1 if x.size else int(np.prod(x.shape[axis:], dtype=np.int64)))]


def _squeeze(node, inputs, rng):
    x = inputs[0]
    axes = _axes_arg(node, inputs, 1)
    if axes is None:
        return [np.squeeze(x)]
    return [np.squeeze(x, axis=tuple(a % x.ndim for a in axes))]


def _unsqueeze(node, inputs, rng):
    x = inputs[0]
    axes = _axes_arg(node, inputs, 1)
    if axes is None:
        raise KernelError("Unsqueeze: axes required")
    rank = x.ndim + len(axes)
    return [np.expand_dims(x, tuple(a % rank for a in axes))]


def _transpose(node, inputs, rng):
    perm = node.attr("perm")
    return [np.transpose(inputs[0], perm)]


def _concat(node, inputs, rng):
    return [np.concatenate(inputs, axis=int(node.attr("axis", 0)))]


def _split(node, inputs, rng):
    x = inputs[0]
    axis = int(node.attr("axis", 0))
    split = None
    if len(inputs) > 1 and inputs[1] is not None:
        split = [int(s) for s in inputs[1]]
    elif node.attr("split") is not None:
        split = [int(s) for s in node.attr("split")]
    n_out = len(node.outputs)
    if split is None:
        extent = x.shape[axis]
        base, extra = divmod(extent, n_out)
        split = [base + (1 if i < extra else 0) for i in range(n_out)]
    offsets = np.cumsum(split)[:-1]
    return list(np.split(x, offsets, axis=axis))


def slice_spec(data_shape, starts, ends, axes=None, steps=None):
    """ONNX Slice bounds -> per-dimension python slices."""
    starts = [int(v) for v in np.atleast_1d(starts)]
    ends = [int(v) for v in np.atleast_1d(ends)]
    if axes is None:
        axes = list(range(len(starts)))
    else:
        axes = [int(a) % len(data_shape) for a in np.atleast_1d(axes)]
    if steps is None:
        steps = [1] * len(starts)
    else:
        steps = [int(s) for s in np.atleast_1d(steps)]
    slices = [slice(None)] * len(data_shape)
    for start, end, axis, step in zip(starts, ends, axes, steps):
        if step == 0:
            raise KernelError("Slice: step must be nonzero")
        dim = data_shape[axis]
        if start < 0:
            start += dim
        if end < 0:
            end += dim
        if step > 0:
            start = min(max(start, 0), dim)
            end = min(max(end, 0), dim)
        else:
            start = min(max(start, 0), dim - 1)
            end = max(min(end, dim), -1)
            end = end if end >= 0 else None
        slices[axis] = slice(start, end, step)
    return tuple(slices)


def _slice(node, inputs, rng):
    x = inputs[0]
    axes = inputs[3] if len(inputs) > 3 else None
    steps = inputs[4] if len(inputs) > 4 else None
    return [x[slice_spec(x.shape, inputs[1], inputs[2], axes, steps)].copy()]


def _expand(node, inputs, rng):
    x = inputs[0]
    shape = tuple(int(d) for d in inputs[1])
    return [np.broadcast_to(x, np.broadcast_shapes(x.shape, shape)).copy()]


def _gather(node, inputs, rng):
    data, indices = inputs
    axis = int(node.attr("axis", 0))
    idx = indices.astype(np.int64)
    if np.any(idx < -data.shape[axis]) or np.any(idx >= data.shape[axis]):
        raise KernelError(f"Gather: index out of bounds for axis extent {data.shape[axis]}")
    return [np.take(data, idx, axis=axis)]


def _gather_elements(node, inputs, rng):
    data, indices = inputs
    axis = int(node.attr("axis", 0)) % data.ndim
    idx = indices.astype(np.int64)
    idx = np.where(idx < 0, idx + data.shape[axis], idx)
    if np.any(idx < 0) or np.any(idx >= data.shape[axis]):
        raise KernelError("GatherElements: index out of bounds")
    return [np.take_along_axis(data, idx, axis=axis)]


def scatter_nd(data: np.ndarray, indices: np.ndarray, updates: np.ndarray) -> np.ndarray:
    """ONNX ScatterND on a copy of data (works for label tensors too)."""
    out = data.copy()
    idx = indices.astype(np.int64)
    if idx.ndim < 1:
        raise KernelError("ScatterND: indices rank must be >= 1")
    depth = idx.shape[-1]
    flat_idx = idx.reshape(-1, depth)
    flat_upd = updates.reshape((flat_idx.shape[0],) + data.shape[depth:])
    for k in range(flat_idx.shape[0]):
        key = tuple(int(v) for v in flat_idx[k])
        for axis, v in enumerate(key):
            if not -data.shape[axis] <= v < data.shape[axis]:
                raise KernelError(f"ScatterND: index {key} out of bounds")
        out[key] = flat_upd[k]
    return out


def _scatter_nd(node, inputs, rng):
    if node.attr("reduction", "none") not in ("none", ""):
        raise KernelError("ScatterND: reduction modes are not supported")
    return [scatter_nd(inputs[0], inputs[1], inputs[2])]


def _shape(node, inputs, rng):
    shape = inputs[0].shape
    rank = len(shape)
    start = int(node.attr("start", 0)) % max(rank, 1) if node.attr("start", 0) else 0
    end = node.attr("end")
    end = rank if end is None else (int(end) % max(rank, 1) if int(end) < 0 else min(int(end), rank))
    return [np.asarray(shape[start:end], dtype=np.int64)]


def _constant(node, inputs, rng):
    for key in ("value", "value_float", "value_int", "value_floats", "value_ints"):
        if key in node.attributes:
            val = node.attributes[key]
            if isinstance(val, np.ndarray):
                return [val.copy()]
            if key == "value_float":
                return [np.asarray(val, dtype=np.float32)]
            if key == "value_int":
                return [np.asarray(val, dtype=np.int64)]
            if key == "value_floats":
                return [np.asarray(val, dtype=np.float32)]
            return [np.asarray(val, dtype=np.int64)]
    raise KernelError("Constant: no value attribute")


def _constant_of_shape(node, inputs, rng):
    shape = tuple(int(d) for d in inputs[0])
    value = node.attr("value")
    if value is None:
        value = np.zeros(1, dtype=np.float32)
    return [np.full(shape, value.reshape(-1)[0], dtype=value.dtype)]


def _random_normal(node, inputs, rng):
    shape = tuple(int(d) for d in node.attr("shape", ()))
    dtype = DTYPES[node.attr("dtype", 1)]
    out = rng.normal(node.attr("mean", 0.0), node.attr("scale", 1.0), shape)
    return [out.astype(dtype)]


def _random_uniform(node, inputs, rng):
    shape = tuple(int(d) for d in node.attr("shape", ()))
    dtype = DTYPES[node.attr("dtype", 1)]
    out = rng.uniform(node.attr("low", 0.0), node.attr("high", 1.0), shape)
    return [out.astype(dtype)]


def _dynamic_quantize_linear(node, inputs, rng):
    x = inputs[0].astype(np.float32)
    # min/max are global over the whole tensor, including any batch axis
    rmin = min(float(x.min()) if x.size else 0.0, 0.0)
    rmax = max(float(x.max()) if x.size else 0.0, 0.0)
    scale = np.float32((rmax - rmin) / 255.0)
    if scale == 0:
        scale = np.float32(1.0)
    zp_f = np.clip(round(-rmin / float(scale)), 0, 255)
    zero_point = np.uint8(zp_f)
    y = np.clip(np.rint(x / scale) + float(zero_point), 0, 255).astype(np.uint8)
    return [y, np.float32(scale).reshape(()), zero_point.reshape(())]


def _dequantize_linear(node, inputs, rng):
    x, scale = inputs[0], inputs[1]
    zp = inputs[2] if len(inputs) > 2 and inputs[2] is not None else np.zeros((), x.dtype)
    axis = int(node.attr("axis", 1))
    if scale.ndim == 1:
        bshape = [1] * x.ndim
        bshape[axis % x.ndim] = scale.shape[0]
        scale = scale.reshape(bshape)
        zp = zp.reshape(bshape)
    return [((x.astype(np.float32) - zp.astype(np.float32)) * scale.astype(np.float32))]


KERNELS = {
    "Add": _binary(np.add),
    "Sub": _binary(np.subtract),
    "Mul": _binary(np.multiply),
    "Div": _binary(_div),
    "Neg": _unary(np.negative),
    "Relu": _unary(lambda x: np.maximum(x, np.zeros((), dtype=x.dtype))),
    "Sigmoid": _unary(_sigmoid),
    "Tanh": _unary(np.tanh),
    "Exp": _unary(lambda x: np.exp(x, dtype=x.dtype) if x.dtype.kind == "f" else np.exp(x)),
    "Sin": _unary(np.sin),
    "Sqrt": _unary(np.sqrt),
    "Cast": _cast,
    "Greater": _binary(np.greater),
    "GreaterOrEqual": _binary(np.greater_equal),
    "Less": _binary(np.less),
    "LessOrEqual": _binary(np.less_equal),
    "Equal": _binary(np.equal),
    "And": _binary(np.logical_and),
    "Or": _binary(np.logical_or),
    "Not": _unary(np.logical_not),
    "MatMul": _matmul,
    "Gemm": _gemm,
    "Conv": _conv,
    "ReduceSum": lambda n, i, r: _reduce(n, i, np.sum),
    "ReduceMax": lambda n, i, r: _reduce(n, i, np.max),
    "ReduceMean": lambda n, i, r: _reduce(n, i, np.mean),
    "Softmax": _softmax,
    "Reshape": _reshape,
    "Transpose": _transpose,
    "Flatten": _flatten,
    "Squeeze": _squeeze,
    "Unsqueeze": _unsqueeze,
    "Concat": _concat,
    "Split": _split,
    "Slice": _slice,
    "Expand": _expand,
    "Gather": _gather,
    "GatherElements": _gather_elements,
    "ScatterND": _scatter_nd,
    "Shape": _shape,
    "Size": lambda n, i, r: [np.asarray(i[0].size, dtype=np.int64)],
    "Constant": _constant,
    "ConstantOfShape": _constant_of_shape,
    "Where": lambda n, i, r: [np.where(i[0], i[1], i[2])],
    "RandomNormal": _random_normal,
    "RandomUniform": _random_uniform,
    "DynamicQuantizeLinear": _dynamic_quantize_linear,
    "DequantizeLinear": _dequantize_linear,
}

#: Operators whose outputs are freshly sampled rather than functions of inputs.
RANDOM_OPS = frozenset({"RandomNormal", "RandomUniform"})
