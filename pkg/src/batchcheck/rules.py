"""Per-operator label propagation rules.

Each rule maps the shadow tensors of a node's inputs (plus statically known
constant values and the fixed shape table) to the shadow tensors of its
outputs. Rules only ever over-approximate influence: when a movement
parameter or index is not a statically known, neutrally-labeled constant,
the rule falls back to a conservative fold of everything that could have
contributed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import kernels, labels
from .ir import NodeSpec


class RuleError(ValueError):
    pass


class RuleKind(enum.Enum):
    UNARY_ELEMENTWISE = "unary_elementwise"
    BINARY_ELEMENTWISE = "binary_elementwise"
    REDUCTION = "reduction"
    CONTRACTION = "contraction"
    DATA_MOVEMENT = "data_movement"
    GATHER_LIKE = "gather_like"
    SCATTER_LIKE = "scatter_like"
    RANDOM_SOURCE = "random_source"
    SHAPE_LIKE = "shape_like"
    QUANTIZE_LIKE = "quantize_like"
    SELECT = "select"


@dataclass
class PropagationContext:
    node: NodeSpec
    input_shadows: list  # np.ndarray per input, None for absent optional ones
    const_values: dict[str, np.ndarray] = field(default_factory=dict)
    shapes: dict[str, tuple] = field(default_factory=dict)

    def out_shape(self, i: int = 0) -> tuple:
        return tuple(self.shapes[self.node.outputs[i]])

    def shadow(self, i: int):
        return self.input_shadows[i] if i < len(self.input_shadows) else None

    def const(self, i: int):
        if i >= len(self.node.inputs):
            return None
        return self.const_values.get(self.node.inputs[i])

    def clean_const(self, i: int):
        """Constant value of input i, provided its shadow is all-neutral."""
        val = self.const(i)
        if val is None:
            return None
        shadow = self.shadow(i)
        if shadow is not None and not bool((shadow == labels.NEUTRAL).all()):
            return None
        return val


def _fold_inputs(ctx: PropagationContext) -> int:
    word = labels.NEUTRAL
    for s in ctx.input_shadows:
        if s is not None:
            word = labels.combine(word, labels.fold(s))
    return word


def _conservative(ctx: PropagationContext) -> list[np.ndarray]:
    word = _fold_inputs(ctx)
    return [labels.full_shadow(ctx.shapes[o], word) for o in ctx.node.outputs if o]


def _identity(ctx):
    return [ctx.shadow(0).reshape(ctx.out_shape())
            if ctx.shadow(0).shape != ctx.out_shape() else ctx.shadow(0).copy()]


def _binary(ctx):
    out = labels.broadcast_combine(ctx.shadow(0), ctx.shadow(1))
    return [np.broadcast_to(out, ctx.out_shape()).copy()]


def _mul(ctx):
    # forced-zero refinement: x * 0 is 0 whatever x was (NaN/Inf caveat
    # accepted in v1), so elements under a constant zero stay neutral
    out = labels.broadcast_combine(ctx.shadow(0), ctx.shadow(1))
    out = np.broadcast_to(out, ctx.out_shape()).copy()
    for i in (0, 1):
        const = ctx.clean_const(i)
        if const is not None:
            zero = np.broadcast_to(const == 0, ctx.out_shape())
            out[zero] = labels.NEUTRAL
    return [out]


def _ternary(ctx):
    out = labels.broadcast_combine(
        labels.broadcast_combine(ctx.shadow(0), ctx.shadow(1)), ctx.shadow(2))
    return [np.broadcast_to(out, ctx.out_shape()).copy()]


def _matmul_shadows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Output label = fold of the contracted row of A with the contracted
    column of B, with numpy matmul rank promotion."""
    squeeze_a = squeeze_b = False
    if a.ndim == 1:
        a, squeeze_a = a[None, :], True
    if b.ndim == 1:
        b, squeeze_b = b[:, None], True
    if a.shape[-1] != b.shape[-2]:
        raise RuleError(f"MatMul shadow: inner dimensions disagree ({a.shape} x {b.shape})")
    ra = labels.reduce_labels(a, axes=(-1,))  # (..., m)
    rb = labels.reduce_labels(b, axes=(-2,))  # (..., n)
    out = labels.broadcast_combine(ra[..., :, None], rb[..., None, :])
    if squeeze_a:
        out = out[..., 0, :]
    if squeeze_b:
        out = out[..., 0]
    return out


def _matmul(ctx):
    out = _matmul_shadows(ctx.shadow(0), ctx.shadow(1))
    return [out.reshape(ctx.out_shape())]


def _gemm(ctx):
    a, b = ctx.shadow(0), ctx.shadow(1)
    if ctx.node.attr("transA", 0):
        a = a.T
    if ctx.node.attr("transB", 0):
        b = b.T
    out = _matmul_shadows(a, b)
    if ctx.shadow(2) is not None:
        out = labels.broadcast_combine(out, ctx.shadow(2))
    return [np.broadcast_to(out, ctx.out_shape()).copy()]


def _conv(ctx):
    x, w = ctx.shadow(0), ctx.shadow(1)
    node = ctx.node
    strides, pads, dilations, group = kernels.conv_geometry(node, x.shape, w.shape)
    kernel = w.shape[2:]
    v = kernels._conv_windows(x, kernel, strides, pads, dilations, fill=labels.NEUTRAL)
    # fold the receptive field: all in-group channels and kernel taps
    cout = w.shape[0]
    n, _, ho, wo = v.shape[:4]
    out = np.empty((n, cout, ho, wo), dtype=np.uint64)
    cg_in, cg_out = x.shape[1] // group, cout // group
    for g in range(group):
        vg = v[:, g * cg_in:(g + 1) * cg_in]
        xg = labels.reduce_labels(vg, axes=(1, 4, 5))  # (n, ho, wo)
        wg = labels.reduce_labels(w[g * cg_out:(g + 1) * cg_out], axes=(1, 2, 3))  # (cg_out,)
        out[:, g * cg_out:(g + 1) * cg_out] = labels.broadcast_combine(
            xg[:, None], wg[None, :, None, None])
    if ctx.shadow(2) is not None:
        out = labels.broadcast_combine(out, ctx.shadow(2).reshape(1, cout, 1, 1))
    return [out]


def _reduction(ctx):
    x = ctx.shadow(0)
    node = ctx.node
    axes = None
    if len(ctx.node.inputs) > 1 and ctx.node.inputs[1]:
        val = ctx.clean_const(1)
        if val is None:
            return _conservative(ctx)  # tainted axes input
        axes = tuple(int(a) for a in np.atleast_1d(val))
    elif node.attr("axes") is not None:
        axes = tuple(int(a) for a in node.attr("axes"))
    keepdims = bool(node.attr("keepdims", 1))
    if axes is None or len(axes) == 0:
        if node.attr("noop_with_empty_axes", 0) and axes is not None:
            return [x.copy()]
        axes = tuple(range(x.ndim))
    out = labels.reduce_labels(x, axes=axes, keepdims=keepdims)
    return [np.asarray(out, dtype=np.uint64).reshape(ctx.out_shape())]


def _softmax(ctx):
    x = ctx.shadow(0)
    axis = int(ctx.node.attr("axis", -1))
    red = labels.reduce_labels(x, axes=(axis,), keepdims=True)
    return [labels.broadcast_combine(x, red)]


def _movement(op: str):
    """Data-movement rule: run the data kernel on the shadow itself when all
    movement parameters are statically known and neutral; else fold."""

    def rule(ctx):
        node = ctx.node
        resolved = [ctx.shadow(0)]
        for i in range(1, len(node.inputs)):
            if not node.inputs[i]:
                resolved.append(None)
                continue
            val = ctx.clean_const(i)
            if val is None:
                return _conservative(ctx)
            resolved.append(val)
        try:
            outs = kernels.KERNELS[op](node, resolved, None)
        except (kernels.KernelError, ValueError) as exc:
            raise RuleError(f"{node.op_type} shadow movement failed: {exc}") from exc
        return [np.asarray(o, dtype=np.uint64) for o in outs]

    return rule


def _concat(ctx):
    parts = [np.asarray(s, dtype=np.uint64) for s in ctx.input_shadows]
    return [np.concatenate(parts, axis=int(ctx.node.attr("axis", 0)))]


def _expand(ctx):
    if ctx.clean_const(1) is None:
        return _conservative(ctx)
    return [np.broadcast_to(ctx.shadow(0), ctx.out_shape()).copy()]


def _gather(ctx):
    data, ind = ctx.shadow(0), ctx.shadow(1)
    axis = int(ctx.node.attr("axis", 0)) % data.ndim
    idx = ctx.clean_const(1)
    if idx is not None:
        out = np.take(data, idx.astype(np.int64), axis=axis)
        return [out.reshape(ctx.out_shape())]
    # a tainted or random index could address any slice along the axis
    red = labels.reduce_labels(data, axes=(axis,))  # data shape minus axis
    red_exp = red.reshape(data.shape[:axis] + (1,) * ind.ndim + data.shape[axis + 1:])
    ind_exp = ind.reshape((1,) * axis + ind.shape + (1,) * (data.ndim - axis - 1))
    out = labels.broadcast_combine(red_exp, ind_exp)
    return [np.broadcast_to(out, ctx.out_shape()).copy()]


def _gather_elements(ctx):
    data, ind = ctx.shadow(0), ctx.shadow(1)
    axis = int(ctx.node.attr("axis", 0)) % data.ndim
    idx = ctx.clean_const(1)
    if idx is not None:
        idx = idx.astype(np.int64)
        idx = np.where(idx < 0, idx + data.shape[axis], idx)
        return [np.take_along_axis(data, idx, axis=axis)]
    red = labels.reduce_labels(data, axes=(axis,), keepdims=True)
    out = labels.broadcast_combine(np.broadcast_to(red, ind.shape), ind)
    return [out]


def _scatter_nd(ctx):
    data, ind, upd = ctx.shadow(0), ctx.shadow(1), ctx.shadow(2)
    idx = ctx.clean_const(1)
    if idx is not None:
        return [kernels.scatter_nd(data, idx, upd)]
    word = labels.combine(labels.fold(upd), labels.fold(ind))
    return [labels.broadcast_combine(data, np.uint64(word))]


def _quantize(ctx):
    x = ctx.shadow(0)
    # scale/zero-point depend on the global min/max, batch axis included
    word = labels.fold(x)
    scalar = labels.full_shadow((), word)
    return [labels.broadcast_combine(x, np.uint64(word)), scalar, scalar.copy()]


def _dequantize(ctx):
    out = labels.broadcast_combine(ctx.shadow(0), labels.fold(ctx.shadow(1)))
    if ctx.shadow(2) is not None:
        out = labels.broadcast_combine(out, labels.fold(ctx.shadow(2)))
    return [np.broadcast_to(out, ctx.out_shape()).copy()]


def _shape_like(ctx):
    # shapes are fixed at analysis time and unprotected by the threat model
    return [labels.neutral_shadow(ctx.out_shape())]


def _constant_of_shape(ctx):
    if ctx.clean_const(0) is None:
        return _conservative(ctx)
    return [labels.neutral_shadow(ctx.out_shape())]


def _random_source(ctx):
    return [labels.full_shadow(ctx.out_shape(), labels.RANDOM)]


RULES = {
    "Neg": _identity, "Relu": _identity, "Sigmoid": _identity,
    "Tanh": _identity, "Exp": _identity, "Sin": _identity, "Sqrt": _identity,
    "Cast": _identity, "Not": _identity,
    "Add": _binary, "Sub": _binary, "Div": _binary, "Mul": _mul,
    "Greater": _binary, "GreaterOrEqual": _binary, "Less": _binary,
    "LessOrEqual": _binary, "Equal": _binary, "And": _binary, "Or": _binary,
    "MatMul": _matmul, "Gemm": _gemm, "Conv": _conv,
    "ReduceSum": _reduction, "ReduceMax": _reduction, "ReduceMean": _reduction,
    "Softmax": _softmax,
    "Reshape": _movement("Reshape"), "Transpose": _movement("Transpose"),
    "Flatten": _movement("Flatten"), "Squeeze": _movement("Squeeze"),
    "Unsqueeze": _movement("Unsqueeze"), "Split": _movement("Split"),
    "Slice": _movement("Slice"),
    "Concat": _concat, "Expand": _expand,
    "Gather": _gather, "GatherElements": _gather_elements,
    "ScatterND": _scatter_nd,
    "Where": _ternary,
    "DynamicQuantizeLinear": _quantize, "DequantizeLinear": _dequantize,
    "Shape": _shape_like, "Size": _shape_like, "Constant": _shape_like,
    "ConstantOfShape": _constant_of_shape,
    "RandomNormal": _random_source, "RandomUniform": _random_source,
}

RULE_KINDS = {
    **{op: RuleKind.UNARY_ELEMENTWISE for op in
       ("Neg", "Relu", "Sigmoid", "Tanh", "Exp", "Sin", "Sqrt", "Cast", "Not")},
    **{op: RuleKind.BINARY_ELEMENTWISE for op in
       ("Add", "Sub", "Mul", "Div", "Greater", "GreaterOrEqual", "Less",
        "LessOrEqual", "Equal", "And", "Or")},
    **{op: RuleKind.REDUCTION for op in
       ("ReduceSum", "ReduceMax", "ReduceMean", "Softmax")},
    **{op: RuleKind.CONTRACTION for op in ("MatMul", "Gemm", "Conv")},
    **{op: RuleKind.DATA_MOVEMENT for op in
       ("Reshape", "Transpose", "Flatten", "Squeeze", "Unsqueeze", "Concat",
        "Split", "Slice", "Expand")},
    **{op: RuleKind.GATHER_LIKE for op in ("Gather", "GatherElements")},
    "ScatterND": RuleKind.SCATTER_LIKE,
    "Where": RuleKind.SELECT,
    **{op: RuleKind.QUANTIZE_LIKE for op in
       ("DynamicQuantizeLinear", "DequantizeLinear")},
    **{op: RuleKind.SHAPE_LIKE for op in
       ("Shape", "Size", "Constant", "ConstantOfShape")},
    **{op: RuleKind.RANDOM_SOURCE for op in ("RandomNormal", "RandomUniform")},
}


def propagate_node(ctx: PropagationContext, overrides=None) -> list[np.ndarray]:
    """Dispatch to the rule for ctx.node and sanity-check output shapes."""
    op = ctx.node.op_type
    table = RULES if not overrides else {**RULES, **overrides}
    rule = table.get(op)
    if rule is None:
        raise RuleError(f"no propagation rule for operator '{op}'")
    outs = rule(ctx)
    expected = [ctx.shapes[o] for o in ctx.node.outputs if o]
    got = [tuple(o.shape) for o in outs]
    if got != [tuple(e) for e in expected]:
        raise RuleError(
            f"{op}: shadow shapes {got} disagree with inferred shapes {expected}")
    return outs
