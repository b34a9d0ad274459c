"""Three-stage batch-isolation verifier.

Initialization populates input shadow tensors with one user label per batch
index (weights and shared inputs are neutral); propagation pushes labels
through the graph with the per-operator rules; verification compares every
batched output element against the single user label it is allowed to
carry. The result is either a Safe certificate or an itemized leak report.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import ir, kernels, labels, rules

log = logging.getLogger(__name__)

#: Max violations reported per output before truncation.
VIOLATION_CAP = 10

#: Ops through which statically-known values are folded (shape expressions
#: like Shape -> Concat -> Reshape targets); never random, output size capped.
_FOLD_OPS = frozenset({
    "Shape", "Size", "Constant", "ConstantOfShape", "Concat", "Gather",
    "Unsqueeze", "Squeeze", "Reshape", "Slice", "Cast", "Add", "Sub", "Mul",
    "Div", "Neg", "Transpose", "Flatten", "Expand", "Where", "Equal",
})
_FOLD_SIZE_CAP = 4096


class ConfigError(ValueError):
    pass


class CheckError(RuntimeError):
    """Checker failure, tagged with the stage that raised it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True)
class InputSpec:
    batch_axis: int | None = None
    shared: bool = False
    constant_like: bool = False


@dataclass(frozen=True)
class OutputSpec:
    batch_axis: int


@dataclass
class BatchingConfig:
    batch_size: int
    inputs: dict[str, InputSpec]
    outputs: dict[str, OutputSpec]
    dim_bindings: dict[str, int] = field(default_factory=dict)
    allow_random_outputs: bool = True
    fail_fast: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.batch_size > labels.MAX_USER:
            raise ConfigError(
                f"batch_size {self.batch_size} exceeds label capacity {labels.MAX_USER}")


def config_from_dict(doc: dict) -> BatchingConfig:
    """Parse and strictly validate the JSON check-config document."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    allowed = {"batch_size", "dim_bindings", "inputs", "outputs",
               "allow_random_outputs", "fail_fast"}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("batch_size", "inputs", "outputs"):
        if key not in doc:
            raise ConfigError(f"missing config key '{key}'")

    inputs = {}
    for name, spec in doc["inputs"].items():
        if not isinstance(spec, dict):
            raise ConfigError(f"input '{name}': spec must be an object")
        extra = set(spec) - {"batch_axis", "shared", "constant_like"}
        if extra:
            raise ConfigError(f"input '{name}': unknown keys {sorted(extra)}")
        if sum(k in spec for k in ("batch_axis", "shared", "constant_like")) != 1:
            raise ConfigError(
                f"input '{name}': exactly one of batch_axis/shared/constant_like required")
        if "batch_axis" in spec:
            inputs[name] = InputSpec(batch_axis=int(spec["batch_axis"]))
        elif spec.get("shared") is True:
            inputs[name] = InputSpec(shared=True)
        elif spec.get("constant_like") is True:
            inputs[name] = InputSpec(constant_like=True)
        else:
            raise ConfigError(f"input '{name}': shared/constant_like must be true")

    outputs = {}
    for name, spec in doc["outputs"].items():
        if set(spec) != {"batch_axis"}:
            raise ConfigError(f"output '{name}': only batch_axis is allowed")
        outputs[name] = OutputSpec(batch_axis=int(spec["batch_axis"]))

    bindings = doc.get("dim_bindings", {})
    if not isinstance(bindings, dict):
        raise ConfigError("dim_bindings must be an object")
    return BatchingConfig(
        batch_size=int(doc["batch_size"]),
        inputs=inputs,
        outputs=outputs,
        dim_bindings={k: int(v) for k, v in bindings.items()},
        allow_random_outputs=bool(doc.get("allow_random_outputs", True)),
        fail_fast=bool(doc.get("fail_fast", False)),
    )


@dataclass(frozen=True)
class Violation:
    output: str
    index: tuple[int, ...]
    label: int
    expected_user: int | None

    def to_dict(self) -> dict:
        return {
            "output": self.output,
            "index": list(self.index),
            "label": labels.render(self.label),
            "expected": f"u{self.expected_user}" if self.expected_user else "e",
        }


@dataclass
class LeakReport:
    violations: list[Violation]
    first_tainted_node: str | None
    truncated: bool = False


@dataclass
class Verdict:
    safe: bool
    model: str
    batch_size: int
    report: LeakReport | None = None
    stats: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return "Safe" if self.safe else "Leak"

    def to_dict(self) -> dict:
        doc = {
            "verdict": self.verdict,
            "model": self.model,
            "batch_size": self.batch_size,
            "violations": [],
            "first_tainted_node": None,
            "stats": self.stats,
        }
        if self.report is not None:
            doc["violations"] = [v.to_dict() for v in self.report.violations]
            doc["first_tainted_node"] = self.report.first_tainted_node
            doc["truncated"] = self.report.truncated
        return doc


def node_display_name(node: ir.NodeSpec, index: int) -> str:
    return node.name or f"{node.op_type}#{index}"


def initialize_shadows(model: ir.GraphModel, config: BatchingConfig) -> dict[str, np.ndarray]:
    """Per-user labels on batched inputs; neutral on weights and shared inputs."""
    shadows: dict[str, np.ndarray] = {}
    batch = config.batch_size
    declared = set(config.inputs)
    graph_inputs = set(model.input_names())
    stray = declared - graph_inputs
    if stray:
        raise ConfigError(f"config declares unknown inputs: {sorted(stray)}")
    for spec in model.inputs:
        cfg = config.inputs.get(spec.name)
        if cfg is None:
            raise ConfigError(f"missing input spec for '{spec.name}'")
        shape = tuple(spec.shape)
        if cfg.batch_axis is not None:
            axis = cfg.batch_axis % len(shape) if shape else 0
            if not shape or shape[axis] != batch:
                raise ConfigError(
                    f"input '{spec.name}': batch axis {axis} extent "
                    f"{shape[axis] if shape else None} != batch size {batch}")
            words = np.array([labels.from_user(b + 1) for b in range(batch)],
                             dtype=np.uint64)
            view = words.reshape([-1 if a == axis else 1 for a in range(len(shape))])
            shadows[spec.name] = np.broadcast_to(view, shape).copy()
        else:
            if cfg.shared:
                log.warning(
                    "input '%s' declared shared: treated as non-secret (neutral labels)",
                    spec.name)
            shadows[spec.name] = labels.neutral_shadow(shape)
    for name, value in model.initializers.items():
        shadows[name] = labels.neutral_shadow(value.shape)
    return shadows


def propagate_graph(
    model: ir.GraphModel,
    shadows: dict[str, np.ndarray],
    shapes: dict[str, tuple] | None = None,
    fail_fast: bool = False,
    rule_overrides=None,
) -> tuple[dict[str, np.ndarray], str | None, bool]:
    """Push labels through every node in topological order.

    Returns (shadow map, first node producing a multi-user element or None,
    whether propagation halted early under fail_fast).
    """
    shapes = shapes if shapes is not None else ir.infer_shapes(model)
    shadows = dict(shadows)
    const_values: dict[str, np.ndarray] = dict(model.initializers)
    first_tainted: str | None = None
    rng = np.random.default_rng(0)  # only consulted by folded kernels, never random ops

    for idx in ir.topological_order(model):
        node = model.nodes[idx]
        ctx = rules.PropagationContext(
            node=node,
            input_shadows=[shadows[t] if t else None for t in node.inputs],
            const_values=const_values,
            shapes=shapes,
        )
        try:
            outs = rules.propagate_node(ctx, overrides=rule_overrides)
        except (rules.RuleError, kernels.KernelError, ValueError) as exc:
            raise CheckError(
                "propagate", f"node '{node_display_name(node, idx)}': {exc}") from exc
        out_names = [t for t in node.outputs if t]
        for name, shadow in zip(out_names, outs):
            shadows[name] = shadow
        _fold_constants(node, const_values, rng)
        if first_tainted is None and any(labels.any_multi_user(s) for s in outs):
            first_tainted = node_display_name(node, idx)
            if fail_fast:
                return shadows, first_tainted, True
    return shadows, first_tainted, False


def _fold_constants(node: ir.NodeSpec, const_values: dict[str, np.ndarray], rng) -> None:
    if node.op_type not in _FOLD_OPS:
        return
    resolved = []
    for t in node.inputs:
        if not t:
            resolved.append(None)
        elif t in const_values:
            resolved.append(const_values[t])
        else:
            return
    try:
        outs = kernels.KERNELS[node.op_type](node, resolved, rng)
    except Exception:
        return  # propagation rules handle the error path; folding is best-effort
    for name, value in zip(node.outputs, outs):
        if name and value.size <= _FOLD_SIZE_CAP:
            const_values[name] = value


def verify_outputs(
    shadows: dict[str, np.ndarray],
    config: BatchingConfig,
    output_names: list[str],
) -> tuple[list[Violation], bool]:
    """Collect violating output elements; returns (violations, truncated)."""
    violations: list[Violation] = []
    truncated = False
    allow_random = config.allow_random_outputs
    stray = set(config.outputs) - set(output_names)
    if stray:
        raise ConfigError(f"config declares unknown outputs: {sorted(stray)}")
    for name in output_names:
        if name not in shadows:
            raise ConfigError(f"output '{name}' missing from shadow map")
        arr = np.asarray(shadows[name], dtype=np.uint64)
        neutral, random_only, single, _multi = labels.states(arr)
        flags = arr & labels.FLAG_MASK
        user = (arr >> np.uint64(24)) & labels.MAX_MASK
        spec = config.outputs.get(name)
        if spec is not None:
            axis = spec.batch_axis % max(arr.ndim, 1)
            if arr.ndim == 0 or arr.shape[axis] != config.batch_size:
                raise ConfigError(
                    f"output '{name}': batch axis {spec.batch_axis} extent does not "
                    f"match batch size {config.batch_size}")
            expect = np.arange(1, config.batch_size + 1, dtype=np.uint64)
            expect = expect.reshape([-1 if a == axis else 1 for a in range(arr.ndim)])
            ok_single = single & (user == expect) & (allow_random | (flags == 0))
        else:
            # output not declared batched: must not depend on any user
            ok_single = np.zeros(arr.shape, dtype=bool)
        ok = neutral | ok_single | (random_only & allow_random)
        bad = np.argwhere(~ok)
        if len(bad) > VIOLATION_CAP:
            truncated = True
        for index in bad[:VIOLATION_CAP]:
            index = tuple(int(i) for i in index)
            expected = index[axis] + 1 if spec is not None else None
            violations.append(Violation(
                output=name, index=index,
                label=int(arr[index]), expected_user=expected))
    return violations, truncated


def check(model: ir.GraphModel, config: BatchingConfig, rule_overrides=None) -> Verdict:
    """Full pipeline: bind, validate, initialize, propagate, verify."""
    start = time.perf_counter()
    if config.dim_bindings or not all(s.is_concrete for s in model.inputs):
        try:
            model = ir.bind_dimensions(model, config.dim_bindings)
        except ir.GraphError as exc:
            raise CheckError("bind", str(exc)) from exc
    diags = ir.validate_support(model)
    if diags:
        raise CheckError("validate", "; ".join(diags))
    try:
        shapes = ir.infer_shapes(model)
    except (ir.GraphError, kernels.KernelError) as exc:
        raise CheckError("shapes", str(exc)) from exc
    try:
        shadows = initialize_shadows(model, config)
    except ConfigError as exc:
        raise CheckError("initialize", str(exc)) from exc
    shadows, first_tainted, halted = propagate_graph(
        model, shadows, shapes=shapes, fail_fast=config.fail_fast,
        rule_overrides=rule_overrides)
    stats = {"nodes": len(model.nodes)}
    if halted:
        stats["seconds"] = round(time.perf_counter() - start, 6)
        report = LeakReport(violations=[], first_tainted_node=first_tainted)
        return Verdict(safe=False, model=model.name,
                       batch_size=config.batch_size, report=report, stats=stats)
    try:
        violations, truncated = verify_outputs(shadows, config, model.output_names())
    except ConfigError as exc:
        raise CheckError("verify", str(exc)) from exc
    stats["seconds"] = round(time.perf_counter() - start, 6)
    if not violations:
        return Verdict(safe=True, model=model.name,
                       batch_size=config.batch_size, stats=stats)
    report = LeakReport(violations=violations, first_tainted_node=first_tainted,
                        truncated=truncated)
    return Verdict(safe=False, model=model.name,
                   batch_size=config.batch_size, report=report, stats=stats)
