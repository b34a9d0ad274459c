"""Architectural backdoor construction: Get / Set / Steer graph injections.

The injected subgraph has two parts. The trigger detector gathers the
attacker's row of a cache-like tensor, sums a token-position prefix, and
compares the sum against a constant window, yielding a 0/1 scalar. The
signal-integration part then either reroutes batch rows of a target tensor
through a Gather + ScatterND multiplexer (Get steals the victim's row,
Set overwrites it with the attacker's) or adds a scaled steering vector to
the victim's row (Steer). With the trigger inactive every variant is an
exact self-copy, so the backdoored graph is bit-identical to the clean one.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import interp, ir
from .ir import GraphModel, NodeSpec


class ForgeError(ValueError):
    pass


@dataclass
class TriggerSpec:
    source_tensor: str
    attacker_batch_index: int = 0
    token_positions: tuple[int, ...] = (1, 2)
    trigger_const: float | None = None
    delta: float = 0.01
    token_axis: int = 2  # sequence axis of the cache-like source tensor

    def __post_init__(self):
        if self.delta <= 0:
            raise ForgeError("delta must be positive")
        if self.attacker_batch_index < 0:
            raise ForgeError("attacker index must be nonnegative")


@dataclass(frozen=True)
class Get:
    victim_index: int = 1


@dataclass(frozen=True)
class Set:
    victim_index: int = 1


@dataclass(frozen=True)
class Steer:
    steering_vector: np.ndarray = None
    scale: float = 1.0
    victim_index: int = 1
    target_tensor: str | None = None  # defaults to the plan's target


AttackKind = Get | Set | Steer


@dataclass
class InjectionPlan:
    trigger: TriggerSpec
    attack: AttackKind
    target_tensor: str

    def attack_name(self) -> str:
        return type(self.attack).__name__.lower()


def compute_trigger_constant(
    model: GraphModel,
    trigger_inputs: dict[str, np.ndarray],
    spec: TriggerSpec,
) -> float:
    """Sum of the attacker-row source activations at the trigger positions,
    from a single concrete forward pass."""
    trace = interp.execute(model, trigger_inputs, seed=0, trace=True)
    if spec.source_tensor not in trace:
        raise ForgeError(f"source tensor '{spec.source_tensor}' absent from trace")
    arr = trace[spec.source_tensor]
    row = np.take(arr, [spec.attacker_batch_index], axis=0)
    tok = np.take(row, list(spec.token_positions), axis=spec.token_axis)
    return float(np.sum(tok))


def _unique_prefix(model: GraphModel) -> str:
    names = set(model.initializers) | set(model.input_names())
    for node in model.nodes:
        names.update(node.outputs)
        names.add(node.name)
    k = 0
    while True:
        prefix = "bisb" if k == 0 else f"bisb{k}"
        if not any(n.startswith(prefix) for n in names if n):
            return prefix
        k += 1


def build_trigger_detector(
    spec: TriggerSpec, prefix: str = "bisb"
) -> tuple[list[NodeSpec], dict[str, np.ndarray], str]:
    """Detector nodes + constants; returns the 0/1 int64 scalar tensor name."""
    if spec.trigger_const is None:
        raise ForgeError("trigger constant not set (use compute_trigger_constant)")
    p = prefix
    inits = {
        f"{p}_batch_idx": np.array([spec.attacker_batch_index], dtype=np.int64),
        f"{p}_tok_idx": np.array(spec.token_positions, dtype=np.int64),
        f"{p}_lo": np.float32(spec.trigger_const - spec.delta).reshape(()),
        f"{p}_hi": np.float32(spec.trigger_const + spec.delta).reshape(()),
    }
    nodes = [
        NodeSpec("Gather", (spec.source_tensor, f"{p}_batch_idx"), (f"{p}_krow",),
                 {"axis": 0}, name=f"{p}_gather_batch"),
        NodeSpec("Gather", (f"{p}_krow", f"{p}_tok_idx"), (f"{p}_ktok",),
                 {"axis": spec.token_axis}, name=f"{p}_gather_tokens"),
        NodeSpec("ReduceSum", (f"{p}_ktok",), (f"{p}_sum",),
                 {"keepdims": 0}, name=f"{p}_sum_prefix"),
        NodeSpec("GreaterOrEqual", (f"{p}_sum", f"{p}_lo"), (f"{p}_gte",),
                 name=f"{p}_gte"),
        NodeSpec("LessOrEqual", (f"{p}_sum", f"{p}_hi"), (f"{p}_lte",),
                 name=f"{p}_lte"),
        NodeSpec("And", (f"{p}_gte", f"{p}_lte"), (f"{p}_and",), name=f"{p}_and"),
        NodeSpec("Cast", (f"{p}_and",), (f"{p}_trigger",), {"to": 7},
                 name=f"{p}_cast"),
    ]
    return nodes, inits, f"{p}_trigger"


def _mux_integration(
    raw: str, out: str, trigger: str, src_base: int, src_delta: int,
    scatter_index: int, prefix: str,
) -> tuple[list[NodeSpec], dict[str, np.ndarray]]:
    """Gather+ScatterND MUX: row[scatter_index] := row[src_base + t*src_delta]."""
    p = prefix
    inits = {
        f"{p}_src_base": np.int64(src_base).reshape(()),
        f"{p}_src_delta": np.int64(src_delta).reshape(()),
        f"{p}_dst_idx": np.array([scatter_index], dtype=np.int64),
    }
    nodes = [
        NodeSpec("Mul", (trigger, f"{p}_src_delta"), (f"{p}_off",),
                 name=f"{p}_mux_off"),
        NodeSpec("Add", (f"{p}_off", f"{p}_src_base"), (f"{p}_src_idx",),
                 name=f"{p}_mux_idx"),
        NodeSpec("Gather", (raw, f"{p}_src_idx"), (f"{p}_sel",), {"axis": 0},
                 name=f"{p}_mux_gather"),
        NodeSpec("ScatterND", (raw, f"{p}_dst_idx", f"{p}_sel"), (out,),
                 name=f"{p}_mux_scatter"),
    ]
    return nodes, inits


def build_get_integration(plan: InjectionPlan, raw: str, out: str, trigger: str,
                          prefix: str):
    a = plan.trigger.attacker_batch_index
    v = plan.attack.victim_index
    # trigger=1 selects the victim's row and writes it to the attacker's slot;
    # trigger=0 self-copies the attacker's own row
    return _mux_integration(raw, out, trigger, src_base=a, src_delta=v - a,
                            scatter_index=a, prefix=prefix)


def build_set_integration(plan: InjectionPlan, raw: str, out: str, trigger: str,
                          prefix: str):
    a = plan.trigger.attacker_batch_index
    v = plan.attack.victim_index
    # trigger=1 selects the attacker's row and overwrites the victim's slot
    return _mux_integration(raw, out, trigger, src_base=v, src_delta=a - v,
                            scatter_index=v, prefix=prefix)


def build_steer_integration(plan: InjectionPlan, raw: str, out: str, trigger: str,
                            prefix: str, target_shape: tuple[int, ...]):
    attack: Steer = plan.attack
    p = prefix
    vector = np.asarray(attack.steering_vector, dtype=np.float32)
    if vector.ndim != 1 or vector.shape[0] != target_shape[-1]:
        raise ForgeError(
            f"steering vector length {vector.shape} does not match target "
            f"last extent {target_shape[-1]}")
    mask_shape = (target_shape[0],) + (1,) * (len(target_shape) - 1)
    mask = np.zeros(mask_shape, dtype=np.float32)
    mask[plan_victim_index(plan)] = 1.0
    inits = {
        f"{p}_steer_vec": vector * np.float32(attack.scale),
        f"{p}_victim_mask": mask,
    }
    nodes = [
        NodeSpec("Cast", (trigger,), (f"{p}_trigf",), {"to": 1},
                 name=f"{p}_steer_cast"),
        NodeSpec("Mul", (f"{p}_trigf", f"{p}_steer_vec"), (f"{p}_term",),
                 name=f"{p}_steer_term"),
        NodeSpec("Mul", (f"{p}_term", f"{p}_victim_mask"), (f"{p}_masked",),
                 name=f"{p}_steer_mask"),
        NodeSpec("Add", (raw, f"{p}_masked"), (out,), name=f"{p}_steer_add"),
    ]
    return nodes, inits


def plan_victim_index(plan: InjectionPlan) -> int:
    return plan.attack.victim_index


def inject(model: GraphModel, plan: InjectionPlan) -> tuple[GraphModel, int]:
    """Insert the backdoor; returns (backdoored model, added node count)."""
    shapes = ir.infer_shapes(model)
    target = plan.attack.target_tensor if isinstance(plan.attack, Steer) and \
        plan.attack.target_tensor else plan.target_tensor
    if target not in shapes:
        raise ForgeError(f"target tensor '{target}' not found")
    if plan.trigger.source_tensor not in shapes:
        raise ForgeError(f"source tensor '{plan.trigger.source_tensor}' not found")
    if target == plan.trigger.source_tensor:
        raise ForgeError("target and trigger source must be distinct tensors")
    target_shape = shapes[target]
    source_shape = shapes[plan.trigger.source_tensor]
    if isinstance(plan.attack, (Get, Set)):
        if plan.attack.victim_index == plan.trigger.attacker_batch_index:
            raise ForgeError("victim and attacker batch indices must differ")
    seq_extent = source_shape[plan.trigger.token_axis % len(source_shape)]
    if any(not 0 <= t < seq_extent for t in plan.trigger.token_positions):
        raise ForgeError(
            f"token positions {plan.trigger.token_positions} outside sequence "
            f"extent {seq_extent}")
    if len(target_shape) < 1:
        raise ForgeError("target tensor must have a batch axis")
    if plan.trigger.attacker_batch_index >= target_shape[0]:
        raise ForgeError("attacker index outside the target's batch extent")
    if isinstance(plan.attack, Steer) and \
            not 0 <= plan.attack.victim_index < target_shape[0]:
        raise ForgeError("victim index outside the target's batch extent")

    prefix = _unique_prefix(model)
    producer = model.producer_of().get(target)
    if producer is None:
        raise ForgeError(f"target '{target}' is not produced by a node")
    raw = f"{prefix}_raw"

    det_nodes, det_inits, trigger_name = build_trigger_detector(plan.trigger, prefix)
    if isinstance(plan.attack, Get):
        int_nodes, int_inits = build_get_integration(plan, raw, target, trigger_name, prefix)
    elif isinstance(plan.attack, Set):
        int_nodes, int_inits = build_set_integration(plan, raw, target, trigger_name, prefix)
    else:
        int_nodes, int_inits = build_steer_integration(
            plan, raw, target, trigger_name, prefix, target_shape)

    nodes = list(model.nodes)
    old = nodes[producer]
    nodes[producer] = replace(
        old, outputs=tuple(raw if t == target else t for t in old.outputs))
    nodes.extend(det_nodes)
    nodes.extend(int_nodes)

    backdoored = GraphModel(
        inputs=list(model.inputs),
        outputs=list(model.outputs),
        initializers={**model.initializers, **det_inits, **int_inits},
        nodes=nodes,
        opset=model.opset,
        name=model.name,
    )
    ir.validate_structure(backdoored)
    diags = ir.validate_support(backdoored)
    if diags:
        raise ForgeError(f"backdoored model unsupported: {diags}")
    ir.infer_shapes(backdoored)
    return backdoored, len(det_nodes) + len(int_nodes)


def injected_node_names(model: GraphModel, backdoored: GraphModel) -> set[str]:
    base = {n.name for n in model.nodes}
    return {n.name for n in backdoored.nodes} - base


def manifest_dict(plan: InjectionPlan, clean_path: str, backdoored_path: str,
                  node_delta: int, golden_inputs: str | None = None,
                  golden_outputs: str | None = None) -> dict:
    return {
        "clean_model": clean_path,
        "backdoored_model": backdoored_path,
        "attack": plan.attack_name(),
        "trigger_const": plan.trigger.trigger_const,
        "delta": plan.trigger.delta,
        "node_delta": node_delta,
        "golden_inputs": golden_inputs,
        "golden_outputs": golden_outputs,
    }
