"""Reference concrete executor, non-interference probe, and fuzz harness.

The executor runs the supported operator subset with the numpy kernels,
bit-reproducibly for a fixed (model, inputs, seed). The probe brute-forces
the non-interference property on deterministic graphs: perturbing one
user's batch slice must not change any other user's output slice, compared
bit-exactly. The fuzz harness generates random well-shaped graphs and hunts
for (checker says Safe, probe finds interference) soundness counterexamples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import ir, kernels
from .checker import BatchingConfig, InputSpec, OutputSpec, check
from .ir import GraphModel, NodeSpec, TensorSpec


class ExecutionError(RuntimeError):
    pass


def execute(
    model: GraphModel,
    inputs: dict[str, np.ndarray],
    seed: int = 0,
    trace: bool = False,
) -> dict[str, np.ndarray]:
    """Run the graph; returns outputs (or every tensor when trace=True)."""
    env: dict[str, np.ndarray] = dict(model.initializers)
    for spec in model.inputs:
        if spec.name not in inputs:
            raise ExecutionError(f"missing input '{spec.name}'")
        arr = np.asarray(inputs[spec.name])
        if not spec.is_concrete:
            raise ExecutionError(f"input '{spec.name}' has unbound shape {spec.shape}")
        if tuple(arr.shape) != tuple(spec.shape):
            raise ExecutionError(
                f"input '{spec.name}': shape {arr.shape} != declared {tuple(spec.shape)}")
        if arr.dtype != spec.dtype:
            raise ExecutionError(
                f"input '{spec.name}': dtype {arr.dtype} != declared {spec.dtype}")
        env[spec.name] = arr
    extra = set(inputs) - {s.name for s in model.inputs}
    if extra:
        raise ExecutionError(f"unexpected inputs: {sorted(extra)}")

    rng = np.random.default_rng(seed)
    for idx in ir.topological_order(model):
        node = model.nodes[idx]
        kernel = kernels.KERNELS.get(node.op_type)
        if kernel is None:
            raise ExecutionError(f"unsupported operator '{node.op_type}'")
        args = [env[t] if t else None for t in node.inputs]
        try:
            outs = kernel(node, args, rng)
        except (kernels.KernelError, ValueError, IndexError) as exc:
            raise ExecutionError(
                f"node '{node.name or node.op_type}#{idx}': {exc}") from exc
        for name, value in zip(node.outputs, outs):
            if name:
                env[name] = np.asarray(value)
    if trace:
        return env
    missing = [n for n in model.output_names() if n not in env]
    if missing:
        raise ExecutionError(f"outputs never produced: {missing}")
    return {n: env[n] for n in model.output_names()}


# -- JSON tensor files: [{name, dtype, shape, data:[...]}, ...] --


def tensors_to_json(tensors: dict[str, np.ndarray]) -> list[dict]:
    docs = []
    for name, arr in tensors.items():
        data = arr.astype(int) if arr.dtype == np.bool_ else arr
        docs.append({
            "name": name,
            "dtype": str(arr.dtype),
            "shape": list(arr.shape),
            "data": data.reshape(-1).tolist(),
        })
    return docs


def tensors_from_json(docs: list[dict]) -> dict[str, np.ndarray]:
    out = {}
    for doc in docs:
        arr = np.array(doc["data"], dtype=np.dtype(doc["dtype"]))
        out[doc["name"]] = arr.reshape(doc["shape"])
    return out


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "w") as fh:
        json.dump(tensors_to_json(tensors), fh, indent=1)


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        return tensors_from_json(json.load(fh))


# -- non-interference probe --


@dataclass(frozen=True)
class Witness:
    trial: int
    perturbed_user: int  # j: whose input slice was re-randomized (0-based)
    observed_user: int  # i: whose output slice changed
    output: str
    index: tuple[int, ...]
    before: float
    after: float


@dataclass
class ProbeResult:
    interfered: bool
    witness: Witness | None
    trials_run: int
    discarded: int = 0


def _draw(rng: np.random.Generator, spec: TensorSpec) -> np.ndarray:
    shape = tuple(spec.shape)
    if spec.dtype.kind == "f":
        return rng.standard_normal(shape).astype(spec.dtype)
    if spec.dtype == np.bool_:
        return rng.integers(0, 2, shape).astype(np.bool_)
    return rng.integers(0, 4, shape).astype(spec.dtype)


def _batch_slice(axis: int, b: int):
    return (slice(None),) * axis + (b,)


def probe_noninterference(
    model: GraphModel,
    config: BatchingConfig,
    seed: int = 0,
    trials: int = 20,
    base_inputs: dict[str, np.ndarray] | None = None,
) -> ProbeResult:
    """Brute-force interference search over `trials` random input draws.

    With `base_inputs` the baseline batch is fixed (e.g. one carrying a
    backdoor trigger) and only the per-user perturbations are random.
    """
    random_ops = sorted({n.op_type for n in model.nodes if n.op_type in kernels.RANDOM_OPS})
    if random_ops:
        raise ExecutionError(
            f"probe requires a deterministic graph; found {random_ops}")
    if config.dim_bindings or not all(s.is_concrete for s in model.inputs):
        model = ir.bind_dimensions(model, config.dim_bindings)
    batch = config.batch_size
    rng = np.random.default_rng(seed)
    batched = [(s, config.inputs[s.name].batch_axis) for s in model.inputs
               if config.inputs.get(s.name) and config.inputs[s.name].batch_axis is not None]
    discarded = 0
    trials_run = 0

    for trial in range(trials):
        trial_inputs = (dict(base_inputs) if base_inputs is not None
                        else {s.name: _draw(rng, s) for s in model.inputs})
        base_out = execute(model, trial_inputs, seed=0)
        trials_run += 1
        if any(v.dtype.kind == "f" and not np.isfinite(v).all() for v in base_out.values()):
            discarded += 1
            continue
        candidates = []
        for j in range(batch):
            perturbed = dict(trial_inputs)
            for spec, axis in batched:
                fresh = _draw(rng, spec)
                arr = trial_inputs[spec.name].copy()
                sl = _batch_slice(axis % len(spec.shape), j)
                arr[sl] = fresh[sl]
                perturbed[spec.name] = arr
            new_out = execute(model, perturbed, seed=0)
            for name, spec in config.outputs.items():
                before_full, after_full = base_out[name], new_out[name]
                axis = spec.batch_axis % before_full.ndim
                for i in range(batch):
                    if i == j:
                        continue
                    sl = _batch_slice(axis, i)
                    before = np.atleast_1d(before_full[sl])
                    after = np.atleast_1d(after_full[sl])
                    if before.tobytes() != after.tobytes():
                        diff = np.argwhere(before != after)
                        first = (tuple(int(v) for v in diff[0]) if len(diff)
                                 else (0,) * before.ndim)
                        candidates.append(Witness(
                            trial=trial, perturbed_user=j, observed_user=i,
                            output=name, index=first,
                            before=float(before[first]), after=float(after[first]),
                        ))
        if candidates:
            best = min(candidates, key=lambda w: (w.observed_user, w.perturbed_user, w.output))
            return ProbeResult(True, best, trials_run, discarded)
    return ProbeResult(False, None, trials_run, discarded)


# -- random graph generation --

#: Generator step kinds; "safe" ones cannot mix batch entries, the rest can.
DEFAULT_OP_POOL = (
    "unary", "binary", "matmul_feat", "softmax_feat", "reduce_feat",
    "mix_batch", "softmax_batch", "reduce_batch", "permute_batch", "dynquant",
)
ELEMENTWISE_POOL = ("unary", "binary")

_UNARY_OPS = ("Relu", "Sigmoid", "Tanh", "Neg")
_BINARY_OPS = ("Add", "Sub", "Mul")


@dataclass
class _GenState:
    nodes: list[NodeSpec] = field(default_factory=list)
    initializers: dict[str, np.ndarray] = field(default_factory=dict)
    tensors: list[tuple[str, tuple[int, ...]]] = field(default_factory=list)
    counter: int = 0

    def fresh(self, prefix: str = "t") -> str:
        self.counter += 1
        return f"{prefix}{self.counter}"


def random_graph(
    seed: int,
    max_depth: int = 8,
    batch: int = 2,
    op_pool: tuple[str, ...] = DEFAULT_OP_POOL,
) -> tuple[GraphModel, BatchingConfig]:
    """Well-shaped random graph over the deterministic op pool, plus its config."""
    rng = np.random.default_rng(seed)
    feat = int(rng.integers(3, 6))
    st = _GenState()
    n_inputs = int(rng.integers(1, 3))
    inputs = [TensorSpec(f"x{i}", np.dtype("float32"), (batch, feat))
              for i in range(n_inputs)]
    for spec in inputs:
        st.tensors.append((spec.name, tuple(spec.shape)))

    def pick(shape_pred):
        options = [t for t in st.tensors if shape_pred(t[1])]
        return options[int(rng.integers(0, len(options)))] if options else None

    def add(op, node_inputs, out_shape, attrs=None, n_out=1, prefix="t"):
        outs = tuple(st.fresh(prefix) for _ in range(n_out))
        st.nodes.append(NodeSpec(op, tuple(node_inputs), outs, attrs or {},
                                 name=f"{op}_{st.counter}"))
        st.tensors.append((outs[0], out_shape))
        return outs

    def init_tensor(arr):
        name = st.fresh("w")
        st.initializers[name] = arr
        return name

    depth = int(rng.integers(1, max_depth + 1))
    for _ in range(depth):
        kind = op_pool[int(rng.integers(0, len(op_pool)))]
        full = lambda s: s == (batch, feat)
        if kind == "unary":
            src = pick(lambda s: True)
            add(_UNARY_OPS[int(rng.integers(0, len(_UNARY_OPS)))], [src[0]], src[1])
        elif kind == "binary":
            a = pick(lambda s: True)
            b = pick(lambda s: len(s) == len(a[1]))
            if b is None:
                continue
            out = tuple(np.broadcast_shapes(a[1], b[1]))
            add(_BINARY_OPS[int(rng.integers(0, len(_BINARY_OPS)))], [a[0], b[0]], out)
        elif kind == "matmul_feat":
            src = pick(lambda s: len(s) == 2 and s[1] == feat)
            if src is None:
                continue
            w = init_tensor((rng.standard_normal((feat, feat)) * 0.6).astype(np.float32))
            add("MatMul", [src[0], w], (src[1][0], feat))
        elif kind == "mix_batch":
            src = pick(full)
            if src is None:
                continue
            w = init_tensor((rng.standard_normal((batch, batch)) * 0.6).astype(np.float32))
            add("MatMul", [w, src[0]], (batch, feat))
        elif kind in ("softmax_feat", "softmax_batch"):
            src = pick(full)
            if src is None:
                continue
            add("Softmax", [src[0]], src[1], {"axis": 1 if kind == "softmax_feat" else 0})
        elif kind == "reduce_batch":
            src = pick(full)
            if src is None:
                continue
            axes = init_tensor(np.array([0], dtype=np.int64))
            add("ReduceSum", [src[0], axes], (1, feat), {"keepdims": 1})
        elif kind == "reduce_feat":
            src = pick(full)
            if src is None:
                continue
            axes = init_tensor(np.array([1], dtype=np.int64))
            add("ReduceSum", [src[0], axes], (src[1][0], 1), {"keepdims": 1})
        elif kind == "permute_batch":
            src = pick(full)
            if src is None:
                continue
            perm = rng.permutation(batch).astype(np.int64)
            idx = init_tensor(perm)
            add("Gather", [src[0], idx], (batch, feat), {"axis": 0})
        elif kind == "dynquant":
            src = pick(full)
            if src is None:
                continue
            q, scale, zp = (st.fresh("q"), st.fresh("qs"), st.fresh("qz"))
            # quantized/scale tensors stay out of the pickable pool: the pool
            # is float32-only so later ops compose without dtype promotion
            st.nodes.append(NodeSpec("DynamicQuantizeLinear", (src[0],),
                                     (q, scale, zp), {}, name=f"dql_{st.counter}"))
            add("DequantizeLinear", [q, scale, zp], src[1])
        else:
            raise ValueError(f"unknown generator op kind '{kind}'")

    final = None
    for name, shape in reversed(st.tensors):
        if shape == (batch, feat):
            final = name
            break
    if final is None or final in {s.name for s in inputs}:
        (final,) = add("Add", [inputs[0].name, inputs[0].name], (batch, feat))

    # route the chosen tensor to a dedicated output name
    st.nodes.append(NodeSpec("Relu", (final,), ("out",), {}, name="out_node"))
    model = GraphModel(
        inputs=inputs,
        outputs=[TensorSpec("out", np.dtype("float32"), (batch, feat))],
        initializers=st.initializers,
        nodes=st.nodes,
        name=f"fuzz_{seed}",
    )
    ir.validate_structure(model)
    config = BatchingConfig(
        batch_size=batch,
        inputs={s.name: InputSpec(batch_axis=0) for s in inputs},
        outputs={"out": OutputSpec(batch_axis=0)},
    )
    return model, config


# -- soundness fuzzing --


@dataclass
class FuzzSummary:
    graphs: int
    safe: int
    leak: int
    counterexamples: list[dict] = field(default_factory=list)

    @property
    def sound(self) -> bool:
        return not self.counterexamples


def fuzz_soundness(
    n_graphs: int,
    trials_per_graph: int,
    seed: int = 0,
    max_depth: int = 8,
    op_pool: tuple[str, ...] = DEFAULT_OP_POOL,
    rule_overrides=None,
) -> FuzzSummary:
    """Hunt for graphs the checker certifies Safe but the probe falsifies."""
    summary = FuzzSummary(graphs=n_graphs, safe=0, leak=0)
    for k in range(n_graphs):
        graph_seed = seed * 1_000_003 + k
        model, config = random_graph(graph_seed, max_depth=max_depth, op_pool=op_pool)
        verdict = check(model, config, rule_overrides=rule_overrides)
        if not verdict.safe:
            summary.leak += 1
            continue
        summary.safe += 1
        probe = probe_noninterference(model, config, seed=graph_seed,
                                      trials=trials_per_graph)
        if probe.interfered:
            summary.counterexamples.append({
                "graph_seed": graph_seed,
                "witness": vars(probe.witness),
            })
    return summary
