"""Fixture recipes: graph definition plus an independent numpy forward pass.

Each builder returns a Fixture whose golden outputs are computed here, not by
the analysis package that will later consume the files; agreement within
tolerance is the cross-implementation check.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import wire

F32 = np.dtype("float32")


@dataclass
class FixtureRecipe:
    name: str
    builder: str  # mlp | toy_attention_kcache | dynquant_mlp | batch_mixing_reduce
    dims: dict = field(default_factory=dict)
    seed: int = 0


@dataclass
class Fixture:
    recipe: FixtureRecipe
    model_bytes: bytes
    inputs: dict[str, np.ndarray]
    outputs: dict[str, np.ndarray]  # graph outputs first, then named intermediates
    graph_outputs: list[str]
    config: dict  # batching config for the checker
    expected_verdict: str


def _weights(rng, *shape):
    return (rng.standard_normal(shape) * 0.25).astype(np.float32)


def _draw_input(rng, shape):
    return rng.standard_normal(shape).astype(np.float32)


def build_mlp(recipe: FixtureRecipe) -> Fixture:
    batch = recipe.dims.get("batch", 2)
    hidden = recipe.dims.get("hidden", 8)
    rng = np.random.default_rng(recipe.seed)
    w1, b1 = _weights(rng, 4, hidden), _weights(rng, hidden)
    w2, b2 = _weights(rng, hidden, 3), _weights(rng, 3)
    nodes = [
        wire.node("MatMul", ["x", "W1"], ["h0"], name="fc1"),
        wire.node("Add", ["h0", "b1"], ["h1"], name="fc1_bias"),
        wire.node("Relu", ["h1"], ["h2"], name="act1"),
        wire.node("MatMul", ["h2", "W2"], ["h3"], name="fc2"),
        wire.node("Add", ["h3", "b2"], ["out"], name="fc2_bias"),
    ]
    blob = wire.model(
        recipe.name, nodes,
        [wire.value_info("x", F32, (batch, 4))],
        [wire.value_info("out", F32, (batch, 3))],
        {"W1": w1, "b1": b1, "W2": w2, "b2": b2})
    x = _draw_input(rng, (batch, 4))
    out = np.maximum(x @ w1 + b1, 0) @ w2 + b2
    return Fixture(recipe, blob, {"x": x}, {"out": out}, ["out"],
                   _config(batch, {"x": 0}, {"out": 0}), "Safe")


def build_toy_attention_kcache(recipe: FixtureRecipe) -> Fixture:
    batch = recipe.dims.get("batch", 2)
    seq = recipe.dims.get("seq", 4)
    d_model = recipe.dims.get("hidden", 8)
    heads = recipe.dims.get("heads", 2)
    vocab = recipe.dims.get("vocab", 6)
    dk = d_model // heads
    rng = np.random.default_rng(recipe.seed)
    wq, wk, wv = (_weights(rng, d_model, d_model) for _ in range(3))
    wo = _weights(rng, d_model, vocab)
    inits = {
        "Wq": wq, "Wk": wk, "Wv": wv, "Wo": wo,
        "head_shape": np.array([batch, seq, heads, dk], dtype=np.int64),
        "merge_shape": np.array([batch, seq, d_model], dtype=np.int64),
        "inv_sqrt_dk": np.float32(1.0 / np.sqrt(dk)).reshape(()),
    }

    def proj(tag, out_name):
        return [
            wire.node("MatMul", ["x", f"W{tag}"], [f"{tag}_flat"], name=f"proj_{tag}"),
            wire.node("Reshape", [f"{tag}_flat", "head_shape"], [f"{tag}_heads"],
                      name=f"split_{tag}"),
            wire.node("Transpose", [f"{tag}_heads"], [out_name],
                      name=f"perm_{tag}", perm=(0, 2, 1, 3)),
        ]

    nodes = proj("q", "q_t") + proj("k", "k_cache") + proj("v", "v_t") + [
        wire.node("Transpose", ["k_cache"], ["k_T"], name="perm_scores",
                  perm=(0, 1, 3, 2)),
        wire.node("MatMul", ["q_t", "k_T"], ["scores_raw"], name="scores"),
        wire.node("Mul", ["scores_raw", "inv_sqrt_dk"], ["scores"], name="scale"),
        wire.node("Softmax", ["scores"], ["attn"], name="softmax", axis=-1),
        wire.node("MatMul", ["attn", "v_t"], ["ctx_heads"], name="context"),
        wire.node("Transpose", ["ctx_heads"], ["ctx_perm"], name="perm_ctx",
                  perm=(0, 2, 1, 3)),
        wire.node("Reshape", ["ctx_perm", "merge_shape"], ["ctx"], name="merge"),
        wire.node("MatMul", ["ctx", "Wo"], ["logits"], name="project_out"),
    ]
    blob = wire.model(
        recipe.name, nodes,
        [wire.value_info("x", F32, (batch, seq, d_model))],
        [wire.value_info("logits", F32, (batch, seq, vocab))],
        inits)

    x = _draw_input(rng, (batch, seq, d_model))
    # independent forward pass via einsum over explicit head axes
    def heads_view(m):
        return (x @ m).reshape(batch, seq, heads, dk)

    q = heads_view(wq)
    k = heads_view(wk)
    v = heads_view(wv)
    scores = np.einsum("bshd,bthd->bhst", q, k).astype(np.float32)
    scores *= np.float32(1.0 / np.sqrt(dk))
    e = np.exp(scores - scores.max(axis=-1, keepdims=True))
    attn = (e / e.sum(axis=-1, keepdims=True)).astype(np.float32)
    ctx = np.einsum("bhst,bthd->bshd", attn, v).astype(np.float32)
    logits = ctx.reshape(batch, seq, d_model) @ wo
    return Fixture(recipe, blob, {"x": x}, {"logits": logits}, ["logits"],
                   _config(batch, {"x": 0}, {"logits": 0}), "Safe")


def build_dynquant_mlp(recipe: FixtureRecipe) -> Fixture:
    batch = recipe.dims.get("batch", 2)
    hidden = recipe.dims.get("hidden", 8)
    rng = np.random.default_rng(recipe.seed)
    w1, w2 = _weights(rng, 4, hidden), _weights(rng, hidden, 3)
    nodes = [
        wire.node("MatMul", ["x", "W1"], ["h0"], name="fc1"),
        wire.node("Relu", ["h0"], ["h1"], name="act1"),
        wire.node("DynamicQuantizeLinear", ["h1"], ["q", "scale", "zp"],
                  name="quantize"),
        wire.node("DequantizeLinear", ["q", "scale", "zp"], ["h2"],
                  name="dequantize"),
        wire.node("MatMul", ["h2", "W2"], ["out"], name="fc2"),
    ]
    blob = wire.model(
        recipe.name, nodes,
        [wire.value_info("x", F32, (batch, 4))],
        [wire.value_info("out", F32, (batch, 3))],
        {"W1": w1, "W2": w2})
    x = _draw_input(rng, (batch, 4))
    h = np.maximum(x @ w1, 0)
    # quantization per the operator definition: range includes zero, uint8,
    # round half to even
    rmin = min(float(h.min()), 0.0)
    rmax = max(float(h.max()), 0.0)
    scale = np.float32((rmax - rmin) / 255.0)
    if scale == 0:
        scale = np.float32(1.0)
    zp = np.uint8(np.clip(np.rint(-rmin / float(scale)), 0, 255))
    q = np.clip(np.rint(h / scale) + float(zp), 0, 255).astype(np.uint8)
    deq = (q.astype(np.float32) - np.float32(zp)) * scale
    out = deq @ w2
    # q and zp are intermediates exported for exact integer comparison
    return Fixture(recipe, blob, {"x": x},
                   {"out": out, "q": q, "zp": zp.reshape(())}, ["out"],
                   _config(batch, {"x": 0}, {"out": 0}),
                   "Leak" if batch > 1 else "Safe")


def build_batch_mixing_reduce(recipe: FixtureRecipe) -> Fixture:
    batch = recipe.dims.get("batch", 2)
    rng = np.random.default_rng(recipe.seed)
    nodes = [
        wire.node("ReduceMean", ["x", "batch_axis"], ["mean"], name="batch_mean",
                  keepdims=1),
        wire.node("Sub", ["x", "mean"], ["out"], name="center"),
    ]
    blob = wire.model(
        recipe.name, nodes,
        [wire.value_info("x", F32, (batch, 4))],
        [wire.value_info("out", F32, (batch, 4))],
        {"batch_axis": np.array([0], dtype=np.int64)})
    x = _draw_input(rng, (batch, 4))
    out = x - x.mean(axis=0, keepdims=True, dtype=np.float32).astype(np.float32)
    return Fixture(recipe, blob, {"x": x}, {"out": out}, ["out"],
                   _config(batch, {"x": 0}, {"out": 0}),
                   "Leak" if batch > 1 else "Safe")


def _config(batch, inputs, outputs):
    return {
        "batch_size": batch,
        "inputs": {k: {"batch_axis": v} for k, v in inputs.items()},
        "outputs": {k: {"batch_axis": v} for k, v in outputs.items()},
    }


BUILDERS: dict[str, Callable[[FixtureRecipe], Fixture]] = {
    "mlp": build_mlp,
    "toy_attention_kcache": build_toy_attention_kcache,
    "dynquant_mlp": build_dynquant_mlp,
    "batch_mixing_reduce": build_batch_mixing_reduce,
}

DEFAULT_RECIPES = [
    FixtureRecipe("mlp", "mlp", {"batch": 2, "hidden": 8}, seed=0),
    FixtureRecipe("toy_attention_kcache", "toy_attention_kcache",
                  {"batch": 2, "seq": 4, "hidden": 8, "heads": 2, "vocab": 6},
                  seed=0),
    FixtureRecipe("dynquant_mlp", "dynquant_mlp", {"batch": 2, "hidden": 8},
                  seed=0),
    FixtureRecipe("batch_mixing_reduce", "batch_mixing_reduce", {"batch": 2},
                  seed=0),
]


def build(recipe: FixtureRecipe) -> Fixture:
    if recipe.builder not in BUILDERS:
        raise ValueError(f"unsupported builder id '{recipe.builder}'")
    return BUILDERS[recipe.builder](recipe)
