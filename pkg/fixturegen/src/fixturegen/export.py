"""Writes a fixture directory: model.onnx + JSON tensors + manifest."""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np

from .recipes import Fixture, FixtureRecipe, build


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


def export_fixture(recipe: FixtureRecipe, out_dir: str | os.PathLike) -> str:
    fixture: Fixture = build(recipe)
    fdir = os.path.join(os.fspath(out_dir), recipe.name)
    os.makedirs(fdir, exist_ok=True)
    with open(os.path.join(fdir, "model.onnx"), "wb") as fh:
        fh.write(fixture.model_bytes)
    with open(os.path.join(fdir, "inputs.json"), "w") as fh:
        json.dump(tensors_to_json(fixture.inputs), fh, indent=1)
    with open(os.path.join(fdir, "expected_outputs.json"), "w") as fh:
        json.dump(tensors_to_json(fixture.outputs), fh, indent=1)
    with open(os.path.join(fdir, "config.json"), "w") as fh:
        json.dump(fixture.config, fh, indent=2)
    manifest_path = os.path.join(fdir, "manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump({
            "recipe": dataclasses.asdict(recipe),
            "model": "model.onnx",
            "inputs": "inputs.json",
            "expected_outputs": "expected_outputs.json",
            "config": "config.json",
            "graph_outputs": fixture.graph_outputs,
            "expected_verdict": fixture.expected_verdict,
        }, fh, indent=2)
    return manifest_path
