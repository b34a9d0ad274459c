"""Committed fixture corpus: cross-implementation golden checks.

The fixtures under fixtures/ are produced by the standalone fixturegen
package with its own ONNX writer and numpy forward pass; this suite is the
cross-check that this package's parser, shape inference, interpreter, and
checker agree with them.
"""

import json
import os

import numpy as np
import pytest

from batchcheck import checker, interp, ir

FIXTURE_ROOT = os.path.join(os.path.dirname(__file__), os.pardir, "fixtures")


def fixture_dirs():
    if not os.path.isdir(FIXTURE_ROOT):
        return []
    return sorted(
        d for d in os.listdir(FIXTURE_ROOT)
        if os.path.isfile(os.path.join(FIXTURE_ROOT, d, "manifest.json")))


def load(name):
    fdir = os.path.join(FIXTURE_ROOT, name)
    with open(os.path.join(fdir, "manifest.json")) as fh:
        manifest = json.load(fh)
    model = ir.load_model(os.path.join(fdir, manifest["model"]))
    inputs = interp.load_tensors(os.path.join(fdir, manifest["inputs"]))
    expected = interp.load_tensors(os.path.join(fdir, manifest["expected_outputs"]))
    with open(os.path.join(fdir, manifest["config"])) as fh:
        config = checker.config_from_dict(json.load(fh))
    return manifest, model, inputs, expected, config


pytestmark = pytest.mark.skipif(not fixture_dirs(),
                                reason="fixture corpus not generated")


@pytest.mark.parametrize("name", fixture_dirs())
def test_fixture_loads_and_validates(name):
    _, model, _, _, _ = load(name)
    assert ir.validate_support(model) == []
    shapes = ir.infer_shapes(model)
    for spec in model.outputs:
        assert shapes[spec.name] == tuple(spec.shape)


@pytest.mark.parametrize("name", fixture_dirs())
def test_fixture_matches_goldens(name):
    manifest, model, inputs, expected, _ = load(name)
    trace = interp.execute(model, inputs, trace=True)
    for out_name, golden in expected.items():
        got = trace[out_name]
        assert got.dtype == golden.dtype, out_name
        assert got.shape == golden.shape, out_name
        if golden.dtype.kind in "iub":
            # quantized integer tensors must agree exactly
            np.testing.assert_array_equal(got, golden, err_msg=out_name)
        else:
            np.testing.assert_allclose(got, golden, atol=1e-5, err_msg=out_name)


@pytest.mark.parametrize("name", fixture_dirs())
def test_fixture_verdict(name):
    manifest, model, _, _, config = load(name)
    verdict = checker.check(model, config)
    assert verdict.verdict == manifest["expected_verdict"]


def test_corpus_complete():
    assert set(fixture_dirs()) >= {
        "mlp", "toy_attention_kcache", "dynquant_mlp", "batch_mixing_reduce"}


def test_attention_fixture_exposes_kcache():
    _, model, _, _, _ = load("toy_attention_kcache")
    shapes = ir.infer_shapes(model)
    assert shapes["k_cache"] == (2, 2, 4, 4)  # (B, heads, seq, dk)
