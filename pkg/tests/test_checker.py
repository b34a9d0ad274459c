"""Checker pipeline: config parsing, initialization, verdicts, reports."""

import json
import logging

import numpy as np
import pytest

import builders
from batchcheck import checker, labels
from batchcheck.ir import GraphModel, NodeSpec, TensorSpec

F32 = np.dtype("float32")


class TestConfigParsing:
    def good(self):
        return {
            "batch_size": 2,
            "inputs": {"x": {"batch_axis": 0}, "mask": {"shared": True}},
            "outputs": {"out": {"batch_axis": 0}},
        }

    def test_parses(self):
        cfg = checker.config_from_dict(self.good())
        assert cfg.batch_size == 2
        assert cfg.inputs["x"].batch_axis == 0
        assert cfg.inputs["mask"].shared
        assert cfg.allow_random_outputs and not cfg.fail_fast

    def test_unknown_top_key(self):
        doc = {**self.good(), "mystery": 1}
        with pytest.raises(checker.ConfigError, match="mystery"):
            checker.config_from_dict(doc)

    def test_missing_key(self):
        doc = self.good()
        del doc["outputs"]
        with pytest.raises(checker.ConfigError, match="outputs"):
            checker.config_from_dict(doc)

    def test_input_needs_exactly_one_role(self):
        doc = self.good()
        doc["inputs"]["x"] = {"batch_axis": 0, "shared": True}
        with pytest.raises(checker.ConfigError, match="exactly one"):
            checker.config_from_dict(doc)
        doc["inputs"]["x"] = {}
        with pytest.raises(checker.ConfigError, match="exactly one"):
            checker.config_from_dict(doc)

    def test_unknown_input_key(self):
        doc = self.good()
        doc["inputs"]["x"] = {"batch_axis": 0, "color": "red"}
        with pytest.raises(checker.ConfigError, match="color"):
            checker.config_from_dict(doc)

    def test_output_only_batch_axis(self):
        doc = self.good()
        doc["outputs"]["out"] = {"batch_axis": 0, "shared": True}
        with pytest.raises(checker.ConfigError):
            checker.config_from_dict(doc)

    def test_batch_size_bounds(self):
        doc = self.good()
        doc["batch_size"] = 0
        with pytest.raises(checker.ConfigError, match=">= 1"):
            checker.config_from_dict(doc)
        doc["batch_size"] = labels.MAX_USER + 1
        with pytest.raises(checker.ConfigError, match="capacity"):
            checker.config_from_dict(doc)

    def test_json_round_trip(self):
        text = json.dumps(self.good())
        cfg = checker.config_from_dict(json.loads(text))
        assert cfg.batch_size == 2


class TestInitialization:
    def test_per_user_labels_along_axis(self):
        model = builders.mlp(batch=3)
        cfg = builders.batch_config(3, ["x"], ["out"])
        shadows = checker.initialize_shadows(model, cfg)
        x = shadows["x"]
        for b in range(3):
            assert (x[b] == labels.from_user(b + 1)).all()
        assert (shadows["W1"] == labels.NEUTRAL).all()

    def test_batch_extent_mismatch(self):
        model = builders.mlp(batch=2)
        cfg = builders.batch_config(3, ["x"], ["out"])
        with pytest.raises(checker.ConfigError, match="batch axis"):
            checker.initialize_shadows(model, cfg)

    def test_shared_input_neutral_with_warning(self, caplog):
        model = GraphModel(
            inputs=[TensorSpec("x", F32, (2, 4)), TensorSpec("mask", F32, (4,))],
            outputs=[TensorSpec("out", F32, (2, 4))],
            initializers={},
            nodes=[NodeSpec("Mul", ("x", "mask"), ("out",))])
        cfg = checker.config_from_dict({
            "batch_size": 2,
            "inputs": {"x": {"batch_axis": 0}, "mask": {"shared": True}},
            "outputs": {"out": {"batch_axis": 0}},
        })
        with caplog.at_level(logging.WARNING):
            shadows = checker.initialize_shadows(model, cfg)
        assert (shadows["mask"] == labels.NEUTRAL).all()
        assert any("shared" in r.message for r in caplog.records)

    def test_missing_input_spec(self):
        model = builders.mlp()
        cfg = checker.config_from_dict({
            "batch_size": 2, "inputs": {}, "outputs": {"out": {"batch_axis": 0}}})
        with pytest.raises(checker.ConfigError, match="missing input spec"):
            checker.initialize_shadows(model, cfg)

    def test_stray_config_input(self):
        model = builders.mlp()
        cfg = checker.config_from_dict({
            "batch_size": 2,
            "inputs": {"x": {"batch_axis": 0}, "phantom": {"shared": True}},
            "outputs": {"out": {"batch_axis": 0}}})
        with pytest.raises(checker.ConfigError, match="phantom"):
            checker.initialize_shadows(model, cfg)


class TestVerdicts:
    def test_clean_mlp_safe(self):
        v = checker.check(builders.mlp(), builders.batch_config(2, ["x"], ["out"]))
        assert v.safe and v.verdict == "Safe"
        assert v.report is None
        assert v.stats["nodes"] == 5 and v.stats["seconds"] >= 0

    def test_attention_safe(self):
        v = checker.check(builders.toy_attention_kcache(),
                          builders.batch_config(2, ["x"], ["logits"]))
        assert v.safe

    def test_mixing_leak_names_node(self):
        v = checker.check(builders.batch_mixing_reduce(),
                          builders.batch_config(2, ["x"], ["out"]))
        assert not v.safe
        assert v.report.first_tainted_node == "batch_mean"
        assert all(x.output == "out" for x in v.report.violations)

    def test_dynquant_leak_all_multi(self):
        v = checker.check(builders.dynquant_mlp(2),
                          builders.batch_config(2, ["x"], ["out"]))
        assert not v.safe
        assert v.report.first_tainted_node == "quantize"
        assert len(v.report.violations) == 6  # every element of the (2,3) output
        for viol in v.report.violations:
            assert labels.classify(viol.label) is labels.LabelState.MULTI_USER

    def test_dynquant_b1_safe(self):
        v = checker.check(builders.dynquant_mlp(1),
                          builders.batch_config(1, ["x"], ["out"]))
        assert v.safe

    def test_wrong_single_user_is_leak(self):
        # output rows swapped across the batch: right labels, wrong rows
        model = GraphModel(
            inputs=[TensorSpec("x", F32, (2, 3))],
            outputs=[TensorSpec("out", F32, (2, 3))],
            initializers={"swap": np.array([1, 0], dtype=np.int64)},
            nodes=[NodeSpec("Gather", ("x", "swap"), ("out",), {"axis": 0})])
        v = checker.check(model, builders.batch_config(2, ["x"], ["out"]))
        assert not v.safe
        viol = v.report.violations[0]
        assert viol.to_dict()["label"] == "u2" and viol.to_dict()["expected"] == "u1"

    def test_fail_fast_halts_with_empty_violations(self):
        v = checker.check(builders.batch_mixing_reduce(),
                          builders.batch_config(2, ["x"], ["out"],
                                                fail_fast=True))
        assert not v.safe
        assert v.report.first_tainted_node == "batch_mean"
        assert v.report.violations == []

    def test_fail_fast_agrees_on_fixtures(self):
        for build, batch, outs in [
            (builders.mlp, 2, ["out"]),
            (builders.dynquant_mlp, 2, ["out"]),
            (builders.batch_mixing_reduce, 2, ["out"]),
        ]:
            model = build(batch)
            full = checker.check(model, builders.batch_config(batch, ["x"], outs))
            fast = checker.check(model, builders.batch_config(
                batch, ["x"], outs, fail_fast=True))
            assert full.safe == fast.safe

    def test_violation_cap_truncates(self):
        model = builders.batch_mixing_reduce(batch=8)
        v = checker.check(model, builders.batch_config(8, ["x"], ["out"]))
        assert v.report.truncated
        assert len(v.report.violations) == checker.VIOLATION_CAP
        assert v.to_dict()["truncated"] is True

    def test_random_outputs_policy(self):
        model = GraphModel(
            inputs=[TensorSpec("x", F32, (2, 3))],
            outputs=[TensorSpec("out", F32, (2, 3))],
            initializers={},
            nodes=[NodeSpec("RandomNormal", (), ("noise",), {"shape": (2, 3)}),
                   NodeSpec("Add", ("x", "noise"), ("out",))])
        permissive = builders.batch_config(2, ["x"], ["out"])
        v = checker.check(model, permissive)
        assert v.safe  # RANDOM flag tolerated by default
        strict = builders.batch_config(2, ["x"], ["out"],
                                       allow_random_outputs=False)
        v = checker.check(model, strict)
        assert not v.safe

    def test_undeclared_output_must_be_user_free(self):
        model = GraphModel(
            inputs=[TensorSpec("x", F32, (2, 3))],
            outputs=[TensorSpec("out", F32, (2, 3)),
                     TensorSpec("aux", F32, (3,))],
            initializers={"row0": np.array(0, dtype=np.int64)},
            nodes=[NodeSpec("Relu", ("x",), ("out",)),
                   NodeSpec("Gather", ("x", "row0"), ("aux",), {"axis": 0})])
        v = checker.check(model, builders.batch_config(2, ["x"], ["out"]))
        assert not v.safe
        assert {x.output for x in v.report.violations} == {"aux"}

    def test_unsupported_op_stage_tagged(self):
        model = GraphModel(
            inputs=[TensorSpec("x", F32, (2, 3))],
            outputs=[TensorSpec("out", F32, (2, 3))],
            initializers={},
            nodes=[NodeSpec("Loop", ("x",), ("out",))])
        with pytest.raises(checker.CheckError, match=r"\[validate\]"):
            checker.check(model, builders.batch_config(2, ["x"], ["out"]))

    def test_symbolic_batch_bound_from_config(self):
        model = builders.mlp()
        model.inputs[0] = TensorSpec("x", F32, ("B", 4))
        model.outputs[0] = TensorSpec("out", F32, ("B", 3))
        cfg = builders.batch_config(2, ["x"], ["out"], dim_bindings={"B": 2})
        assert checker.check(model, cfg).safe

    def test_verdict_json_round_trips(self):
        v = checker.check(builders.dynquant_mlp(2),
                          builders.batch_config(2, ["x"], ["out"]))
        doc = json.loads(json.dumps(v.to_dict()))
        assert doc["verdict"] == "Leak"
        assert doc["first_tainted_node"] == "quantize"
        assert doc["violations"][0]["label"] == "u1..2"
