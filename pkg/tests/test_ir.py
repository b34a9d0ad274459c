"""Graph IR: serialization round trips, validation, binding, shape inference."""

import numpy as np
import pytest

import builders
from batchcheck import ir, onnx_pb
from batchcheck.ir import GraphModel, NodeSpec, TensorSpec

F32 = np.dtype("float32")


class TestRoundTrip:
    @pytest.mark.parametrize("build", [
        builders.mlp, builders.toy_attention_kcache, builders.dynquant_mlp,
        builders.batch_mixing_reduce,
    ])
    def test_save_load_identity(self, build):
        model = build()
        again = ir.load_model(ir.save_model(model))
        assert ir.structurally_equal(model, again)

    def test_save_load_file(self, tmp_path):
        path = tmp_path / "m.onnx"
        model = builders.mlp()
        ir.save_model_to(model, path)
        assert ir.structurally_equal(model, ir.load_model(path))

    def test_symbolic_dims_survive(self):
        model = builders.mlp()
        model.inputs[0] = TensorSpec("x", F32, ("batch", 4))
        again = ir.load_model(ir.save_model(model))
        assert again.inputs[0].shape == ("batch", 4)
        assert not again.inputs[0].is_concrete

    def test_low_opset_rejected(self):
        model = builders.mlp()
        model.opset = 11
        with pytest.raises(ir.GraphError, match="opset"):
            ir.load_model(ir.save_model(model))

    def test_garbage_rejected(self):
        with pytest.raises(ir.GraphError):
            ir.load_model(b"\xff\xff\xff\xffnot a model")

    def test_attribute_kinds_roundtrip(self):
        node = NodeSpec("Transpose", ("x",), ("y",),
                        {"perm": (1, 0), "note": "tag", "ratio": 0.5},
                        name="t")
        model = GraphModel(
            inputs=[TensorSpec("x", F32, (2, 3))],
            outputs=[TensorSpec("y", F32, (3, 2))],
            initializers={}, nodes=[node])
        again = ir.load_model(ir.save_model(model))
        assert again.nodes[0].attributes == node.attributes


class TestValidation:
    def test_dangling_input(self):
        model = GraphModel(
            inputs=[TensorSpec("x", F32, (2,))],
            outputs=[TensorSpec("y", F32, (2,))],
            initializers={},
            nodes=[NodeSpec("Add", ("x", "ghost"), ("y",))])
        with pytest.raises(ir.GraphError, match="dangling input 'ghost'"):
            ir.validate_structure(model)

    def test_duplicate_tensor(self):
        model = GraphModel(
            inputs=[TensorSpec("x", F32, (2,))],
            outputs=[TensorSpec("x", F32, (2,))],
            initializers={},
            nodes=[NodeSpec("Relu", ("x",), ("x",))])
        with pytest.raises(ir.GraphError, match="duplicate"):
            ir.validate_structure(model)

    def test_cycle(self):
        model = GraphModel(
            inputs=[TensorSpec("x", F32, (2,))],
            outputs=[TensorSpec("c", F32, (2,))],
            initializers={},
            nodes=[NodeSpec("Add", ("x", "c"), ("b",)),
                   NodeSpec("Relu", ("b",), ("c",))])
        with pytest.raises(ir.GraphError, match="cycle"):
            ir.validate_structure(model)

    def test_unproduced_output(self):
        model = GraphModel(
            inputs=[TensorSpec("x", F32, (2,))],
            outputs=[TensorSpec("nowhere", F32, (2,))],
            initializers={}, nodes=[])
        with pytest.raises(ir.GraphError, match="never produced"):
            ir.validate_structure(model)

    def test_unsupported_op_diagnostics(self):
        model = GraphModel(
            inputs=[TensorSpec("x", F32, (2,))],
            outputs=[TensorSpec("y", F32, (2,))],
            initializers={},
            nodes=[NodeSpec("If", ("x",), ("t",)),
                   NodeSpec("LSTM", ("t",), ("y",))])
        diags = ir.validate_support(model)
        assert diags == ["If: unsupported (control flow out of scope)",
                         "LSTM: unsupported operator"]

    def test_supported_fixture_clean(self):
        assert ir.validate_support(builders.toy_attention_kcache()) == []


class TestTopologicalOrder:
    def test_diamond_deterministic(self):
        # nodes listed out of dataflow order; ties resolve to lowest index
        model = GraphModel(
            inputs=[TensorSpec("x", F32, (2,))],
            outputs=[TensorSpec("out", F32, (2,))],
            initializers={},
            nodes=[
                NodeSpec("Add", ("l", "r"), ("out",)),  # 0: needs both arms
                NodeSpec("Relu", ("x",), ("l",)),       # 1
                NodeSpec("Neg", ("x",), ("r",)),        # 2
            ])
        assert ir.topological_order(model) == [1, 2, 0]


class TestBinding:
    def test_bind_symbolic(self):
        model = builders.mlp()
        model.inputs[0] = TensorSpec("x", F32, ("B", 4))
        bound = ir.bind_dimensions(model, {"B": 2})
        assert bound.inputs[0].shape == (2, 4)

    def test_unbound_named_in_error(self):
        model = builders.mlp()
        model.inputs[0] = TensorSpec("x", F32, ("B", 4))
        with pytest.raises(ir.GraphError, match="'B'"):
            ir.bind_dimensions(model, {})

    def test_nonpositive_binding_rejected(self):
        model = builders.mlp()
        model.inputs[0] = TensorSpec("x", F32, ("B", 4))
        with pytest.raises(ir.GraphError, match="nonempty"):
            ir.bind_dimensions(model, {"B": 0})


class TestInferShapes:
    def test_matmul(self):
        model = GraphModel(
            inputs=[TensorSpec("a", F32, (2, 3)), TensorSpec("b", F32, (3, 4))],
            outputs=[TensorSpec("y", F32, (2, 4))],
            initializers={},
            nodes=[NodeSpec("MatMul", ("a", "b"), ("y",))])
        assert ir.infer_shapes(model)["y"] == (2, 4)

    def test_broadcast_add(self):
        model = GraphModel(
            inputs=[TensorSpec("a", F32, (2, 1, 5)), TensorSpec("b", F32, (4, 5))],
            outputs=[TensorSpec("y", F32, (2, 4, 5))],
            initializers={},
            nodes=[NodeSpec("Add", ("a", "b"), ("y",))])
        assert ir.infer_shapes(model)["y"] == (2, 4, 5)

    def test_dynamic_quantize_outputs(self):
        shapes = ir.infer_shapes(builders.dynquant_mlp(2))
        assert shapes["q"] == (2, 8)
        assert shapes["scale"] == () and shapes["zp"] == ()

    def test_shape_chain_reshape_is_exact(self):
        # Shape -> Gather -> Concat feeding a Reshape target stays exact
        model = GraphModel(
            inputs=[TensorSpec("x", F32, (2, 3, 4))],
            outputs=[TensorSpec("y", F32, (2, 12))],
            initializers={
                "idx0": np.array([0], dtype=np.int64),
                "rest": np.array([-1], dtype=np.int64),
            },
            nodes=[
                NodeSpec("Shape", ("x",), ("s",)),
                NodeSpec("Gather", ("s", "idx0"), ("b",), {"axis": 0}),
                NodeSpec("Concat", ("b", "rest"), ("target",), {"axis": 0}),
                NodeSpec("Reshape", ("x", "target"), ("y",)),
            ])
        assert ir.infer_shapes(model)["y"] == (2, 12)

    def test_declared_mismatch_rejected(self):
        model = GraphModel(
            inputs=[TensorSpec("a", F32, (2, 3)), TensorSpec("b", F32, (3, 4))],
            outputs=[TensorSpec("y", F32, (9, 9))],
            initializers={},
            nodes=[NodeSpec("MatMul", ("a", "b"), ("y",))])
        with pytest.raises(ir.GraphError, match="inferred shape"):
            ir.infer_shapes(model)

    def test_unbound_input_rejected(self):
        model = builders.mlp()
        model.inputs[0] = TensorSpec("x", F32, ("B", 4))
        with pytest.raises(ir.GraphError, match="unbound"):
            ir.infer_shapes(model)


class TestWireFormat:
    def test_unknown_fields_skipped(self):
        # append an unknown field (tag 1000, varint) to a valid model
        blob = ir.save_model(builders.mlp())
        extra = bytearray()
        onnx_pb._write_tag(extra, 1000, 0)
        onnx_pb._write_varint(extra, 7)
        model = ir.load_model(blob + bytes(extra))
        assert ir.structurally_equal(model, builders.mlp())

    def test_negative_int_attr_roundtrip(self):
        model = GraphModel(
            inputs=[TensorSpec("x", F32, (2, 3))],
            outputs=[TensorSpec("y", F32, (3,))],
            initializers={},
            nodes=[NodeSpec("ReduceSum", ("x",), ("y",),
                            {"axes": (-2,), "keepdims": 0})])
        again = ir.load_model(ir.save_model(model))
        assert again.nodes[0].attributes["axes"] == (-2,)
