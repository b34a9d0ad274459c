"""Static batch-isolation checking for ONNX-style dataflow graphs.

Proves that a batched inference graph cannot leak information between
users sharing a batch, by propagating per-element user labels through
every operator and verifying the outputs. Companions: a reference
interpreter with a brute-force non-interference probe, a fuzz harness
pitting the two against each other, and a backdoor injector producing
the Get/Set/Steer attack graphs the checker is meant to catch.
"""

from . import checker, forge, interp, ir, kernels, labels, onnx_pb, rules
from .checker import BatchingConfig, CheckError, ConfigError, Verdict, check, config_from_dict
from .forge import ForgeError, Get, InjectionPlan, Set, Steer, TriggerSpec, inject
from .interp import ExecutionError, execute, fuzz_soundness, probe_noninterference, random_graph
from .ir import GraphError, GraphModel, NodeSpec, TensorSpec, load_model, save_model

__version__ = "0.1.0"

__all__ = [
    "BatchingConfig", "CheckError", "ConfigError", "ExecutionError",
    "ForgeError", "Get", "GraphError", "GraphModel", "InjectionPlan",
    "NodeSpec", "Set", "Steer", "TensorSpec", "TriggerSpec", "Verdict",
    "check", "checker", "config_from_dict", "execute", "forge",
    "fuzz_soundness", "inject", "interp", "ir", "kernels", "labels",
    "load_model", "onnx_pb", "probe_noninterference", "random_graph",
    "rules", "save_model",
]
