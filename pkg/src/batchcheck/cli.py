"""Command-line front end: check, inject, run, oracle, fuzz.

Exit codes form the machine contract: 0 = pass (Safe / no witness / sound),
2 = finding (Leak / interference witness / fuzz counterexample), 1 = error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import checker, forge, interp, ir

log = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_ERROR = 1
EXIT_FINDING = 2


def _load_config(path: str) -> checker.BatchingConfig:
    with open(path) as fh:
        raw = json.load(fh)
    return checker.config_from_dict(raw)


def cmd_check(args: argparse.Namespace) -> int:
    model = ir.load_model(args.model)
    config = _load_config(args.config)
    if args.fail_fast:
        config.fail_fast = True
    if args.allow_random_outputs:
        config.allow_random_outputs = True
    verdict = checker.check(model, config)
    if args.json:
        print(json.dumps(verdict.to_dict(), indent=2))
    else:
        print(f"{verdict.verdict}: {args.model} (batch_size={verdict.batch_size}, "
              f"{verdict.stats['nodes']} nodes, {verdict.stats['seconds']:.3f}s)")
        if verdict.report is not None:
            if verdict.report.first_tainted_node is not None:
                print(f"first tainted node: {verdict.report.first_tainted_node}")
            for v in verdict.report.violations:
                d = v.to_dict()
                print(f"  {d['output']}{list(d['index'])}: label {d['label']}, "
                      f"expected {d['expected']}")
            if verdict.report.truncated:
                print("  (violation list truncated)")
    return EXIT_PASS if verdict.verdict == "Safe" else EXIT_FINDING


def cmd_inject(args: argparse.Namespace) -> int:
    model = ir.load_model(args.model)
    trigger = forge.TriggerSpec(
        source_tensor=args.source,
        attacker_batch_index=args.attacker,
        token_positions=tuple(args.token_positions),
        trigger_const=args.trigger_const,
        delta=args.delta,
        token_axis=args.token_axis,
    )
    if trigger.trigger_const is None:
        if args.trigger_inputs is None:
            raise forge.ForgeError(
                "provide --trigger-const or --trigger-inputs to fix the trigger")
        trig_in = interp.load_tensors(args.trigger_inputs)
        trigger.trigger_const = forge.compute_trigger_constant(model, trig_in, trigger)
        log.info("computed trigger constant %.6f", trigger.trigger_const)
    if args.attack == "get":
        attack = forge.Get(victim_index=args.victim)
    elif args.attack == "set":
        attack = forge.Set(victim_index=args.victim)
    else:
        if args.vector is None:
            raise forge.ForgeError("steer requires --vector FILE")
        vec = np.asarray(json.load(open(args.vector)), dtype=np.float32)
        attack = forge.Steer(steering_vector=vec, scale=args.scale,
                             victim_index=args.victim)
    plan = forge.InjectionPlan(trigger=trigger, attack=attack,
                               target_tensor=args.target)
    backdoored, delta = forge.inject(model, plan)
    ir.save_model_to(backdoored, args.out)
    manifest = forge.manifest_dict(plan, args.model, args.out, delta)
    if args.manifest:
        with open(args.manifest, "w") as fh:
            json.dump(manifest, fh, indent=2)
    print(f"injected {args.attack}: node_count_delta={delta}, wrote {args.out}")
    return EXIT_PASS


def cmd_run(args: argparse.Namespace) -> int:
    model = ir.load_model(args.model)
    inputs = interp.load_tensors(args.inputs)
    outputs = interp.execute(model, inputs, seed=args.seed)
    payload = interp.tensors_to_json(outputs)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2)
        print(f"wrote {len(outputs)} output tensors to {args.out}")
    else:
        print(json.dumps(payload, indent=2))
    return EXIT_PASS


def cmd_oracle(args: argparse.Namespace) -> int:
    model = ir.load_model(args.model)
    config = _load_config(args.config)
    base = interp.load_tensors(args.base_inputs) if args.base_inputs else None
    result = interp.probe_noninterference(model, config, trials=args.trials,
                                          seed=args.seed, base_inputs=base)
    if args.json:
        payload = {
            "interfered": result.interfered,
            "trials_run": result.trials_run,
            "discarded": result.discarded,
            "witness": None,
        }
        if result.witness is not None:
            w = result.witness
            payload["witness"] = {
                "trial": w.trial, "perturbed_user": w.perturbed_user,
                "observed_user": w.observed_user, "output": w.output,
                "index": list(w.index),
                "before": float(w.before), "after": float(w.after),
            }
        print(json.dumps(payload, indent=2))
    elif result.interfered:
        w = result.witness
        print(f"interference: trial {w.trial}, perturbing user {w.perturbed_user} "
              f"changed user {w.observed_user} at {w.output}{list(w.index)} "
              f"({w.before!r} -> {w.after!r})")
    else:
        print(f"no interference observed in {result.trials_run} trials "
              f"({result.discarded} discarded)")
    return EXIT_FINDING if result.interfered else EXIT_PASS


def cmd_fuzz(args: argparse.Namespace) -> int:
    summary = interp.fuzz_soundness(n_graphs=args.graphs,
                                    trials_per_graph=args.trials,
                                    seed=args.seed)
    if args.json:
        payload = {
            "graphs": summary.graphs, "safe": summary.safe, "leak": summary.leak,
            "counterexamples": [
                {**c, "witness": {**c["witness"],
                                  "index": list(c["witness"]["index"])}}
                for c in summary.counterexamples
            ],
        }
        print(json.dumps(payload, indent=2))
    else:
        print(f"fuzzed {summary.graphs} graphs: {summary.safe} safe, "
              f"{summary.leak} leak, {len(summary.counterexamples)} counterexamples")
        for c in summary.counterexamples:
            w = c["witness"]
            print(f"  counterexample at graph seed {c['graph_seed']}: "
                  f"user {w['perturbed_user']} -> user {w['observed_user']} "
                  f"at {w['output']}")
    return EXIT_PASS if summary.sound else EXIT_FINDING


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="batchcheck",
        description="Static batch-isolation checking for ONNX graphs.")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="enable info-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="prove or refute batch isolation")
    p.add_argument("model")
    p.add_argument("--config", required=True, help="batching config JSON")
    p.add_argument("--json", action="store_true", help="machine-readable verdict")
    p.add_argument("--fail-fast", action="store_true",
                   help="halt at the first cross-user node")
    p.add_argument("--allow-random-outputs", action="store_true")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("inject", help="insert a Get/Set/Steer backdoor")
    p.add_argument("model")
    p.add_argument("--attack", required=True, choices=("get", "set", "steer"))
    p.add_argument("--source", required=True,
                   help="cache-like tensor watched by the trigger detector")
    p.add_argument("--target", required=True,
                   help="batched tensor whose rows are rerouted or steered")
    p.add_argument("--attacker", type=int, default=0)
    p.add_argument("--victim", type=int, default=1)
    p.add_argument("--trigger-const", type=float, default=None)
    p.add_argument("--trigger-inputs", default=None,
                   help="JSON tensors that should fire the trigger")
    p.add_argument("--delta", type=float, default=0.01)
    p.add_argument("--token-positions", type=_int_list, default=[1, 2])
    p.add_argument("--token-axis", type=int, default=2)
    p.add_argument("--vector", default=None,
                   help="steering vector JSON array (steer only)")
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--manifest", default=None, help="write manifest JSON here")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("run", help="execute a model on JSON tensors")
    p.add_argument("model")
    p.add_argument("--inputs", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("oracle", help="brute-force non-interference probe")
    p.add_argument("model")
    p.add_argument("--config", required=True)
    p.add_argument("--base-inputs", default=None,
                   help="JSON tensors fixing the baseline batch (e.g. a trigger)")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("fuzz", help="random graphs: checker vs oracle soundness")
    p.add_argument("--graphs", type=int, default=100)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_fuzz)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (checker.CheckError, checker.ConfigError, forge.ForgeError,
            interp.ExecutionError, ir.GraphError, OSError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
