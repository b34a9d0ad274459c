"""Acceptance gate: one test per release criterion, one printed line each.

Run with `pytest tests/test_acceptance.py -s` to see the PASS/FAIL lines.
"""

import functools
import time

import numpy as np
import pytest

import builders
from batchcheck import checker, forge, interp, labels


def criterion(name):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"[FAIL] {name}")
                raise
            print(f"[PASS] {name}")
        return wrapper
    return deco


ATT_CONFIG = builders.batch_config(2, ["x"], ["logits"])


@pytest.fixture(scope="module")
def attention():
    return builders.toy_attention_kcache()


@pytest.fixture(scope="module")
def trigger_inputs(attention):
    return builders.attention_trigger_inputs(attention)


@pytest.fixture(scope="module")
def trigger(attention, trigger_inputs):
    spec = forge.TriggerSpec(source_tensor="k_cache")
    spec.trigger_const = forge.compute_trigger_constant(
        attention, trigger_inputs, spec)
    return spec


def _random_words(rng, n):
    """Well-formed random label words: flags x (neutral | user range)."""
    flags = rng.integers(0, 2, n).astype(np.uint64) << np.uint64(48)
    lo = rng.integers(1, labels.MAX_USER + 1, n).astype(np.uint64)
    hi = np.minimum(lo + rng.integers(0, 8, n).astype(np.uint64),
                    np.uint64(labels.MAX_USER))
    words = flags | (lo << np.uint64(24)) | hi
    neutral = rng.random(n) < 0.25
    words[neutral] = (flags[neutral]
                      | np.uint64(labels.MIN_SENTINEL) << np.uint64(24))
    return words


@criterion("monoid laws over 1e5 random triples in <10s")
def test_monoid_laws():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    n = 100_000
    a, b, c = (_random_words(rng, n) for _ in range(3))
    # associativity
    assert (labels.combine(labels.combine(a, b), c)
            == labels.combine(a, labels.combine(b, c))).all()
    # identity
    e = np.uint64(labels.NEUTRAL)
    assert (labels.combine(a, e) == a).all()
    assert (labels.combine(e, a) == a).all()
    # commutativity
    assert (labels.combine(a, b) == labels.combine(b, a)).all()
    # idempotence
    assert (labels.combine(a, a) == a).all()
    # multi-label no-escape: once multi-user, combining never narrows it
    multi_a = labels.states(a)[3]
    combined = labels.combine(a, b)
    assert labels.states(combined)[3][multi_a].all()
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0, f"monoid suite took {elapsed:.2f}s"


@criterion("checker convicts Get/Set/Steer on toy attention, passes clean, <1s each")
def test_attack_detection(attention, trigger):
    vec = np.linspace(-1, 1, 6).astype(np.float32)
    attacks = [forge.Get(victim_index=1), forge.Set(victim_index=1),
               forge.Steer(steering_vector=vec, scale=1.0, victim_index=1)]
    for attack in attacks:
        bd, _ = forge.inject(attention,
                             forge.InjectionPlan(trigger, attack, "logits"))
        start = time.perf_counter()
        verdict = checker.check(bd, ATT_CONFIG)
        assert time.perf_counter() - start < 1.0
        assert not verdict.safe, f"{type(attack).__name__} not detected"
        injected = forge.injected_node_names(attention, bd)
        assert verdict.report.first_tainted_node in injected
    start = time.perf_counter()
    assert checker.check(attention, ATT_CONFIG).safe
    assert time.perf_counter() - start < 1.0
    # determinism
    v1 = checker.check(attention, ATT_CONFIG).to_dict()
    v2 = checker.check(attention, ATT_CONFIG).to_dict()
    v1.pop("stats"), v2.pop("stats")
    assert v1 == v2


@criterion("Get/Set semantics bit-exact when triggered; dormant on 100 inputs")
def test_attack_semantics(attention, trigger, trigger_inputs):
    clean_out = interp.execute(attention, trigger_inputs)["logits"]
    get_bd, _ = forge.inject(attention, forge.InjectionPlan(
        trigger, forge.Get(victim_index=1), "logits"))
    got = interp.execute(get_bd, trigger_inputs)["logits"]
    assert np.array_equal(got[0], clean_out[1])  # attacker row == victim row
    set_bd, _ = forge.inject(attention, forge.InjectionPlan(
        trigger, forge.Set(victim_index=1), "logits"))
    put = interp.execute(set_bd, trigger_inputs)["logits"]
    assert np.array_equal(put[1], clean_out[0])  # victim row == attacker row
    # dormancy: 100 trigger-free random inputs, bit-identical to clean
    rng = np.random.default_rng(123)
    checked = 0
    while checked < 100:
        x = {"x": rng.standard_normal((2, 4, 8)).astype(np.float32)}
        trace = interp.execute(get_bd, x, trace=True)
        if trace["bisb_trigger"] != 0:
            continue
        ref = interp.execute(attention, x)["logits"]
        assert np.array_equal(trace["logits"], ref)
        assert np.array_equal(interp.execute(set_bd, x)["logits"], ref)
        checked += 1


@criterion("DynamicQuantizeLinear: Leak with all-MultiUser outputs at B=2, Safe at B=1")
def test_dynquant_leakage():
    v2 = checker.check(builders.dynquant_mlp(2),
                       builders.batch_config(2, ["x"], ["out"]))
    assert not v2.safe
    # every element of the (2, 3) output must be flagged, each multi-user
    assert len(v2.report.violations) == 6 and not v2.report.truncated
    for viol in v2.report.violations:
        assert labels.classify(viol.label) is labels.LabelState.MULTI_USER
    v1 = checker.check(builders.dynquant_mlp(1),
                       builders.batch_config(1, ["x"], ["out"]))
    assert v1.safe


@criterion("soundness fuzzing: 500 graphs x 20 trials, zero counterexamples, <10min")
def test_fuzz_soundness():
    start = time.perf_counter()
    summary = interp.fuzz_soundness(n_graphs=500, trials_per_graph=20, seed=0)
    elapsed = time.perf_counter() - start
    assert summary.graphs == 500
    assert summary.sound, f"counterexamples: {summary.counterexamples}"
    assert elapsed < 600.0, f"fuzzing took {elapsed:.1f}s"


@criterion("injection footprint: combined Get+Set node delta 22 <= 25 (reference: 19)")
def test_injection_footprint(attention, trigger):
    get_bd, d_get = forge.inject(attention, forge.InjectionPlan(
        trigger, forge.Get(victim_index=1), "logits"))
    both_bd, d_set = forge.inject(get_bd, forge.InjectionPlan(
        trigger, forge.Set(victim_index=1), "logits"))
    # each injection is self-contained: 7 detector + 4 integration nodes.
    # composing Get then Set rebuilds the detector, hence 22 rather than the
    # 19 a shared-detector construction reaches; both are within budget.
    assert d_get == 11 and d_set == 11
    assert d_get + d_set == 22 <= 25
    assert len(both_bd.nodes) == len(attention.nodes) + 22


@criterion("steer displacement equals scale x vector within 1e-6; untriggered is zero")
def test_steer_displacement(attention, trigger, trigger_inputs):
    vec = np.linspace(-1.0, 1.0, 6).astype(np.float32)
    scale = 2.5
    bd, _ = forge.inject(attention, forge.InjectionPlan(
        trigger, forge.Steer(steering_vector=vec, scale=scale, victim_index=1),
        "logits"))
    clean = interp.execute(attention, trigger_inputs)["logits"]
    steered = interp.execute(bd, trigger_inputs)["logits"]
    disp = steered[1] - clean[1]
    assert np.abs(disp - scale * vec).max() < 1e-6
    assert np.array_equal(steered[0], clean[0])
    # untriggered: exact zero difference
    rng = np.random.default_rng(321)
    checked = 0
    while checked < 10:
        x = {"x": rng.standard_normal((2, 4, 8)).astype(np.float32)}
        trace = interp.execute(bd, x, trace=True)
        if trace["bisb_trigger"] != 0:
            continue
        ref = interp.execute(attention, x)["logits"]
        assert np.array_equal(trace["logits"], ref)
        checked += 1


@criterion("exported fixtures load, validate, shape-infer, and match goldens")
def test_fixture_corpus():
    import test_fixtures

    dirs = test_fixtures.fixture_dirs()
    assert {"mlp", "toy_attention_kcache", "dynquant_mlp",
            "batch_mixing_reduce"} <= set(dirs)
    for name in dirs:
        test_fixtures.test_fixture_loads_and_validates(name)
        test_fixtures.test_fixture_matches_goldens(name)
        test_fixtures.test_fixture_verdict(name)


@criterion("a ~200-node fixture checks in <5s")
def test_performance_sanity():
    model = builders.deep_mlp(blocks=66)  # 199 nodes
    assert len(model.nodes) >= 195
    cfg = builders.batch_config(2, ["x"], ["out"])
    start = time.perf_counter()
    verdict = checker.check(model, cfg)
    elapsed = time.perf_counter() - start
    assert verdict.safe
    assert elapsed < 5.0, f"check took {elapsed:.2f}s"
