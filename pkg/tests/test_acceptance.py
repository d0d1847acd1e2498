"""Acceptance gate: one test and one printed pass/fail line per criterion.

Criteria 1-9 exercise the engine, testbed, and harness alone; criterion 10
needs the external adapter under frontend/ and skips cleanly when it has not
been built.
"""

import json
import math
import shutil
import subprocess
import sys
import time
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from nolan.bridge import connect_stdio, serve_check
from nolan.core import LogitVector, ProbDist, entropy, js_divergence, kl_divergence, softmax
from nolan.engine import (
    MULTIMODAL,
    TEXT_ONLY,
    DecodeMode,
    DecodeRequest,
    SamplerConfig,
    SamplerKind,
    decode,
)
from nolan.harness import (
    ReportHeader,
    StrategyConfig,
    entropy_report,
    evaluate_pope,
    mutual_information_estimate,
    render_report,
    subset_divergence_report,
    sweep,
    timing_report,
)
from nolan.modulation import AlphaPolicy, alpha_from_gamma, combine_logits, compute_alpha
from nolan.oracle import oracle_step_distribution
from nolan.synthetic import Scene, build_sources, build_vocabulary, compile_prior
from nolan.table import RecordingSource, dump_table
from nolan.testbed import calibrated_testbed

GOLDEN = Path(__file__).parent / "golden"
FRONTEND_CLI = Path(__file__).parent.parent / "frontend" / "dist" / "cli.js"

REGULAR = StrategyConfig("regular", mode=DecodeMode.REGULAR, policy=AlphaPolicy.constant(0.0))
ALPHA0 = StrategyConfig("alpha0", mode=DecodeMode.NOLAN, policy=AlphaPolicy.constant(0.0))
BASE = StrategyConfig("nolan_base", mode=DecodeMode.NOLAN, policy=AlphaPolicy.constant(1.0))
PLUS = StrategyConfig("nolan_plus", mode=DecodeMode.NOLAN, policy=AlphaPolicy.kl_tanh(0.8))


@contextmanager
def criterion(n, summary):
    try:
        yield
    except BaseException:
        print(f"criterion {n}: FAIL - {summary}")
        raise
    print(f"criterion {n}: PASS - {summary}")


def random_world(seed, max_objects=45):
    rng = np.random.default_rng(seed)
    n_obj = int(rng.integers(3, max_objects + 1))
    objects = tuple(f"w{i:02d}" for i in range(n_obj))
    vocab = build_vocabulary(objects)
    corpus = [
        [objects[int(rng.integers(n_obj))] for _ in range(int(rng.integers(1, 6)))]
        for _ in range(int(rng.integers(3, 10)))
    ]
    prior = compile_prior(
        corpus, vocab,
        kind="bigram" if rng.random() < 0.7 else "unigram",
        smoothing=float(rng.uniform(0.1, 2.0)),
    )
    present = frozenset(
        rng.choice(objects, size=int(rng.integers(1, n_obj)), replace=False).tolist()
    )
    scene = Scene(
        scene_id=f"w-{seed}",
        present_objects=present,
        visual_boost=float(rng.uniform(0.5, 6.0)),
        distortion_level=float(rng.choice([0.0, 0.0, 0.5])),
    )
    return rng, vocab, prior, scene


def random_context(rng, vocab):
    ctx = [vocab.bos] + [int(rng.integers(2, vocab.size)) for _ in range(int(rng.integers(0, 4)))]
    if rng.random() < 0.5:
        ctx += [vocab.index("is_there"), int(rng.integers(5, vocab.size))]
    return ctx


def engine_step_dist(mode, policy, src, context, visual_ref, contrast_src=None):
    if mode == "text_only":
        return softmax(src.logits(TEXT_ONLY, context)).probs
    l_m = src.logits(MULTIMODAL, context, visual_ref)
    if mode == "regular":
        return softmax(l_m).probs
    l_u = (
        src.logits(TEXT_ONLY, context)
        if mode == "nolan"
        else contrast_src.logits(MULTIMODAL, context, visual_ref)
    )
    rec = compute_alpha(policy, l_m, l_u)
    return softmax(combine_logits(l_m, l_u, rec.alpha_used)).probs


@pytest.fixture(scope="module")
def table1_evals(testbed, adversarial_suite):
    t0 = time.perf_counter()
    evals = {
        name: evaluate_pope(adversarial_suite, strat, testbed, runs=5, base_seed=0)
        for name, strat in (("regular", REGULAR), ("nolan_base", BASE), ("nolan_plus", PLUS))
    }
    elapsed = time.perf_counter() - t0
    evals["alpha0"] = evaluate_pope(adversarial_suite, ALPHA0, testbed, runs=1)
    return evals, elapsed


def test_criterion_1_oracle_equivalence():
    with criterion(1, "1000 randomized triples match the brute-force oracle in all six modes"):
        t0 = time.perf_counter()
        policies = {
            "constant": AlphaPolicy.constant(1.0),
            "kl_tanh": AlphaPolicy.kl_tanh(0.8),
            "kl_sigmoid": AlphaPolicy.kl_sigmoid(0.8),
        }
        triples = 0
        for seed in range(200):
            rng, vocab, prior, scene = random_world(seed)
            assert vocab.size <= 50
            src = build_sources(scene, prior, vocab)
            distorted = replace(scene, distortion_level=0.75)
            contrast = build_sources(distorted, prior, vocab)
            for _ in range(5):
                ctx = random_context(rng, vocab)
                triples += 1
                checks = [
                    ("regular", policies["constant"], None, None),
                    ("text_only", policies["constant"], None, None),
                    ("nolan", policies["constant"], None, None),
                    ("nolan", policies["kl_tanh"], None, None),
                    ("nolan", policies["kl_sigmoid"], None, None),
                    ("generic_contrast", policies["constant"], contrast, distorted),
                ]
                for mode, policy, c_src, c_scene in checks:
                    got = engine_step_dist(mode, policy, src, ctx, scene.scene_id, c_src)
                    want = oracle_step_distribution(
                        scene, prior, policy, mode, ctx, vocab, contrast_scene=c_scene
                    )
                    assert np.max(np.abs(got - np.array(want))) < 1e-9
        assert triples == 1000
        assert time.perf_counter() - t0 < 60.0


def test_criterion_2_equation_identities(testbed):
    with criterion(2, "alpha=0 == regular bitwise; alpha=1 == softmax(2*l_m - l_u); equal streams fix the softmax"):
        src = testbed.source_for("scene-00")
        prompt = (testbed.vocab.index("is_there"), testbed.vocab.index("obj01"))
        for sampler in (
            SamplerConfig(),
            SamplerConfig(kind=SamplerKind.TEMPERATURE, temperature=1.5),
        ):
            a = decode(
                DecodeRequest(prompt, mode=DecodeMode.NOLAN, policy=AlphaPolicy.constant(0.0),
                              sampler=sampler, visual_ref="scene-00", max_new_tokens=6, seed=9),
                src, testbed.vocab,
            )
            b = decode(
                DecodeRequest(prompt, mode=DecodeMode.REGULAR, sampler=sampler,
                              visual_ref="scene-00", max_new_tokens=6, seed=9),
                src, testbed.vocab,
            )
            assert a.tokens == b.tokens
        ctx = [testbed.vocab.bos, *prompt]
        l_m = src.logits(MULTIMODAL, ctx, "scene-00")
        l_u = src.logits(TEXT_ONLY, ctx)
        assert np.array_equal(
            softmax(combine_logits(l_m, l_u, 0.0)).probs, softmax(l_m).probs
        )

        rng = np.random.default_rng(0)
        for _ in range(100):
            m = LogitVector(rng.normal(0, 4, 8))
            u = LogitVector(rng.normal(0, 4, 8))
            got = softmax(combine_logits(m, u, 1.0)).probs
            want = softmax(LogitVector(2 * m.values - u.values)).probs
            assert np.max(np.abs(got - want)) < 1e-12
            for policy in (AlphaPolicy.constant(1.0), PLUS.policy, AlphaPolicy.kl_sigmoid(0.8)):
                rec = compute_alpha(policy, m, m)
                same = softmax(combine_logits(m, m, rec.alpha_used)).probs
                assert np.max(np.abs(same - softmax(m).probs)) < 1e-12


def test_criterion_3_alpha_policy_bounds():
    with criterion(3, "kl_tanh alpha in (beta, 2*beta], exact limit at gamma=0, monotone, 1.4093 at gamma=1"):
        for beta in (0.2, 0.8, 1.5):
            policy = AlphaPolicy.kl_tanh(beta)
            assert alpha_from_gamma(policy, 0.0) == 2 * beta
            grid = np.linspace(1e-4, 20, 100)
            alphas = [alpha_from_gamma(policy, float(g)) for g in grid]
            assert all(beta < a <= 2 * beta for a in alphas)
            assert all(a > b for a, b in zip(alphas, alphas[1:]))
        assert alpha_from_gamma(AlphaPolicy.kl_tanh(0.8), 1.0) == pytest.approx(1.4093, abs=1e-3)


def test_criterion_4_divergence_math():
    with criterion(4, "Gibbs inequality, JS <= ln 2, symmetry, and the worked divergence values"):
        rng = np.random.default_rng(1)
        for _ in range(200):
            size = int(rng.integers(2, 10))
            p = ProbDist(rng.dirichlet(np.ones(size)))
            q = ProbDist(rng.dirichlet(np.ones(size)))
            assert kl_divergence(p, q) >= 0.0
            js = js_divergence(p, q)
            assert js <= math.log(2) + 1e-12
            assert js == pytest.approx(js_divergence(q, p), abs=1e-12)
        p, q = ProbDist([0.9, 0.1]), ProbDist([0.5, 0.5])
        assert kl_divergence(p, q) == pytest.approx(0.3681, abs=1e-3)
        assert kl_divergence(q, p) == pytest.approx(0.5108, abs=1e-3)
        assert (kl_divergence(p, q) + kl_divergence(q, p)) / 2 == pytest.approx(0.4394, abs=1e-3)


def test_criterion_5_table1_trend(table1_evals):
    with criterion(5, "calibrated suite: regular 60-75% accuracy, base and plus strictly better, under 30 s"):
        evals, elapsed = table1_evals
        acc = {n: evals[n].metrics.accuracy[0] for n in ("regular", "nolan_base", "nolan_plus")}
        f1 = {n: evals[n].metrics.f1[0] for n in ("regular", "nolan_base", "nolan_plus")}
        assert 0.60 <= acc["regular"] <= 0.75
        assert acc["nolan_base"] > acc["regular"]
        assert acc["nolan_plus"] > acc["regular"]
        assert f1["nolan_base"] > f1["regular"]
        assert f1["nolan_plus"] > f1["regular"]
        assert acc["nolan_plus"] >= acc["nolan_base"]
        assert all(ev.metrics.runs == 5 for n, ev in evals.items() if n != "alpha0")
        assert elapsed < 30.0


def test_criterion_6_table2_ordering(table1_evals):
    with criterion(6, "hallucination-subset stream divergences strictly below the no-hallucination subset"):
        evals, _ = table1_evals
        rep = subset_divergence_report(list(evals["alpha0"].outcomes))
        for key in ("kl_m_u", "kl_u_m", "js"):
            assert rep["hallucination"][key] < rep["no_hallucination"][key]


def test_criterion_7_entropy_ordering(table1_evals):
    with criterion(7, "mean output entropy: nolan_plus <= nolan_base <= regular"):
        evals, _ = table1_evals
        traces = {
            name: [o.result.trace for o in evals[name].outcomes]
            for name in ("regular", "nolan_base", "nolan_plus")
        }
        rep = entropy_report(traces)
        assert rep["nolan_plus"] <= rep["nolan_base"] <= rep["regular"]


def test_criterion_8_mutual_information():
    with criterion(8, "visual-information estimate is 0 without evidence and increases over boosts 1, 2, 4"):
        def mi_for(boost, zero_evidence=False):
            tb = calibrated_testbed(visual_boost=boost)
            suite = tb.adversarial_suite(20, seed=0)
            if zero_evidence:
                class _Blind:
                    vocab = tb.vocab
                    def source_for(self, scene_id):
                        blind = replace(tb.scene(scene_id), distortion_level=1.0)
                        return build_sources(blind, tb.prior, tb.vocab)
                ev = evaluate_pope(suite, BASE, _Blind(), runs=1)
            else:
                ev = evaluate_pope(suite, BASE, tb, runs=1)
            return suite, mutual_information_estimate([o.result.trace for o in ev.outcomes])

        suite_a, mi_zero = mi_for(4.0, zero_evidence=True)
        assert abs(mi_zero) < 1e-12
        suites, mis = zip(*(mi_for(b) for b in (1.0, 2.0, 4.0)))
        assert suites[0] == suites[1] == suites[2] == suite_a  # matched prompts
        assert mis[0] < mis[1] < mis[2]


def test_criterion_9_cost_and_schemas(testbed, adversarial_suite, table1_evals):
    with criterion(9, "exactly 2 queries per token for dual-stream modes, 1 otherwise; report schemas golden-stable"):
        evals, _ = table1_evals
        text_ev = evaluate_pope(
            adversarial_suite[:4],
            StrategyConfig("text_only", mode=DecodeMode.TEXT_ONLY),
            testbed, runs=1,
        )
        rep = timing_report({
            "nolan_base": [o.result for o in evals["nolan_base"].outcomes],
            "nolan_plus": [o.result for o in evals["nolan_plus"].outcomes],
            "regular": [o.result for o in evals["regular"].outcomes],
            "text_only": [o.result for o in text_ev.outcomes],
        })
        assert rep["nolan_base"]["queries_per_token"] == 2.0
        assert rep["nolan_plus"]["queries_per_token"] == 2.0
        assert rep["regular"]["queries_per_token"] == 1.0
        assert rep["text_only"]["queries_per_token"] == 1.0

        rows = [
            {"strategy": "regular", "value": 0.0, "accuracy_mean": 70.0, "n_items": 40},
            {"strategy": "nolan_plus", "value": 1.6, "accuracy_mean": 100.0, "n_items": 40},
        ]
        header = ReportHeader.build({"demo": 1}, [0, 1])
        for fmt in ("records", "csv", "table"):
            golden = (GOLDEN / f"report_{fmt}.golden").read_text()
            assert render_report(rows, header, fmt) == golden

        sweep_rows = sweep("alpha", [1.0], adversarial_suite[:4], testbed,
                           StrategyConfig("s"), runs=1)
        golden_cols = json.loads((GOLDEN / "sweep_columns.golden").read_text())
        assert [sorted(r.keys()) for r in sweep_rows] == [golden_cols] * len(sweep_rows)


@pytest.mark.skipif(
    not FRONTEND_CLI.exists() or shutil.which("node") is None,
    reason="external adapter not built",
)
def test_criterion_10_bridge_round_trip(tmp_path):
    with criterion(10, "20 randomized decodes through the adapter process match the in-process table bitwise"):
        rng = np.random.default_rng(0)
        for case in range(20):
            _, vocab, prior, scene = random_world(100 + case, max_objects=10)
            rec = RecordingSource(build_sources(scene, prior, vocab))
            mode = [DecodeMode.REGULAR, DecodeMode.NOLAN, DecodeMode.NOLAN][case % 3]
            policy = [
                AlphaPolicy.constant(float(rng.uniform(0, 2))),
                AlphaPolicy.kl_tanh(float(rng.uniform(0.2, 1.2))),
                AlphaPolicy.kl_sigmoid(0.8),
            ][case % 3]
            sampler = [
                SamplerConfig(),
                SamplerConfig(kind=SamplerKind.TEMPERATURE, temperature=float(rng.uniform(0.5, 2.0))),
                SamplerConfig(kind=SamplerKind.TOP_K, k=3),
                SamplerConfig(kind=SamplerKind.TOP_P, p=0.9),
            ][case % 4]
            req = DecodeRequest(
                prompt_tokens=(vocab.index("is_there"), int(rng.integers(5, vocab.size))),
                mode=mode,
                policy=policy,
                sampler=sampler,
                visual_ref=scene.scene_id,
                max_new_tokens=int(rng.integers(1, 6)),
                seed=int(rng.integers(0, 2**32)),
            )
            local = decode(req, rec, vocab)

            table = tmp_path / f"table-{case}.json"
            with open(table, "w") as fh:
                dump_table(vocab.size, rec.entries, fh)
            src = connect_stdio(
                ["node", str(FRONTEND_CLI), "--model", "toy", "--toy", str(table)]
            )
            try:
                remote = decode(req, src, vocab)
            finally:
                src.close()
            assert remote.tokens == local.tokens
            assert remote.finish_reason == local.finish_reason
            for a, b in zip(remote.trace, local.trace):
                for name in ("token", "alpha_used", "gamma", "kl_m_u", "kl_u_m",
                             "js", "entropy_final", "entropy_m", "entropy_u"):
                    va, vb = getattr(a, name), getattr(b, name)
                    assert va == vb or (math.isnan(va) and math.isnan(vb))

        # serve-check against the last adapter table's text_only contexts
        probes = [list(ctx) for (mod, ctx) in rec.entries if mod == "text_only"][:3]
        src = connect_stdio(["node", str(FRONTEND_CLI), "--model", "toy", "--toy", str(table)])
        try:
            report = serve_check(src, probe_contexts=probes)
        finally:
            src.close()
        assert report["ok"] is True
        assert report["checks"]["determinism"] is True
        assert report["checks"]["malformed_line_recovery"] is True
