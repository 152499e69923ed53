"""Closed-loop runtime: pairing, causality, accounting, and adaptation."""

import math
from dataclasses import replace

import numpy as np
import pytest

from coexec.errors import ValidationError
from coexec.hwsim import ON_CPU, PartitionDecision, observe, residence_after, true_cost
from coexec.model import TraceKind, gen_trace, preset_state, soc_default, synth_yolo_like
from coexec.partitioner import DpConfig
from coexec.profiler import TrueCostPredictor
from coexec.runtime import (
    AdaptationPolicy,
    ReplanScope,
    Scheme,
    default_latency_budget,
    mape_pct_of,
    run_baseline,
    run_session,
)

SPEC = soc_default()
GRAPH = synth_yolo_like()
BASE = preset_state("moderate")


def make_policy(spec, state, margin=1.25, **kw):
    budget = default_latency_budget(GRAPH, spec, state, margin)
    cfg = DpConfig(latency_budget_s=budget, bucket_width_s=budget / 200)
    return AdaptationPolicy(latency_budget_s=budget, **kw), cfg


def test_policy_validation():
    with pytest.raises(ValidationError):
        AdaptationPolicy(latency_budget_s=0.0)
    with pytest.raises(ValidationError):
        AdaptationPolicy(latency_budget_s=1.0, energy_dev_threshold=0.0)
    with pytest.raises(ValidationError):
        AdaptationPolicy(latency_budget_s=1.0, min_ops_between_replans=0)


def test_default_budget_is_margin_times_gpu_latency():
    gpu = PartitionDecision.gpu_only()
    res = ON_CPU
    total = 0.0
    for op in GRAPH.ops:
        cost, res = true_cost(op, gpu, res, SPEC, BASE)
        total += cost.latency_s
    assert default_latency_budget(GRAPH, SPEC, BASE, 1.5) == pytest.approx(
        1.5 * total, rel=1e-12)


def test_zero_noise_true_cost_oracle_never_replans():
    spec = replace(SPEC, noise_sigma=0.0)
    policy, cfg = make_policy(spec, BASE)
    trace = gen_trace(TraceKind.STATIONARY, BASE, 5, 0)
    s = run_session(GRAPH, spec, trace, TrueCostPredictor(spec), policy, cfg, 0)
    assert s.replan_count == 0
    # noise-free true-cost plans inherit the planner's latency guarantee
    slack = len(GRAPH.ops) * cfg.bucket_width_s
    for r in s.reports:
        assert r.totals.latency_s <= policy.latency_budget_s + slack
        assert r.met_budget == (r.totals.latency_s <= policy.latency_budget_s)


def test_threshold_inf_equals_plan_once_per_frame():
    trace = gen_trace(TraceKind.DRIFT, BASE, 5, 3)
    prof = TrueCostPredictor(SPEC)
    pol_inf, cfg = make_policy(SPEC, BASE, energy_dev_threshold=math.inf)
    pol_fb, _ = make_policy(SPEC, BASE, replan_scope=ReplanScope.FRAME_BOUNDARY)
    a = run_session(GRAPH, SPEC, trace, prof, pol_inf, cfg, 11)
    b = run_session(GRAPH, SPEC, trace, prof, pol_fb, cfg, 11)
    assert a.replan_count == b.replan_count == 0
    for ra, rb in zip(a.reports, b.reports):
        assert ra.records == rb.records
        assert ra.plan_versions == rb.plan_versions


def _noise_factors(summary, spec):
    """observed/true per (frame, op), folding residence through each frame."""
    out = []
    for r in summary.reports:
        res = ON_CPU
        for rec in r.records:
            cost, res = true_cost(GRAPH.ops[rec.op_id], rec.decision, res,
                                  spec, rec.state)
            out.append((r.frame_idx, rec.op_id,
                        rec.observed.latency_s / cost.latency_s,
                        rec.observed.energy_j / cost.energy_j))
    return out


def test_noise_streams_are_paired_across_schemes():
    trace = gen_trace(TraceKind.STATIONARY, BASE, 4, 5)
    prof = TrueCostPredictor(SPEC)
    policy, cfg = make_policy(SPEC, BASE)
    runs = [run_baseline(GRAPH, SPEC, trace, sch, prof, policy, cfg, 5)
            for sch in (Scheme.GPU_ONLY, Scheme.LATENCY_MIN)]
    fa, fb = (_noise_factors(s, SPEC) for s in runs)
    for (fr_a, op_a, la, ea), (fr_b, op_b, lb, eb) in zip(fa, fb):
        assert (fr_a, op_a) == (fr_b, op_b)
        assert la == pytest.approx(lb, rel=1e-9)
        assert ea == pytest.approx(eb, rel=1e-9)


def test_gpu_only_single_frame_matches_manual_execution():
    trace = gen_trace(TraceKind.STATIONARY, BASE, 1, 9)
    policy, cfg = make_policy(SPEC, BASE)
    s = run_baseline(GRAPH, SPEC, trace, Scheme.GPU_ONLY,
                     TrueCostPredictor(SPEC), policy, cfg, 9)
    rng = np.random.default_rng(np.random.SeedSequence(9, spawn_key=(0,)))
    res = ON_CPU
    lat = en = 0.0
    for op in GRAPH.ops:
        cost, res = true_cost(op, PartitionDecision.gpu_only(), res, SPEC,
                              trace.states[0])
        obs = observe(cost, SPEC, rng)
        lat += obs.latency_s
        en += obs.energy_j
    assert s.reports[0].totals.latency_s == pytest.approx(lat, rel=1e-12)
    assert s.reports[0].totals.energy_j == pytest.approx(en, rel=1e-12)


def test_summary_accounting_matches_reports():
    trace = gen_trace(TraceKind.DRIFT, BASE, 6, 2)
    policy, cfg = make_policy(SPEC, BASE)
    s = run_session(GRAPH, SPEC, trace, TrueCostPredictor(SPEC), policy, cfg, 2)
    assert s.total_latency_s == sum(r.totals.latency_s for r in s.reports)
    assert s.total_energy_j == sum(r.totals.energy_j for r in s.reports)
    assert s.mean_latency_s == pytest.approx(s.total_latency_s / 6, rel=1e-12)
    assert s.replan_count == sum(r.replans for r in s.reports)
    all_records = [rec for r in s.reports for rec in r.records]
    assert s.mape_pct == mape_pct_of(all_records)
    for r in s.reports:
        assert r.totals.latency_s == pytest.approx(
            sum(rec.observed.latency_s for rec in r.records), rel=1e-12)
        assert r.totals.energy_j == pytest.approx(
            sum(rec.observed.energy_j for rec in r.records), rel=1e-12)


def test_step_trace_replans_and_saves_energy(step_rig):
    """After a mid-trace CPU slowdown, the adaptive loop must both react
    (replan at least once post-step) and profit (no more total energy than
    the same session with the trigger disabled)."""
    trace = gen_trace(TraceKind.STEP, step_rig.base, 50, 7)
    pol = AdaptationPolicy(latency_budget_s=step_rig.budget_s)
    pol_off = AdaptationPolicy(latency_budget_s=step_rig.budget_s,
                               energy_dev_threshold=math.inf)
    s = run_session(step_rig.graph, step_rig.spec, trace, step_rig.profiler,
                    pol, step_rig.cfg, 7)
    s_off = run_session(step_rig.graph, step_rig.spec, trace, step_rig.profiler,
                        pol_off, step_rig.cfg, 7)
    post_replans = sum(r.replans for r in s.reports if r.frame_idx >= 25)
    assert post_replans >= 1
    assert s.total_energy_j <= s_off.total_energy_j
    assert s_off.replan_count == 0


def test_replan_causality_and_version_bookkeeping(step_rig):
    trace = gen_trace(TraceKind.STEP, step_rig.base, 50, 7)
    pol = AdaptationPolicy(latency_budget_s=step_rig.budget_s)
    s = run_session(step_rig.graph, step_rig.spec, trace, step_rig.profiler,
                    pol, step_rig.cfg, 7)
    n = len(step_rig.graph.ops)
    for r in s.reports:
        assert len(r.records) == len(r.plan_versions) == n
        assert r.plan_versions[0] == 0
        assert all(b - a in (0, 1) for a, b in
                   zip(r.plan_versions, r.plan_versions[1:]))
        assert r.replans == r.plan_versions[-1]
        # hysteresis: version bumps are at least min_ops_between_replans apart
        bumps = [i for i in range(1, n)
                 if r.plan_versions[i] > r.plan_versions[i - 1]]
        assert all(b2 - b1 >= pol.min_ops_between_replans
                   for b1, b2 in zip(bumps, bumps[1:]))


def test_session_does_not_mutate_shared_profiler(step_rig):
    hidden_before = step_rig.profiler.gru.hidden.copy()
    corr_before = step_rig.profiler.correction
    trace = gen_trace(TraceKind.STEP, step_rig.base, 10, 3)
    pol = AdaptationPolicy(latency_budget_s=step_rig.budget_s)
    run_session(step_rig.graph, step_rig.spec, trace, step_rig.profiler,
                pol, step_rig.cfg, 3)
    assert np.array_equal(step_rig.profiler.gru.hidden, hidden_before)
    assert step_rig.profiler.correction == corr_before
