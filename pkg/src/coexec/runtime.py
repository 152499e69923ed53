"""Closed-loop execution: plan, run on the simulator, adapt.

Each frame is planned from the profiler's current predictions, executed
operator by operator with measurement noise, and monitored: when cumulative
observed energy drifts beyond a threshold of the predicted energy, pending
observations are fed to the corrector and the remaining operators are
re-planned under the remaining latency budget. Baseline schemes (fixed
GPU-only, latency-first) share identical per-(frame, op) noise streams so
comparisons are paired.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import CoexecError, ValidationError
from .gru import GruCorrector
from .hwsim import (
    ON_CPU,
    P_BUS_W,
    CostSample,
    ExecutionRecord,
    PartitionDecision,
    comm_cost,
    observe,
    residence_after,
    true_cost,
)
from .model import DeviceSpec, DeviceState, OperatorGraph, WorkloadTrace
from .partitioner import CostFn, DpConfig, dp_partition, latency_min_partition
from .profiler import ProfilerModel, ProfilerPredictor, TrueCostPredictor


class ReplanScope(enum.Enum):
    MID_FRAME = "MidFrame"
    FRAME_BOUNDARY = "FrameBoundary"


class Scheme(enum.Enum):
    GPU_ONLY = "gpu_only"
    LATENCY_MIN = "latency_min"
    ADAPTIVE = "adaptive"


@dataclass(frozen=True)
class AdaptationPolicy:
    latency_budget_s: float
    energy_dev_threshold: float = 0.15
    min_ops_between_replans: int = 3
    replan_scope: ReplanScope = ReplanScope.MID_FRAME

    def __post_init__(self):
        if self.latency_budget_s <= 0:
            raise ValidationError("latency_budget_s must be > 0")
        if self.energy_dev_threshold <= 0:
            raise ValidationError("energy_dev_threshold must be > 0")
        if self.min_ops_between_replans < 1:
            raise ValidationError("min_ops_between_replans must be >= 1")


@dataclass(frozen=True)
class FrameReport:
    frame_idx: int
    records: tuple[ExecutionRecord, ...]
    totals: CostSample
    replans: int
    plan_versions: tuple[int, ...]
    met_budget: bool


@dataclass(frozen=True)
class SessionSummary:
    reports: tuple[FrameReport, ...]
    mean_latency_s: float
    mean_energy_j: float
    total_latency_s: float
    total_energy_j: float
    replan_count: int
    mape_pct: float


def default_latency_budget(graph: OperatorGraph, spec: DeviceSpec,
                           state: DeviceState, margin: float = 1.25) -> float:
    """Budget convention: margin times the noise-free all-GPU frame latency."""
    gpu = PartitionDecision.gpu_only()
    res = ON_CPU
    total = 0.0
    for op in graph.ops:
        cost, res = true_cost(op, gpu, res, spec, state)
        total += cost.latency_s
    return margin * total


def mape_pct_of(records) -> float:
    """Pooled |log(observed/predicted)| over both cost fields, as a percent."""
    errs = []
    for rec in records:
        errs.append(abs(math.log(rec.observed.latency_s / rec.predicted.latency_s)))
        errs.append(abs(math.log(rec.observed.energy_j / rec.predicted.energy_j)))
    if not errs:
        return 0.0
    return 100.0 * (math.exp(sum(errs) / len(errs)) - 1.0)


def _clone_predictor(profiler, spec: DeviceSpec):
    """Private predictor for one session; caller's model is never mutated."""
    if isinstance(profiler, ProfilerModel):
        gru = GruCorrector(**{n: arr.copy() for n, arr in profiler.gru.params().items()})
        clone = ProfilerModel(gbdt_latency=profiler.gbdt_latency,
                              gbdt_energy=profiler.gbdt_energy, gru=gru)
        pred = ProfilerPredictor(clone, spec)
    else:
        pred = profiler
    pred.reset_session()
    return pred


def _decision_grid(cfg: DpConfig) -> tuple[PartitionDecision, ...]:
    return (PartitionDecision.cpu_only(), PartitionDecision.gpu_only(),
            *(PartitionDecision.co_exec(r) for r in cfg.ratio_grid))


def planning_callback(predictor, graph: OperatorGraph, cfg: DpConfig,
                      state: DeviceState, spec: DeviceSpec) -> CostFn:
    """Cost callback over a frozen prediction snapshot plus analytic comm.

    The execution-cost matrix (with the predictor's current corrections
    baked in) is computed once; the callback only adds the bus cost of the
    residence transition, so the planner and the per-op predicted records
    see identical numbers.
    """
    grid = _decision_grid(cfg)
    index = {d: j for j, d in enumerate(grid)}
    lat_m, en_m = predictor.predict_exec_matrix(graph, grid, state)
    # residence gpu-share per grid decision, index-aligned with grid
    shares = np.array([residence_after(d).gpu_share for d in grid])

    def cb(op, d, prev, st):
        comm = comm_cost(prev, residence_after(d), op.input.bytes, spec)
        j = index[d]
        return lat_m[op.id, j] + comm.latency_s, en_m[op.id, j] + comm.energy_j

    def matrix(op, cands, prevs, st):
        # same arithmetic as cb, whole (decision, prev residence) grid at once
        cols = np.array([index[d] for d in cands])
        sp = np.array([r.gpu_share for r in prevs])
        moved = np.abs(shares[cols][:, None] - sp[None, :])
        cl = np.where(moved > 0.0,
                      moved * op.input.bytes / spec.bus_bw + spec.sync_overhead_s,
                      0.0)
        return (lat_m[op.id, cols][:, None] + cl,
                en_m[op.id, cols][:, None] + P_BUS_W * cl)

    cb.matrix = matrix
    return cb


def _frame_rng(master_seed: int, frame_idx: int) -> np.random.Generator:
    # per-frame child streams: every scheme consumes the same draws for the
    # same (frame, op), keeping cross-scheme comparisons paired
    return np.random.default_rng(
        np.random.SeedSequence(master_seed, spawn_key=(frame_idx,)))


def _note(e: BaseException, context: str) -> None:
    if hasattr(e, "add_note"):
        e.add_note(context)


def run_session(graph: OperatorGraph, spec: DeviceSpec, trace: WorkloadTrace,
                profiler, policy: AdaptationPolicy, cfg: DpConfig, seed: int,
                use_corrections: bool = True) -> SessionSummary:
    """Adaptive closed loop over one trace. Deterministic given seed.

    profiler is a ProfilerModel (cloned; the argument is not mutated) or any
    object with the predictor interface (predict_exec_matrix / ingest /
    reset_session / correction). With use_corrections False the corrector
    still ingests observations but its factors are never applied, which
    isolates the corrector's effect under paired noise.
    """
    predictor = _clone_predictor(profiler, spec)
    reports: list[FrameReport] = []
    n = len(graph.ops)
    prev_ingest_state = trace.states[0]
    for t, state in enumerate(trace.states):
        rng = _frame_rng(seed, t)
        try:
            if use_corrections is False and hasattr(predictor, "model"):
                predictor.model.correction = (1.0, 1.0)
            cb = planning_callback(predictor, graph, cfg, state, spec)
            plan = dp_partition(graph, 0, ON_CPU, 0.0, cb, state, spec, cfg)
        except CoexecError as e:
            _note(e, f"while planning frame {t}")
            raise
        decisions = list(plan.decisions)
        records: list[ExecutionRecord] = []
        versions: list[int] = []
        replans = 0
        version = 0
        ops_since_replan = 0
        ingested_upto = 0
        cum_obs_lat = 0.0
        cum_obs_en = 0.0
        cum_pred_en = 0.0
        res = ON_CPU
        for k, op in enumerate(graph.ops):
            d = decisions[k]
            pred_lat, pred_en = cb(op, d, res, state)
            cost, new_res = true_cost(op, d, res, spec, state)
            obs = observe(cost, spec, rng)
            records.append(ExecutionRecord(op_id=op.id, decision=d,
                                           predicted=CostSample(pred_lat, pred_en),
                                           observed=obs, state=state))
            versions.append(version)
            res = new_res
            cum_obs_lat += obs.latency_s
            cum_obs_en += obs.energy_j
            cum_pred_en += pred_en
            ops_since_replan += 1
            if k + 1 >= n or policy.replan_scope is not ReplanScope.MID_FRAME:
                continue
            delta = abs(cum_obs_en - cum_pred_en) / cum_pred_en
            if (delta > policy.energy_dev_threshold
                    and ops_since_replan >= policy.min_ops_between_replans):
                try:
                    for rec in records[ingested_upto:]:
                        predictor.ingest(rec, prev_ingest_state)
                        prev_ingest_state = rec.state
                    ingested_upto = len(records)
                    if use_corrections is False and hasattr(predictor, "model"):
                        predictor.model.correction = (1.0, 1.0)
                    cb = planning_callback(predictor, graph, cfg, state, spec)
                    replanned = dp_partition(graph, k + 1, res, cum_obs_lat,
                                             cb, state, spec, cfg)
                except CoexecError as e:
                    _note(e, f"while re-planning frame {t} after op {k}")
                    raise
                decisions[k + 1:] = list(replanned.decisions)
                replans += 1
                version += 1
                ops_since_replan = 0
        try:
            for rec in records[ingested_upto:]:
                predictor.ingest(rec, prev_ingest_state)
                prev_ingest_state = rec.state
        except CoexecError as e:
            _note(e, f"while ingesting frame {t}")
            raise
        totals = CostSample(cum_obs_lat, cum_obs_en)
        reports.append(FrameReport(
            frame_idx=t, records=tuple(records), totals=totals, replans=replans,
            plan_versions=tuple(versions),
            met_budget=totals.latency_s <= policy.latency_budget_s))
    return _summarize(reports)


def _run_fixed_scheme(graph: OperatorGraph, spec: DeviceSpec,
                      trace: WorkloadTrace, profiler, policy: AdaptationPolicy,
                      cfg: DpConfig, seed: int, scheme: Scheme) -> SessionSummary:
    """GPU-only or latency-first loop: plan per frame, never adapt."""
    predictor = _clone_predictor(profiler, spec)
    reports: list[FrameReport] = []
    for t, state in enumerate(trace.states):
        rng = _frame_rng(seed, t)
        try:
            cb = planning_callback(predictor, graph, cfg, state, spec)
            if scheme is Scheme.GPU_ONLY:
                decisions = tuple(PartitionDecision.gpu_only()
                                  for _ in graph.ops)
            else:
                decisions = latency_min_partition(graph, ON_CPU, cb, state,
                                                  spec, cfg).decisions
        except CoexecError as e:
            _note(e, f"while planning frame {t}")
            raise
        records = []
        res = ON_CPU
        cum_lat = cum_en = 0.0
        for op, d in zip(graph.ops, decisions):
            pred_lat, pred_en = cb(op, d, res, state)
            cost, res = true_cost(op, d, res, spec, state)
            obs = observe(cost, spec, rng)
            records.append(ExecutionRecord(op_id=op.id, decision=d,
                                           predicted=CostSample(pred_lat, pred_en),
                                           observed=obs, state=state))
            cum_lat += obs.latency_s
            cum_en += obs.energy_j
        totals = CostSample(cum_lat, cum_en)
        reports.append(FrameReport(
            frame_idx=t, records=tuple(records), totals=totals, replans=0,
            plan_versions=tuple(0 for _ in records),
            met_budget=totals.latency_s <= policy.latency_budget_s))
    return _summarize(reports)


def run_baseline(graph: OperatorGraph, spec: DeviceSpec, trace: WorkloadTrace,
                 scheme: Scheme, profiler, policy: AdaptationPolicy,
                 cfg: DpConfig, seed: int) -> SessionSummary:
    """One session under the named scheme; identical noise streams per seed."""
    if scheme is Scheme.ADAPTIVE:
        return run_session(graph, spec, trace, profiler, policy, cfg, seed)
    return _run_fixed_scheme(graph, spec, trace, profiler, policy, cfg, seed,
                             scheme)


def _summarize(reports: list[FrameReport]) -> SessionSummary:
    total_lat = sum(r.totals.latency_s for r in reports)
    total_en = sum(r.totals.energy_j for r in reports)
    n = len(reports)
    all_records = [rec for r in reports for rec in r.records]
    return SessionSummary(
        reports=tuple(reports),
        mean_latency_s=total_lat / n,
        mean_energy_j=total_en / n,
        total_latency_s=total_lat,
        total_energy_j=total_en,
        replan_count=sum(r.replans for r in reports),
        mape_pct=mape_pct_of(all_records))
