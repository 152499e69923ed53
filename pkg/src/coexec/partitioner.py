"""Energy-aware operator partitioning over a chain.

The planner is a bottom-up dynamic program whose state is (tensor residence,
discretized cumulative latency). Each stage keeps only the previous stage's
value table (rolling tables); per-stage backpointers reconstruct the plan.
The objective is minimum predicted energy under a hard latency budget; a
latency-first objective and an exhaustive oracle share the same cost
callback and candidate grid.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numba
import numpy as np

from .errors import (
    CostCallbackFailure,
    InvalidArgument,
    InvalidStartIndex,
    SearchSpaceTooLarge,
    ValidationError,
)
from .hwsim import (
    ON_CPU,
    ON_GPU,
    PartitionDecision,
    Residence,
    default_decision_grid,
    residence_after,
    true_cost,
)
from .model import DeviceSpec, DeviceState, Operator, OperatorGraph

# cost callback: (op, decision, prev residence, state) -> (latency_s, energy_j),
# communication from prev residence included
CostFn = Callable[[Operator, PartitionDecision, Residence, DeviceState],
                  tuple[float, float]]

DEFAULT_RATIO_GRID: tuple[float, ...] = tuple(
    d.gpu_fraction for d in default_decision_grid()[2:])

SEARCH_SPACE_GUARD = int(2e7)
_CHUNK = 1_000_000


class Objective(enum.Enum):
    MIN_ENERGY = "MinEnergy"
    MIN_LATENCY = "MinLatency"


@dataclass(frozen=True)
class DpConfig:
    latency_budget_s: float
    bucket_width_s: float
    ratio_grid: tuple[float, ...] = DEFAULT_RATIO_GRID
    objective: Objective = Objective.MIN_ENERGY

    def __post_init__(self):
        if self.latency_budget_s <= 0 or self.bucket_width_s <= 0:
            raise ValidationError("latency_budget_s and bucket_width_s must be > 0")
        if self.bucket_width_s > self.latency_budget_s:
            raise ValidationError("bucket_width_s must not exceed latency_budget_s")
        grid = tuple(float(r) for r in self.ratio_grid)
        if any(not 0.0 < r < 1.0 for r in grid):
            raise ValidationError("ratio_grid entries must lie in (0, 1)")
        if any(a >= b for a, b in zip(grid, grid[1:])):
            raise ValidationError("ratio_grid must be strictly ascending")
        object.__setattr__(self, "ratio_grid", grid)

    @property
    def n_buckets(self) -> int:
        """B: bucket index B is the overflow bucket."""
        return math.ceil(self.latency_budget_s / self.bucket_width_s)


@dataclass(frozen=True)
class PartitionPlan:
    """Per-operator decisions with exactly refolded predicted totals.

    feasible means the planner met the (discretized) latency budget; an
    infeasible plan is the latency-minimizing fallback. predicted totals
    cover the planned operators only, excluding any already-consumed time.
    """
    decisions: tuple[PartitionDecision, ...]
    predicted_latency_s: float
    predicted_energy_j: float
    feasible: bool


@dataclass
class DpStats:
    """Instrumentation filled by dp_partition (rolling-memory accounting)."""
    value_entries_peak: int = 0
    stages: int = 0


def true_cost_callback(spec: DeviceSpec) -> CostFn:
    """Oracle-mode cost callback: the noise-free analytic simulator."""
    def cb(op, d, prev, state):
        cost, _ = true_cost(op, d, prev, spec, state)
        return cost.latency_s, cost.energy_j
    return cb


def candidate_decisions(op: Operator, cfg: DpConfig) -> list[PartitionDecision]:
    """Decision grid for one operator; indivisible ops cannot co-execute."""
    cands = [PartitionDecision.cpu_only(), PartitionDecision.gpu_only()]
    if op.divisible:
        cands.extend(PartitionDecision.co_exec(r) for r in cfg.ratio_grid)
    return cands


def _residences(cfg: DpConfig) -> tuple[Residence, ...]:
    # index-aligned with candidate_decisions: decision j lands in residence j
    return (ON_CPU, ON_GPU, *(Residence.split(r) for r in cfg.ratio_grid))


def _cost_matrix(op: Operator, cands: list[PartitionDecision],
                 prevs: tuple[Residence, ...], cb: CostFn,
                 state: DeviceState) -> tuple[np.ndarray, np.ndarray]:
    batched = getattr(cb, "matrix", None)
    if batched is not None:
        try:
            return batched(op, cands, prevs, state)
        except Exception as e:
            raise CostCallbackFailure(op.id, e) from e
    T = np.empty((len(cands), len(prevs)))
    E = np.empty_like(T)
    for j, d in enumerate(cands):
        for k, prev in enumerate(prevs):
            try:
                T[j, k], E[j, k] = cb(op, d, prev, state)
            except Exception as e:
                raise CostCallbackFailure(op.id, e) from e
    return T, E


def _refold(ops: tuple[Operator, ...], decisions: tuple[PartitionDecision, ...],
            init: Residence, cb: CostFn, state: DeviceState) -> tuple[float, float]:
    """Re-simulate a decision sequence through the cost callback exactly."""
    lat = 0.0
    energy = 0.0
    res = init
    for op, d in zip(ops, decisions):
        try:
            t, e = cb(op, d, res, state)
        except Exception as exc:
            raise CostCallbackFailure(op.id, exc) from exc
        lat += t
        energy += e
        res = residence_after(d)
    return lat, energy


@numba.njit(cache=True)
def _energy_stage(E_prev, L_prev, T, E, w, B, E_new, L_new, dec, res, bkt):
    """One rolling-table stage: relax every (decision, source state) edge.

    Decision order outer, then source residence, then ascending source
    bucket, all with strict improvement: ties resolve to the canonical
    decision order, then the lower source residence, then the lower source
    bucket. Each decision di lands in residence row di.
    """
    n_dec, n_res = T.shape
    for di in range(n_dec):
        for pr in range(n_res):
            t = T[di, pr]
            e = E[di, pr]
            if not (np.isfinite(t) and np.isfinite(e)):
                continue
            for b in range(B):
                ep = E_prev[pr, b]
                if not np.isfinite(ep):
                    continue
                nl = L_prev[pr, b] + t
                nb = int(nl // w)
                if nb >= B:
                    continue
                ne = ep + e
                if ne < E_new[di, nb]:
                    E_new[di, nb] = ne
                    L_new[di, nb] = nl
                    dec[di, nb] = di
                    res[di, nb] = pr
                    bkt[di, nb] = b


@numba.njit(cache=True)
def _latency_stage(L_prev, E_prev, T, E, L_new, E_new, dec, res):
    """Residence-only stage minimizing (latency, energy) lexicographically."""
    n_dec, n_res = T.shape
    for di in range(n_dec):
        for pr in range(n_res):
            lp = L_prev[pr]
            if not np.isfinite(lp):
                continue
            nl = lp + T[di, pr]
            ne = E_prev[pr] + E[di, pr]
            if nl < L_new[di] or (nl == L_new[di] and ne < E_new[di]):
                L_new[di] = nl
                E_new[di] = ne
                dec[di] = di
                res[di] = pr


def dp_partition(graph: OperatorGraph, start: int, init: Residence,
                 consumed_latency_s: float, cost_cb: CostFn, state: DeviceState,
                 spec: DeviceSpec, cfg: DpConfig,
                 stats: DpStats | None = None) -> PartitionPlan:
    """Plan operators start..n-1 minimizing the configured objective.

    MinEnergy: value[residence, bucket] = least energy reaching that state,
    where bucket discretizes consumed + cumulative latency and the overflow
    bucket (all budget-exceeding paths) is pruned. Each state keeps its
    representative path's exact latency, so bucket assignment never drifts
    from the truth. If no state survives, falls back to the latency-first
    plan with feasible = False. MinLatency: residence-only DP minimizing
    (latency, energy) lexicographically; bucket machinery unused.
    """
    n = len(graph.ops)
    if not 0 <= start < n:
        raise InvalidStartIndex(f"start must be in [0, {n}), got {start}")
    if consumed_latency_s < 0:
        raise InvalidArgument("consumed_latency_s must be >= 0")
    ops = graph.ops[start:]
    if cfg.objective is Objective.MIN_LATENCY:
        return _min_latency_dp(ops, init, consumed_latency_s, cost_cb, state,
                               cfg, stats)

    prevs = _residences(cfg)
    n_res = len(prevs)
    B = cfg.n_buckets
    w = cfg.bucket_width_s
    m = len(ops)

    stage_cands: list[list[PartitionDecision]] = []
    bp_dec: list[np.ndarray] = []
    bp_res: list[np.ndarray] = []
    bp_bkt: list[np.ndarray] = []

    E_prev = np.full((n_res, B + 1), np.inf)
    L_prev = np.full((n_res, B + 1), np.inf)
    for i, op in enumerate(ops):
        cands = candidate_decisions(op, cfg)
        stage_cands.append(cands)
        dec = np.full((n_res, B + 1), -1, dtype=np.int16)
        res = np.full((n_res, B + 1), -1, dtype=np.int16)
        bkt = np.full((n_res, B + 1), -1, dtype=np.int32)
        E_new = np.full((n_res, B + 1), np.inf)
        L_new = np.full((n_res, B + 1), np.inf)
        if i == 0:
            T0, E0 = _cost_matrix(op, cands, (init,), cost_cb, state)
            for di in range(len(cands)):
                lat = consumed_latency_s + T0[di, 0]
                b = int(lat // w)
                if b >= B:
                    continue
                if E0[di, 0] < E_new[di, b]:
                    E_new[di, b] = E0[di, 0]
                    L_new[di, b] = lat
                    dec[di, b] = di
        else:
            T, E = _cost_matrix(op, cands, prevs, cost_cb, state)
            _energy_stage(E_prev, L_prev, T, E, w, B, E_new, L_new, dec, res,
                          bkt)
        bp_dec.append(dec)
        bp_res.append(res)
        bp_bkt.append(bkt)
        if not np.isfinite(E_new).any():
            if stats is not None:
                stats.value_entries_peak = (2 if i > 0 else 1) * n_res * (B + 1)
                stats.stages = i + 1
            return _min_latency_dp(ops, init, consumed_latency_s, cost_cb,
                                   state, cfg, None, force_infeasible=True)
        E_prev, L_prev = E_new, L_new

    if stats is not None:
        stats.value_entries_peak = (2 if m > 1 else 1) * n_res * (B + 1)
        stats.stages = m

    # min energy; ties resolved by exact latency, then canonical state order
    rs, bs = np.nonzero(np.isfinite(E_prev))
    k = np.lexsort((bs, rs, L_prev[rs, bs], E_prev[rs, bs]))[0]
    r, b = int(rs[k]), int(bs[k])
    decisions: list[PartitionDecision] = []
    for i in range(m - 1, -1, -1):
        di = int(bp_dec[i][r, b])
        decisions.append(stage_cands[i][di])
        r, b = int(bp_res[i][r, b]), int(bp_bkt[i][r, b])
    decisions.reverse()
    lat, energy = _refold(ops, tuple(decisions), init, cost_cb, state)
    return PartitionPlan(decisions=tuple(decisions), predicted_latency_s=lat,
                         predicted_energy_j=energy, feasible=True)


def _min_latency_dp(ops: tuple[Operator, ...], init: Residence,
                    consumed_latency_s: float, cost_cb: CostFn,
                    state: DeviceState, cfg: DpConfig,
                    stats: DpStats | None,
                    force_infeasible: bool = False) -> PartitionPlan:
    prevs = _residences(cfg)
    n_res = len(prevs)
    m = len(ops)
    stage_cands: list[list[PartitionDecision]] = []
    bp_dec: list[np.ndarray] = []
    bp_res: list[np.ndarray] = []

    L_prev = np.full(n_res, np.inf)
    E_prev = np.full(n_res, np.inf)
    for i, op in enumerate(ops):
        cands = candidate_decisions(op, cfg)
        stage_cands.append(cands)
        dec = np.full(n_res, -1, dtype=np.int16)
        res = np.full(n_res, -1, dtype=np.int16)
        L_new = np.full(n_res, np.inf)
        E_new = np.full(n_res, np.inf)
        if i == 0:
            T0, E0 = _cost_matrix(op, cands, (init,), cost_cb, state)
            for di in range(len(cands)):
                L_new[di] = T0[di, 0]
                E_new[di] = E0[di, 0]
                dec[di] = di
        else:
            T, E = _cost_matrix(op, cands, prevs, cost_cb, state)
            _latency_stage(L_prev, E_prev, T, E, L_new, E_new, dec, res)
        bp_dec.append(dec)
        bp_res.append(res)
        L_prev, E_prev = L_new, E_new
    if stats is not None:
        stats.value_entries_peak = (2 if m > 1 else 1) * n_res
        stats.stages = m

    r = min(range(n_res), key=lambda k: (L_prev[k], E_prev[k], k))
    decisions: list[PartitionDecision] = []
    for i in range(m - 1, -1, -1):
        di = bp_dec[i][r]
        decisions.append(stage_cands[i][di])
        r = bp_res[i][r]
    decisions.reverse()
    lat, energy = _refold(ops, tuple(decisions), init, cost_cb, state)
    feasible = (not force_infeasible
                and consumed_latency_s + lat <= cfg.latency_budget_s)
    return PartitionPlan(decisions=tuple(decisions), predicted_latency_s=lat,
                         predicted_energy_j=energy, feasible=feasible)


def latency_min_partition(graph: OperatorGraph, init: Residence, cost_cb: CostFn,
                          state: DeviceState, spec: DeviceSpec,
                          cfg: DpConfig) -> PartitionPlan:
    """Latency-first baseline: same grid and comm model, latency objective."""
    return dp_partition(graph, 0, init, 0.0, cost_cb, state, spec,
                        replace(cfg, objective=Objective.MIN_LATENCY))


def brute_force_partition(graph: OperatorGraph, init: Residence, cost_cb: CostFn,
                          state: DeviceState, spec: DeviceSpec,
                          cfg: DpConfig) -> PartitionPlan:
    """Exhaustive oracle: evaluate every decision sequence exactly.

    No bucketing; residence threads exactly. MinEnergy returns the least
    energy among budget-feasible sequences (min latency with feasible=False
    if none); MinLatency the lexicographic (latency, energy) minimum. All
    ties break lexicographically by decision sequence.
    """
    ops = graph.ops
    cand_lists = [candidate_decisions(op, cfg) for op in ops]
    sizes = [len(c) for c in cand_lists]
    total = 1
    for s in sizes:
        total *= s
        if total > SEARCH_SPACE_GUARD:
            raise SearchSpaceTooLarge(
                f"{total}+ sequences exceeds guard {SEARCH_SPACE_GUARD}")

    prevs = _residences(cfg)
    T0, E0 = _cost_matrix(ops[0], cand_lists[0], (init,), cost_cb, state)
    mats = [(T0[:, 0], E0[:, 0])]
    for i in range(1, len(ops)):
        # rows: this op's decision; cols: previous op's decision (= residence)
        prev_res = tuple(prevs[j] for j in range(sizes[i - 1]))
        mats.append(_cost_matrix(ops[i], cand_lists[i], prev_res, cost_cb, state))

    # mixed radix, most-significant digit = op 0: numeric order of sequence
    # index is lexicographic order of decision sequences
    place = np.empty(len(ops), dtype=np.int64)
    acc = 1
    for i in range(len(ops) - 1, -1, -1):
        place[i] = acc
        acc *= sizes[i]

    budget = cfg.latency_budget_s
    best_feas: tuple[float, int] | None = None       # (energy, seq index)
    best_lat: tuple[float, float, int] | None = None  # (latency, energy, idx)
    for lo in range(0, total, _CHUNK):
        idx = np.arange(lo, min(lo + _CHUNK, total), dtype=np.int64)
        digits = [(idx // place[i]) % sizes[i] for i in range(len(ops))]
        lat = mats[0][0][digits[0]].copy()
        energy = mats[0][1][digits[0]].copy()
        for i in range(1, len(ops)):
            Ti, Ei = mats[i]
            lat += Ti[digits[i], digits[i - 1]]
            energy += Ei[digits[i], digits[i - 1]]
        if cfg.objective is Objective.MIN_LATENCY:
            k = int(np.lexsort((energy, lat))[0])
            cand = (float(lat[k]), float(energy[k]), lo + k)
            if best_lat is None or cand[:2] < best_lat[:2]:
                best_lat = cand
        else:
            feas = lat <= budget
            if feas.any():
                en_f = np.where(feas, energy, np.inf)
                k = int(np.argmin(en_f))
                if best_feas is None or float(en_f[k]) < best_feas[0]:
                    best_feas = (float(en_f[k]), lo + k)
            if best_feas is None:
                k = int(np.lexsort((energy, lat))[0])
                cand = (float(lat[k]), float(energy[k]), lo + k)
                if best_lat is None or cand[:2] < best_lat[:2]:
                    best_lat = cand

    if cfg.objective is Objective.MIN_LATENCY:
        seq = best_lat[2]
        feasible = best_lat[0] <= budget
    elif best_feas is not None:
        seq = best_feas[1]
        feasible = True
    else:
        seq = best_lat[2]
        feasible = False
    decisions = tuple(cand_lists[i][(seq // int(place[i])) % sizes[i]]
                      for i in range(len(ops)))
    lat, energy = _refold(ops, decisions, init, cost_cb, state)
    return PartitionPlan(decisions=decisions, predicted_latency_s=lat,
                         predicted_energy_j=energy, feasible=feasible)


def plan_to_dict(plan: PartitionPlan) -> dict:
    return {
        "decisions": [{"mode": d.mode.value, "gpu_fraction": d.gpu_fraction}
                      for d in plan.decisions],
        "predicted_latency_s": plan.predicted_latency_s,
        "predicted_energy_j": plan.predicted_energy_j,
        "feasible": plan.feasible,
    }


def plan_from_dict(data: dict) -> PartitionPlan:
    from .hwsim import PartitionMode
    try:
        decisions = tuple(
            PartitionDecision(PartitionMode(d["mode"]), float(d["gpu_fraction"]))
            for d in data["decisions"])
        return PartitionPlan(decisions=decisions,
                             predicted_latency_s=float(data["predicted_latency_s"]),
                             predicted_energy_j=float(data["predicted_energy_j"]),
                             feasible=bool(data["feasible"]))
    except (KeyError, TypeError, ValueError) as e:
        raise ValidationError(f"malformed plan: {e}") from None
