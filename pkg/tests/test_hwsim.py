import dataclasses
import json
import math
import pathlib

import numpy as np
import pytest

from coexec.errors import IndivisibleOperator, ValidationError
from coexec.hwsim import (
    ON_CPU,
    ON_GPU,
    CostSample,
    P_BUS_W,
    PartitionDecision,
    PartitionMode,
    Residence,
    comm_cost,
    execute_plan,
    moved_fraction,
    observe,
    residence_after,
    true_cost,
)
from coexec.model import (
    DeviceState,
    OpKind,
    Operator,
    TensorSpec,
    preset_state,
    soc_default,
    synth_yolo_like,
)

GOLDEN = pathlib.Path(__file__).resolve().parent.parent / "golden/hwsim_yolo_gpuonly.json"


def make_op(flops=1e8, bin_=1_000_000, bout=1_000_000, kind=OpKind.CONV, divisible=True):
    return Operator(id=0, kind=kind, flops=flops, input=TensorSpec(bin_),
                    output=TensorSpec(bout), divisible=divisible)


def noise_free(spec):
    return dataclasses.replace(spec, noise_sigma=0.0)


GRID = [PartitionDecision.cpu_only(), PartitionDecision.gpu_only()] + [
    PartitionDecision.co_exec(round(0.1 * i, 1)) for i in range(1, 10)]


# --- decisions and residences ---

def test_decision_mode_fraction_coupling():
    with pytest.raises(ValidationError):
        PartitionDecision(PartitionMode.CO_EXEC, 1.0)
    with pytest.raises(ValidationError):
        PartitionDecision(PartitionMode.CO_EXEC, 0.0)
    with pytest.raises(ValidationError):
        PartitionDecision(PartitionMode.CPU_ONLY, 0.5)
    assert PartitionDecision.co_exec(0.3).gpu_fraction == 0.3


def test_residence_share_coupling():
    with pytest.raises(ValidationError):
        Residence.split(0.0)
    with pytest.raises(ValidationError):
        Residence.split(1.0)
    assert residence_after(PartitionDecision.cpu_only()) == ON_CPU
    assert residence_after(PartitionDecision.gpu_only()) == ON_GPU
    assert residence_after(PartitionDecision.co_exec(0.4)) == Residence.split(0.4)


def test_moved_fraction_table():
    sp = Residence.split
    assert moved_fraction(ON_CPU, ON_CPU) == 0.0
    assert moved_fraction(ON_CPU, ON_GPU) == 1.0
    assert moved_fraction(ON_CPU, sp(0.3)) == 0.3
    assert moved_fraction(ON_GPU, ON_GPU) == 0.0
    assert moved_fraction(ON_GPU, ON_CPU) == 1.0
    assert moved_fraction(ON_GPU, sp(0.3)) == pytest.approx(0.7)
    assert moved_fraction(sp(0.6), ON_CPU) == 0.6
    assert moved_fraction(sp(0.6), ON_GPU) == pytest.approx(0.4)
    assert moved_fraction(sp(0.6), sp(0.6)) == 0.0
    assert moved_fraction(sp(0.9), sp(0.6)) == pytest.approx(0.3)


# --- comm_cost ---

def test_comm_cost_no_move_is_free():
    spec = soc_default()
    assert comm_cost(ON_CPU, ON_CPU, 10**9, spec) == CostSample(0.0, 0.0)
    assert comm_cost(Residence.split(0.6), Residence.split(0.6), 10**9, spec) \
        == CostSample(0.0, 0.0)


def test_comm_cost_full_move_formula():
    spec = soc_default()
    c = comm_cost(ON_CPU, ON_GPU, 1_000_000, spec)
    assert c.latency_s == pytest.approx(1e6 / 5e9 + 1e-4)
    assert c.energy_j == pytest.approx(0.8 * (1e6 / 5e9 + 1e-4))


def test_comm_cost_rejects_negative_bytes():
    with pytest.raises(ValidationError):
        comm_cost(ON_CPU, ON_GPU, -1, soc_default())


# --- true_cost ---

def test_cpu_only_compute_bound_latency():
    # pure-compute op on a busy CPU: t = flops / (fpc * freq * (1 - util))
    spec = soc_default()
    st = DeviceState(cpu_freq=1.49e9, gpu_freq=4.99e8, cpu_util=0.788, gpu_util=0.1)
    op = make_op(flops=1e9, bin_=0, bout=0)
    cost, res = true_cost(op, PartitionDecision.cpu_only(), ON_CPU, spec, st)
    assert cost.latency_s == pytest.approx(1e9 / (32 * 1.49e9 * 0.212), rel=1e-6)
    assert res == ON_CPU


def test_indivisible_rejects_co_exec():
    op = make_op(divisible=False)
    with pytest.raises(IndivisibleOperator, match="op 0"):
        true_cost(op, PartitionDecision.co_exec(0.5), ON_CPU, soc_default(),
                  preset_state("moderate"))


def test_costs_strictly_positive():
    spec = soc_default()
    st = preset_state("high")
    for op in synth_yolo_like().ops:
        for d in GRID:
            if d.mode is PartitionMode.CO_EXEC and not op.divisible:
                continue
            cost, _ = true_cost(op, d, ON_CPU, spec, st)
            assert cost.latency_s > 0 and cost.energy_j > 0


def test_latency_monotone_in_utilization():
    spec = soc_default()
    op = make_op(flops=5e8)
    lats = []
    for util in np.linspace(0.0, 0.95, 12):
        st = DeviceState(cpu_freq=1e9, gpu_freq=5e8, cpu_util=float(util), gpu_util=0.1)
        cost, _ = true_cost(op, PartitionDecision.cpu_only(), ON_CPU, spec, st)
        lats.append(cost.latency_s)
    assert all(b >= a for a, b in zip(lats, lats[1:]))


def test_latency_monotone_in_frequency_and_power_strictly_increasing():
    spec = soc_default()
    op = make_op(flops=5e8)
    lats, energies_per_second = [], []
    for f in np.linspace(4e8, 2e9, 10):
        st = DeviceState(cpu_freq=float(f), gpu_freq=5e8, cpu_util=0.5, gpu_util=0.1)
        cost, _ = true_cost(op, PartitionDecision.cpu_only(), ON_CPU, spec, st)
        lats.append(cost.latency_s)
        # active power = energy / time minus the constant idle share
        energies_per_second.append(cost.energy_j / cost.latency_s - spec.p_idle)
    assert all(b <= a for a, b in zip(lats, lats[1:]))
    assert all(b > a for a, b in zip(energies_per_second, energies_per_second[1:]))


def test_co_exec_converges_to_gpu_only_at_boundary():
    # closed-form check: as r -> 1 the CPU share vanishes and latency tends to
    # the GpuOnly value plus the sync barrier
    spec = soc_default()
    st = preset_state("high")
    op = make_op(flops=5e9, bin_=50_000_000, bout=50_000_000)
    gpu_cost, _ = true_cost(op, PartitionDecision.gpu_only(), ON_GPU, spec, st)
    co_cost, _ = true_cost(op, PartitionDecision.co_exec(0.999), ON_GPU, spec, st)
    assert abs(co_cost.latency_s - gpu_cost.latency_s) / gpu_cost.latency_s < 0.01
    with pytest.raises(ValidationError):
        PartitionDecision.co_exec(1.0)


def test_insight_co_exec_faster_but_costlier_exists():
    # the module's reason to exist: some operator + split is faster than either
    # single-processor choice yet burns more energy than the cheapest one
    spec = soc_default()
    st = preset_state("high")
    found = False
    for op in synth_yolo_like().ops:
        if not op.divisible:
            continue
        singles = [true_cost(op, d, residence_after(d), spec, st)[0]
                   for d in GRID[:2]]
        best_single_lat = min(c.latency_s for c in singles)
        best_single_energy = min(c.energy_j for c in singles)
        for d in GRID[2:]:
            c, _ = true_cost(op, d, residence_after(d), spec, st)
            if c.latency_s < best_single_lat and c.energy_j > best_single_energy:
                found = True
    assert found


def test_noise_free_determinism():
    spec = noise_free(soc_default())
    st = preset_state("moderate")
    op = make_op()
    a, _ = true_cost(op, PartitionDecision.co_exec(0.5), ON_CPU, spec, st)
    b, _ = true_cost(op, PartitionDecision.co_exec(0.5), ON_CPU, spec, st)
    assert a == b


# --- observe ---

def test_observe_zero_sigma_is_identity():
    spec = noise_free(soc_default())
    c = CostSample(0.123, 0.456)
    assert observe(c, spec, np.random.default_rng(0)) == c


def test_observe_log_ratio_centered():
    spec = soc_default()
    c = CostSample(0.1, 0.2)
    rng = np.random.default_rng(11)
    logs = [math.log(observe(c, spec, rng).latency_s / 0.1) for _ in range(10000)]
    assert abs(np.mean(logs)) < 0.005


def test_observe_deterministic_given_seed():
    spec = soc_default()
    c = CostSample(0.1, 0.2)
    a = observe(c, spec, np.random.default_rng(99))
    b = observe(c, spec, np.random.default_rng(99))
    assert a == b


# --- execute_plan ---

def test_execute_single_op_plan_matches_true_cost():
    spec = noise_free(soc_default())
    st = preset_state("moderate")
    op = make_op()
    from coexec.model import OperatorGraph
    g = OperatorGraph(name="one", ops=(op,))
    records, totals = execute_plan(g, [PartitionDecision.gpu_only()], spec, st,
                                   np.random.default_rng(0))
    expected, _ = true_cost(op, PartitionDecision.gpu_only(), ON_CPU, spec, st)
    assert totals == expected
    assert records[0].predicted == records[0].observed == expected


def test_execute_plan_length_mismatch():
    g = synth_yolo_like()
    with pytest.raises(ValidationError):
        execute_plan(g, [PartitionDecision.gpu_only()] * 3, soc_default(),
                     preset_state("moderate"), np.random.default_rng(0))


def test_execute_plan_conserves_noise_free_totals():
    spec = noise_free(soc_default())
    st = preset_state("high")
    g = synth_yolo_like()
    plan = [PartitionDecision.gpu_only()] * len(g.ops)
    records, totals = execute_plan(g, plan, spec, st, np.random.default_rng(0))
    assert totals.latency_s == pytest.approx(
        sum(r.observed.latency_s for r in records), rel=1e-12)
    assert all(r.predicted == r.observed for r in records)


def test_execute_plan_propagates_indivisible_with_op_id():
    g = synth_yolo_like()
    bad = next(op for op in g.ops if not op.divisible)
    plan = [PartitionDecision.gpu_only()] * len(g.ops)
    plan[bad.id] = PartitionDecision.co_exec(0.5)
    with pytest.raises(IndivisibleOperator, match=f"op {bad.id}"):
        execute_plan(g, plan, noise_free(soc_default()), preset_state("moderate"),
                     np.random.default_rng(0))


def test_golden_gpu_only_moderate():
    golden = json.loads(GOLDEN.read_text())
    g = synth_yolo_like()
    spec = noise_free(soc_default())
    plan = [PartitionDecision.gpu_only()] * len(g.ops)
    _, totals = execute_plan(g, plan, spec, preset_state("moderate"),
                             np.random.default_rng(0))
    assert totals.latency_s == pytest.approx(golden["latency_s"], rel=1e-9)
    assert totals.energy_j == pytest.approx(golden["energy_j"], rel=1e-9)


def test_bus_power_constant():
    assert P_BUS_W == 0.8
