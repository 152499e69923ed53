"""Analytic hardware simulator: ground-truth latency and energy per operator.

Stands in for the physical SoC. Compute time follows a roofline model
(compute-rate term vs memory-bandwidth term), power follows a cubic DVFS
model, and cross-processor tensor movement is charged against a shared bus.
Observation noise is multiplicative log-normal, applied per field.

The central behavior: splitting an operator across CPU and GPU can lower its
latency (both processors work in parallel) while raising its energy (two
active processors plus sync), so the fastest decision is not always the
cheapest one.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import IndivisibleOperator, ValidationError
from .model import DeviceSpec, DeviceState, Operator, OperatorGraph, ProcessorSpec

# Bus active power while a transfer is in flight (W). Fixed, not part of
# DeviceSpec: transfers are short and the bus has no DVFS in this model.
P_BUS_W = 0.8


class PartitionMode(enum.Enum):
    CPU_ONLY = "CpuOnly"
    GPU_ONLY = "GpuOnly"
    CO_EXEC = "CoExec"


@dataclass(frozen=True)
class PartitionDecision:
    mode: PartitionMode
    gpu_fraction: float

    def __post_init__(self):
        r = self.gpu_fraction
        if self.mode is PartitionMode.CPU_ONLY and r != 0.0:
            raise ValidationError(f"CpuOnly requires gpu_fraction 0, got {r}")
        if self.mode is PartitionMode.GPU_ONLY and r != 1.0:
            raise ValidationError(f"GpuOnly requires gpu_fraction 1, got {r}")
        if self.mode is PartitionMode.CO_EXEC and not 0.0 < r < 1.0:
            raise ValidationError(f"CoExec requires gpu_fraction in (0,1), got {r}")

    @classmethod
    def cpu_only(cls) -> "PartitionDecision":
        return cls(PartitionMode.CPU_ONLY, 0.0)

    @classmethod
    def gpu_only(cls) -> "PartitionDecision":
        return cls(PartitionMode.GPU_ONLY, 1.0)

    @classmethod
    def co_exec(cls, gpu_fraction: float) -> "PartitionDecision":
        return cls(PartitionMode.CO_EXEC, float(gpu_fraction))

    def describe(self) -> str:
        if self.mode is PartitionMode.CO_EXEC:
            return f"CoExec({self.gpu_fraction:g})"
        return self.mode.value


class ResidenceTag(enum.Enum):
    ON_CPU = "OnCpu"
    ON_GPU = "OnGpu"
    SPLIT = "Split"


@dataclass(frozen=True)
class Residence:
    tag: ResidenceTag
    gpu_share: float

    def __post_init__(self):
        s = self.gpu_share
        if self.tag is ResidenceTag.ON_CPU and s != 0.0:
            raise ValidationError(f"OnCpu requires gpu_share 0, got {s}")
        if self.tag is ResidenceTag.ON_GPU and s != 1.0:
            raise ValidationError(f"OnGpu requires gpu_share 1, got {s}")
        if self.tag is ResidenceTag.SPLIT and not 0.0 < s < 1.0:
            raise ValidationError(f"Split requires gpu_share in (0,1), got {s}")

    @classmethod
    def on_cpu(cls) -> "Residence":
        return cls(ResidenceTag.ON_CPU, 0.0)

    @classmethod
    def on_gpu(cls) -> "Residence":
        return cls(ResidenceTag.ON_GPU, 1.0)

    @classmethod
    def split(cls, gpu_share: float) -> "Residence":
        return cls(ResidenceTag.SPLIT, float(gpu_share))


ON_CPU = Residence.on_cpu()
ON_GPU = Residence.on_gpu()


def default_decision_grid(splits: int = 9) -> tuple[PartitionDecision, ...]:
    """Candidate decisions: CpuOnly, GpuOnly, then CoExec at evenly spaced
    gpu fractions (`splits` interior points)."""
    step = 1.0 / (splits + 1)
    return (PartitionDecision.cpu_only(), PartitionDecision.gpu_only(),
            *(PartitionDecision.co_exec(round(step * i, 12))
              for i in range(1, splits + 1)))


@dataclass(frozen=True)
class CostSample:
    latency_s: float
    energy_j: float

    def __post_init__(self):
        if self.latency_s < 0 or self.energy_j < 0:
            raise ValidationError("cost fields must be >= 0")
        if not (math.isfinite(self.latency_s) and math.isfinite(self.energy_j)):
            raise ValidationError("cost fields must be finite")


ZERO_COST = CostSample(0.0, 0.0)


@dataclass(frozen=True)
class ExecutionRecord:
    op_id: int
    decision: PartitionDecision
    predicted: CostSample
    observed: CostSample
    state: DeviceState


def residence_after(d: PartitionDecision) -> Residence:
    """Where the operator's output lands under decision d."""
    if d.mode is PartitionMode.CPU_ONLY:
        return ON_CPU
    if d.mode is PartitionMode.GPU_ONLY:
        return ON_GPU
    return Residence.split(d.gpu_fraction)


def moved_fraction(prev: Residence, need: Residence) -> float:
    """Fraction of the input tensor that must cross the bus.

    Both residences reduce to a gpu-share coordinate (OnCpu=0, OnGpu=1,
    Split=r); the moved fraction is the absolute share difference, which
    reproduces the full transition table: OnCpu->OnGpu moves 1, OnCpu->Split(r)
    moves r, Split(q)->Split(r) moves |r-q|, and same-residence moves 0.
    """
    return abs(need.gpu_share - prev.gpu_share)


def comm_cost(prev: Residence, need: Residence, nbytes: int, spec: DeviceSpec) -> CostSample:
    """Bus cost of re-homing an input tensor from prev to need."""
    if nbytes < 0:
        raise ValidationError(f"comm bytes must be >= 0, got {nbytes}")
    m = moved_fraction(prev, need)
    if m == 0.0:
        return ZERO_COST
    latency = m * nbytes / spec.bus_bw + spec.sync_overhead_s
    return CostSample(latency_s=latency, energy_j=P_BUS_W * latency)


def active_power(proc: ProcessorSpec, freq: float) -> float:
    """Active power at the given frequency: static floor plus cubic DVFS term."""
    return proc.p_static + proc.k_dyn * (freq / proc.f_max) ** 3


def _proc_time(share: float, op: Operator, proc: ProcessorSpec,
               freq: float, util: float) -> float:
    """Roofline time for one processor's share of an operator."""
    if share == 0.0:
        return 0.0
    t_comp = share * op.flops / (proc.flops_per_cycle * freq * (1.0 - util))
    t_mem = share * op.total_bytes / proc.mem_bw
    return max(t_comp, t_mem)


def true_cost(op: Operator, d: PartitionDecision, prev: Residence,
              spec: DeviceSpec, state: DeviceState) -> tuple[CostSample, Residence]:
    """Noise-free cost of running op under decision d, plus the output residence.

    Total latency = input-movement cost + execution latency, where execution
    latency is max of the per-processor roofline times plus a sync barrier when
    both processors are engaged. Energy charges each engaged processor for its
    busy time, the board idle floor for the execution window, and the bus for
    the movement.
    """
    if d.mode is PartitionMode.CO_EXEC and not op.divisible:
        raise IndivisibleOperator(f"op {op.id} is not divisible; CoExec not allowed")
    need = residence_after(d)
    comm = comm_cost(prev, need, op.input.bytes, spec)
    t_cpu = _proc_time(1.0 - d.gpu_fraction, op, spec.cpu, state.cpu_freq, state.cpu_util)
    t_gpu = _proc_time(d.gpu_fraction, op, spec.gpu, state.gpu_freq, state.gpu_util)
    exec_lat = max(t_cpu, t_gpu)
    if d.mode is PartitionMode.CO_EXEC:
        exec_lat += spec.sync_overhead_s
    energy = (active_power(spec.cpu, state.cpu_freq) * t_cpu
              + active_power(spec.gpu, state.gpu_freq) * t_gpu
              + spec.p_idle * exec_lat
              + comm.energy_j)
    return CostSample(comm.latency_s + exec_lat, energy), need


def observe(cost: CostSample, spec: DeviceSpec, rng: np.random.Generator) -> CostSample:
    """Apply multiplicative log-normal measurement noise to each cost field.

    Always draws two normals (latency first, then energy) so rng consumption
    is independent of noise_sigma; sigma 0 returns the input exactly.
    """
    eps = rng.standard_normal(2)
    return CostSample(cost.latency_s * math.exp(spec.noise_sigma * eps[0]),
                      cost.energy_j * math.exp(spec.noise_sigma * eps[1]))


def execute_plan(graph: OperatorGraph, plan: list[PartitionDecision] | tuple[PartitionDecision, ...],
                 spec: DeviceSpec, state: DeviceState,
                 rng: np.random.Generator) -> tuple[list[ExecutionRecord], CostSample]:
    """Run a full plan over the chain, threading tensor residence.

    The first operator's input arrives in host memory (OnCpu). Records carry
    the noise-free cost as `predicted` and the noisy measurement as `observed`;
    totals sum the observed fields.
    """
    if len(plan) != len(graph.ops):
        raise ValidationError(f"plan length {len(plan)} != graph size {len(graph.ops)}")
    res = ON_CPU
    records: list[ExecutionRecord] = []
    total_lat = 0.0
    total_energy = 0.0
    for op, d in zip(graph.ops, plan):
        cost, res = true_cost(op, d, res, spec, state)
        obs = observe(cost, spec, rng)
        records.append(ExecutionRecord(op_id=op.id, decision=d, predicted=cost,
                                       observed=obs, state=state))
        total_lat += obs.latency_s
        total_energy += obs.energy_j
    return records, CostSample(total_lat, total_energy)
