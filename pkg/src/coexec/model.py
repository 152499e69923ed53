"""Workload and device model: operator chains, processor specs, state traces.

Operator graphs are linear chains (each op consumes the previous op's output).
Device specs describe a two-processor SoC (CPU + GPU on a shared bus); device
states carry the dynamic frequency/utilization operating point, and traces are
per-frame state sequences produced by a seeded generator.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import InvalidArgument, ParseError, UnknownPreset, ValidationError

BUILTIN_PREFIX = "builtin:"


class OpKind(enum.Enum):
    CONV = "Conv"
    DEPTHWISE_CONV = "DepthwiseConv"
    FULLY_CONNECTED = "FullyConnected"
    POOL = "Pool"
    ELEMENTWISE = "Elementwise"
    REORG = "Reorg"


class ProcKind(enum.Enum):
    CPU = "Cpu"
    GPU = "Gpu"


class TraceKind(enum.Enum):
    STATIONARY = "Stationary"
    DRIFT = "Drift"
    STEP = "Step"


@dataclass(frozen=True)
class TensorSpec:
    bytes: int

    def __post_init__(self):
        if not isinstance(self.bytes, int) or self.bytes < 0:
            raise ValidationError(f"tensor bytes must be a non-negative int, got {self.bytes!r}")


@dataclass(frozen=True)
class Operator:
    id: int
    kind: OpKind
    flops: float
    input: TensorSpec
    output: TensorSpec
    divisible: bool

    def __post_init__(self):
        if self.flops < 0:
            raise ValidationError(f"op {self.id}: flops must be >= 0, got {self.flops}")
        # Only pure data movement may have zero compute.
        if self.flops == 0 and self.kind is not OpKind.REORG:
            raise ValidationError(f"op {self.id}: zero flops only allowed for Reorg")

    @property
    def total_bytes(self) -> int:
        return self.input.bytes + self.output.bytes


@dataclass(frozen=True)
class OperatorGraph:
    name: str
    ops: tuple[Operator, ...]

    def __post_init__(self):
        if not self.ops:
            raise ValidationError("graph must contain at least one operator")
        for i, op in enumerate(self.ops):
            if op.id != i:
                raise ValidationError(f"op {op.id}: ids must be consecutive from 0")
            if i > 0 and op.input.bytes != self.ops[i - 1].output.bytes:
                raise ValidationError(
                    f"op {i}: input bytes {op.input.bytes} != op {i - 1} output bytes "
                    f"{self.ops[i - 1].output.bytes}"
                )

    def __len__(self) -> int:
        return len(self.ops)

    @property
    def total_flops(self) -> float:
        return float(sum(op.flops for op in self.ops))


@dataclass(frozen=True)
class ProcessorSpec:
    kind: ProcKind
    f_max: float
    flops_per_cycle: float
    mem_bw: float
    p_static: float
    k_dyn: float

    def __post_init__(self):
        for name in ("f_max", "flops_per_cycle", "mem_bw", "p_static", "k_dyn"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"processor {name} must be > 0")


@dataclass(frozen=True)
class DeviceSpec:
    cpu: ProcessorSpec
    gpu: ProcessorSpec
    bus_bw: float
    sync_overhead_s: float
    p_idle: float
    noise_sigma: float

    def __post_init__(self):
        if self.cpu.kind is not ProcKind.CPU or self.gpu.kind is not ProcKind.GPU:
            raise ValidationError("cpu/gpu slots must hold matching processor kinds")
        if self.bus_bw <= 0 or self.sync_overhead_s < 0:
            raise ValidationError("bus_bw must be > 0 and sync_overhead_s >= 0")
        if self.p_idle < 0 or self.noise_sigma < 0:
            raise ValidationError("p_idle and noise_sigma must be >= 0")


# Utilization cap: 1.0 would mean zero available compute throughput.
UTIL_MAX = 0.99


@dataclass(frozen=True)
class DeviceState:
    cpu_freq: float
    gpu_freq: float
    cpu_util: float
    gpu_util: float

    def __post_init__(self):
        if self.cpu_freq <= 0 or self.gpu_freq <= 0:
            raise ValidationError("frequencies must be > 0")
        for u in (self.cpu_util, self.gpu_util):
            if not 0.0 <= u <= UTIL_MAX:
                raise ValidationError(f"utilization {u} outside [0, {UTIL_MAX}]")

    def validate_against(self, spec: DeviceSpec) -> None:
        if self.cpu_freq > spec.cpu.f_max or self.gpu_freq > spec.gpu.f_max:
            raise ValidationError("state frequency exceeds spec f_max")


@dataclass(frozen=True)
class WorkloadTrace:
    kind: TraceKind
    states: tuple[DeviceState, ...]

    def __post_init__(self):
        if not self.states:
            raise ValidationError("trace must contain at least one state")

    def __len__(self) -> int:
        return len(self.states)


# ---------------------------------------------------------------------------
# Built-in device and workload presets
# ---------------------------------------------------------------------------

def soc_default() -> DeviceSpec:
    """Reference SoC: a mid-tier mobile part with a shared-memory bus."""
    return DeviceSpec(
        cpu=ProcessorSpec(kind=ProcKind.CPU, f_max=2.0e9, flops_per_cycle=32.0,
                          mem_bw=1.5e10, p_static=0.5, k_dyn=2.5),
        gpu=ProcessorSpec(kind=ProcKind.GPU, f_max=6.0e8, flops_per_cycle=256.0,
                          mem_bw=3.0e10, p_static=0.3, k_dyn=1.8),
        bus_bw=5.0e9,
        sync_overhead_s=1.0e-4,
        p_idle=0.6,
        noise_sigma=0.05,
    )


# Measured operating points for the two load regimes: (cpu_freq, gpu_freq,
# cpu_util); gpu_util is a configured background-load estimate.
_PRESETS: dict[str, DeviceState] = {
    "moderate": DeviceState(cpu_freq=1.49e9, gpu_freq=4.99e8, cpu_util=0.788, gpu_util=0.10),
    "high": DeviceState(cpu_freq=0.88e9, gpu_freq=4.27e8, cpu_util=0.913, gpu_util=0.30),
}


def preset_names() -> tuple[str, ...]:
    return tuple(_PRESETS)


def preset_state(name: str) -> DeviceState:
    try:
        return _PRESETS[name]
    except KeyError:
        raise UnknownPreset(f"unknown preset {name!r}; known: {sorted(_PRESETS)}") from None


# ---------------------------------------------------------------------------
# Graph and device-spec serialization
# ---------------------------------------------------------------------------

def _builtin_path(name: str) -> Path:
    with resources.as_file(resources.files("coexec").joinpath(f"data/{name}.json")) as p:
        return Path(p)


def resolve_input_path(spec: str | Path, kind: str) -> Path:
    """Resolve a CLI-style path, allowing the ``builtin:`` scheme."""
    if isinstance(spec, str) and spec.startswith(BUILTIN_PREFIX):
        name = spec[len(BUILTIN_PREFIX):]
        path = _builtin_path(name)
        if not path.exists():
            raise ParseError(f"no builtin {kind} named {name!r}")
        return path
    return Path(spec)


def _load_json(path: str | Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ParseError(f"cannot read {path}: {e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ParseError(f"{path}: expected a JSON object at top level")
    return data


def graph_to_dict(graph: OperatorGraph) -> dict:
    return {
        "name": graph.name,
        "ops": [
            {
                "id": op.id,
                "kind": op.kind.value,
                "flops": op.flops,
                "input_bytes": op.input.bytes,
                "output_bytes": op.output.bytes,
                "divisible": op.divisible,
            }
            for op in graph.ops
        ],
    }


def graph_from_dict(data: dict) -> OperatorGraph:
    try:
        raw_ops = data["ops"]
        name = data["name"]
    except KeyError as e:
        raise ValidationError(f"graph object missing key {e}") from None
    if not isinstance(raw_ops, list):
        raise ValidationError("graph 'ops' must be a list")
    ops = []
    for i, raw in enumerate(raw_ops):
        try:
            kind = OpKind(raw["kind"])
        except ValueError:
            raise ValidationError(f"op {i}: unknown kind {raw.get('kind')!r}") from None
        except (KeyError, TypeError):
            raise ValidationError(f"op {i}: malformed op record") from None
        try:
            ops.append(Operator(
                id=int(raw["id"]),
                kind=kind,
                flops=float(raw["flops"]),
                input=TensorSpec(bytes=int(raw["input_bytes"])),
                output=TensorSpec(bytes=int(raw["output_bytes"])),
                divisible=bool(raw["divisible"]),
            ))
        except KeyError as e:
            raise ValidationError(f"op {i}: missing field {e}") from None
    return OperatorGraph(name=str(name), ops=tuple(ops))


def load_graph(path: str | Path) -> OperatorGraph:
    return graph_from_dict(_load_json(resolve_input_path(path, "graph")))


def device_spec_to_dict(spec: DeviceSpec) -> dict:
    def proc(p: ProcessorSpec) -> dict:
        return {"kind": p.kind.value, "f_max": p.f_max,
                "flops_per_cycle": p.flops_per_cycle, "mem_bw": p.mem_bw,
                "p_static": p.p_static, "k_dyn": p.k_dyn}

    return {
        "cpu": proc(spec.cpu),
        "gpu": proc(spec.gpu),
        "bus_bw": spec.bus_bw,
        "sync_overhead_s": spec.sync_overhead_s,
        "p_idle": spec.p_idle,
        "noise_sigma": spec.noise_sigma,
    }


def device_spec_from_dict(data: dict) -> DeviceSpec:
    def proc(raw: dict, which: str) -> ProcessorSpec:
        try:
            return ProcessorSpec(
                kind=ProcKind(raw["kind"]),
                f_max=float(raw["f_max"]),
                flops_per_cycle=float(raw["flops_per_cycle"]),
                mem_bw=float(raw["mem_bw"]),
                p_static=float(raw["p_static"]),
                k_dyn=float(raw["k_dyn"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"device spec {which}: malformed ({e})") from None

    try:
        return DeviceSpec(
            cpu=proc(data["cpu"], "cpu"),
            gpu=proc(data["gpu"], "gpu"),
            bus_bw=float(data["bus_bw"]),
            sync_overhead_s=float(data["sync_overhead_s"]),
            p_idle=float(data["p_idle"]),
            noise_sigma=float(data["noise_sigma"]),
        )
    except (KeyError, TypeError) as e:
        raise ValidationError(f"device spec: malformed ({e})") from None


def load_device_spec(path: str | Path) -> DeviceSpec:
    return device_spec_from_dict(_load_json(resolve_input_path(path, "device spec")))


# ---------------------------------------------------------------------------
# Built-in benchmark chain
# ---------------------------------------------------------------------------

# Nominal activation sizes for the 31-op detector-style chain (fp32 bytes).
_IMG = 4_435_968          # 608 x 608 x 3
_PLATEAU = 47_316_992     # 608 x 608 x 32
_B304x32 = 11_829_248
_B304x64 = 23_658_496
_B152x64 = 5_914_624
_B152x128 = 11_829_248
_B76x128 = 2_957_312
_B76x256 = 5_914_624
_B38x256 = 1_478_656
_B38x512 = 2_957_312
_B19x2048 = 2_957_312


def synth_yolo_like() -> OperatorGraph:
    """Deterministic 31-op detector-style chain used by the benchmarks.

    A compute-heavy stem feeds a long plateau of large, low-intensity
    Reorg/Conv/Pool layers (channel counts non-decreasing through the chain),
    followed by a shrinking compute tail. Sizes and flops are synthetic but
    kept within realistic per-layer ranges.
    """
    k = OpKind
    rows: list[tuple[OpKind, float, int, int, bool]] = [
        (k.CONV, 638_779_392.0, _IMG, _PLATEAU, True),
    ]
    for _ in range(6):  # plateau: 18 ops of Reorg/Conv/Pool at constant size
        rows.append((k.REORG, 5.9e7, _PLATEAU, _PLATEAU, True))
        rows.append((k.CONV, 6.8e7, _PLATEAU, _PLATEAU, True))
        rows.append((k.POOL, 6.25e7, _PLATEAU, _PLATEAU, True))
    rows += [
        (k.POOL, 3.9e7, _PLATEAU, _B304x32, True),
        (k.CONV, 2.5e8, _B304x32, _B304x64, True),
        (k.POOL, 1.3e7, _B304x64, _B152x64, True),
        (k.CONV, 1.8e8, _B152x64, _B152x128, True),
        (k.REORG, 1.5e7, _B152x128, _B152x128, False),
        (k.POOL, 1.2e7, _B152x128, _B76x128, True),
        (k.CONV, 2.2e8, _B76x128, _B76x256, True),
        (k.POOL, 1.1e7, _B76x256, _B38x256, True),
        (k.CONV, 2.8e8, _B38x256, _B38x512, True),
        (k.CONV, 3.2e8, _B38x512, _B38x512, True),
        (k.REORG, 1.0e7, _B38x512, _B19x2048, False),
        (k.CONV, 2.7e8, _B19x2048, _B19x2048, True),
    ]
    ops = tuple(
        Operator(id=i, kind=kind, flops=fl, input=TensorSpec(bi),
                 output=TensorSpec(bo), divisible=div)
        for i, (kind, fl, bi, bo, div) in enumerate(rows)
    )
    return OperatorGraph(name="yolo_like", ops=ops)


# ---------------------------------------------------------------------------
# Trace generation
# ---------------------------------------------------------------------------

_NOISE_SCALE = 0.02   # per-frame log-normal sigma on every state field
_DRIFT_FLOOR = 0.7    # Drift: cpu_freq decays linearly to this fraction
_STEP_FREQ = 0.6      # Step: cpu_freq multiplier after the step frame
_STEP_UTIL = 0.1      # Step: cpu_util increment after the step frame


def _noisy_state(base: DeviceState, cpu_freq_factor: float, cpu_util_add: float,
                 rng: np.random.Generator) -> DeviceState:
    # Draw order is fixed: cpu_freq, gpu_freq, cpu_util, gpu_util.
    eps = rng.standard_normal(4)
    cpu_freq = base.cpu_freq * cpu_freq_factor * math.exp(_NOISE_SCALE * eps[0])
    gpu_freq = base.gpu_freq * math.exp(_NOISE_SCALE * eps[1])
    cpu_util = min(UTIL_MAX, (base.cpu_util + cpu_util_add) * math.exp(_NOISE_SCALE * eps[2]))
    gpu_util = min(UTIL_MAX, base.gpu_util * math.exp(_NOISE_SCALE * eps[3]))
    return DeviceState(cpu_freq=cpu_freq, gpu_freq=gpu_freq,
                       cpu_util=cpu_util, gpu_util=gpu_util)


def gen_trace(kind: TraceKind, base: DeviceState, frames: int, seed: int) -> WorkloadTrace:
    """Generate a per-frame state sequence. Deterministic in (kind, base, frames, seed)."""
    if frames <= 0:
        raise InvalidArgument(f"frames must be > 0, got {frames}")
    rng = np.random.default_rng(seed)
    states = []
    step_frame = frames // 2
    for t in range(frames):
        freq_factor = 1.0
        util_add = 0.0
        if kind is TraceKind.DRIFT and frames > 1:
            freq_factor = 1.0 - (1.0 - _DRIFT_FLOOR) * t / (frames - 1)
        elif kind is TraceKind.STEP and t >= step_frame:
            freq_factor = _STEP_FREQ
            util_add = _STEP_UTIL
        states.append(_noisy_state(base, freq_factor, util_add, rng))
    return WorkloadTrace(kind=kind, states=tuple(states))
