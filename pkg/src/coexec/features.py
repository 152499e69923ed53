"""Feature encoding for the learned cost model.

One operator + partition decision + device state maps to a fixed-order real
vector: log-scaled work/size terms, a one-hot operator kind, the GPU work
fraction, and the normalized operating point.
"""

from __future__ import annotations

import math

import numpy as np

from .hwsim import PartitionDecision
from .model import DeviceSpec, DeviceState, OpKind, Operator

KIND_ORDER: tuple[OpKind, ...] = (
    OpKind.CONV,
    OpKind.DEPTHWISE_CONV,
    OpKind.FULLY_CONNECTED,
    OpKind.POOL,
    OpKind.ELEMENTWISE,
    OpKind.REORG,
)

FEATURE_NAMES: tuple[str, ...] = (
    "log_flops",
    "log_input_bytes",
    "log_output_bytes",
    *(f"kind_{k.value}" for k in KIND_ORDER),
    "gpu_fraction",
    "cpu_freq_norm",
    "gpu_freq_norm",
    "cpu_util",
    "gpu_util",
)

FEATURE_DIM = len(FEATURE_NAMES)

_KIND_SLOT = {k: i for i, k in enumerate(KIND_ORDER)}


def featurize(op: Operator, d: PartitionDecision, state: DeviceState,
              spec: DeviceSpec) -> np.ndarray:
    """Encode one (operator, decision, state) triple as a feature vector."""
    x = np.zeros(FEATURE_DIM)
    x[0] = math.log(op.flops + 1.0)
    x[1] = math.log(op.input.bytes + 1.0)
    x[2] = math.log(op.output.bytes + 1.0)
    x[3 + _KIND_SLOT[op.kind]] = 1.0
    x[9] = d.gpu_fraction
    x[10] = state.cpu_freq / spec.cpu.f_max
    x[11] = state.gpu_freq / spec.gpu.f_max
    x[12] = state.cpu_util
    x[13] = state.gpu_util
    return x
