#!/usr/bin/env python3
"""Standalone oracle for the golden regression value.

Recomputes the noise-free cost of running the bundled yolo_like chain fully
on the GPU under the "moderate" operating point, using only the bundled JSON
files and the documented cost formulas. Deliberately does NOT import the
package: this is an independent evaluation path whose output the test suite
compares against the simulator.

Usage: python3 scripts/make_golden.py  (writes golden/hwsim_yolo_gpuonly.json)
"""

import json
import pathlib

ROOT = pathlib.Path(__file__).resolve().parent.parent
P_BUS_W = 0.8

# "moderate" operating point
GPU_FREQ = 4.99e8
GPU_UTIL = 0.10


def main() -> None:
    graph = json.loads((ROOT / "src/coexec/data/yolo_like.json").read_text())
    soc = json.loads((ROOT / "src/coexec/data/soc_default.json").read_text())
    gpu = soc["gpu"]

    p_gpu = gpu["p_static"] + gpu["k_dyn"] * (GPU_FREQ / gpu["f_max"]) ** 3
    total_lat = 0.0
    total_energy = 0.0
    for i, op in enumerate(graph["ops"]):
        t_comp = op["flops"] / (gpu["flops_per_cycle"] * GPU_FREQ * (1.0 - GPU_UTIL))
        t_mem = (op["input_bytes"] + op["output_bytes"]) / gpu["mem_bw"]
        t = max(t_comp, t_mem)
        comm_lat = comm_energy = 0.0
        if i == 0:  # input starts in host memory: full transfer to GPU
            comm_lat = op["input_bytes"] / soc["bus_bw"] + soc["sync_overhead_s"]
            comm_energy = P_BUS_W * comm_lat
        total_lat += comm_lat + t
        total_energy += comm_energy + (p_gpu + soc["p_idle"]) * t

    out = {"latency_s": total_lat, "energy_j": total_energy}
    (ROOT / "golden").mkdir(exist_ok=True)
    (ROOT / "golden/hwsim_yolo_gpuonly.json").write_text(json.dumps(out, indent=2) + "\n")
    print(json.dumps(out))


if __name__ == "__main__":
    main()
