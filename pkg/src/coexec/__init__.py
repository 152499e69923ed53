"""Energy-aware CPU/GPU co-execution planning toolkit.

Modules
-------
model        workload chains, device specs, operating-point traces
hwsim        analytic latency/energy simulator (ground truth + noisy observation)
features     feature encoding for the learned cost model
gbdt         gradient-boosted regression trees (from scratch, numpy)
gru          recurrent residual corrector (from scratch, numpy)
profiler     learned cost model: dataset generation, training, prediction
partitioner  latency-constrained energy-minimizing operator partitioning
runtime      closed-loop frame execution with mid-frame re-planning
cli          benchmark command line
"""

__version__ = "0.1.0"
