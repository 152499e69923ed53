"""Command-line front end and experiment harness.

Subcommands: gen-data, train, plan, simulate, compare, oracle-check. Global
flags (--seed, --spec, --graph, --out-dir, --config) may appear after the
subcommand; a JSON config file supplies defaults and explicit flags override
it. Exit codes: 0 success, 1 check failure, 2 argument error, 3 I/O error,
4 training failure. Output files are written atomically (temp + rename) and
are byte-identical across reruns with identical arguments and seeds.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import (
    CoexecError,
    EmptyEpisodes,
    InsufficientData,
    InvalidArgument,
    ParseError,
    UnknownPreset,
    ValidationError,
)
from .features import FEATURE_DIM, FEATURE_NAMES
from .gbdt import GbdtHyper, GbdtModel
from .gru import GruHyper
from .hwsim import ON_CPU, PartitionDecision, residence_after, true_cost
from .model import (
    DeviceSpec,
    DeviceState,
    Operator,
    OperatorGraph,
    OpKind,
    TensorSpec,
    TraceKind,
    gen_trace,
    load_device_spec,
    load_graph,
    preset_state,
    resolve_input_path,
    soc_default,
    synth_yolo_like,
)
from .partitioner import (
    DpConfig,
    brute_force_partition,
    dp_partition,
    plan_to_dict,
    true_cost_callback,
)
from .profiler import (
    ACCURATE_GBDT_HYPER,
    ACCURATE_GRU_HYPER,
    TrueCostPredictor,
    ProfilerPredictor,
    gen_dataset,
    load_profiler,
    save_profiler,
    train_profiler_from_arrays,
)
from .runtime import (
    AdaptationPolicy,
    Scheme,
    default_latency_budget,
    mape_pct_of,
    run_baseline,
)

CSV_HEADER = "frame,scheme,latency_s,energy_j,replans,met_budget,mape_pct"
_TRACE_KINDS = {k.value.lower(): k for k in TraceKind}
_ALL_SCHEMES = tuple(s.value for s in Scheme)


class CliError(Exception):
    """Carries the process exit code alongside the message."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class ExperimentConfig:
    """Defaults for every tunable the subcommands share."""

    spec: str = "builtin:soc_default"
    graph: str = "builtin:yolo_like"
    preset: str = "moderate"
    kind: str = "stationary"
    frames: int = 50
    seed: int = 0
    margin: float = 1.25
    buckets: int = 200
    threshold: float = 0.15
    min_ops: int = 3
    schemes: tuple[str, ...] = _ALL_SCHEMES
    out_dir: str = "out"


_CONFIG_KEYS = {f.name for f in fields(ExperimentConfig)}


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as e:
        raise CliError(3, f"cannot read config {path}: {e}")
    except json.JSONDecodeError as e:
        raise CliError(3, f"config {path} is not valid JSON: {e}")
    unknown = set(data) - _CONFIG_KEYS
    if unknown:
        raise CliError(2, f"unknown config keys: {sorted(unknown)}")
    if "schemes" in data:
        data["schemes"] = tuple(data["schemes"])
    return ExperimentConfig(**data)


def _resolved(args: argparse.Namespace) -> ExperimentConfig:
    """Layer CLI flags over the config file over built-in defaults."""
    cfg = (load_experiment_config(args.config) if args.config
           else ExperimentConfig())
    merged = asdict(cfg)
    for key in _CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = tuple(value) if key == "schemes" else value
    return ExperimentConfig(**merged)


# ---------------------------------------------------------------------------
# Small shared helpers
# ---------------------------------------------------------------------------

def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _load_inputs(cfg: ExperimentConfig) -> tuple[DeviceSpec, OperatorGraph]:
    spec_path = resolve_input_path(cfg.spec, "device spec")
    graph_path = resolve_input_path(cfg.graph, "graph")
    for p in (spec_path, graph_path):
        if not p.exists():
            raise CliError(3, f"input file not found: {p}")
    return load_device_spec(spec_path), load_graph(graph_path)


def _load_model(path: str, spec: DeviceSpec) -> ProfilerPredictor:
    if not Path(path).exists():
        raise CliError(3, f"model file not found: {path}")
    return ProfilerPredictor(load_profiler(path), spec)


def _dp_config(cfg: ExperimentConfig, spec: DeviceSpec, graph: OperatorGraph,
               state: DeviceState) -> tuple[DpConfig, AdaptationPolicy]:
    budget = default_latency_budget(graph, spec, state, cfg.margin)
    dp = DpConfig(latency_budget_s=budget, bucket_width_s=budget / cfg.buckets)
    policy = AdaptationPolicy(latency_budget_s=budget,
                              energy_dev_threshold=cfg.threshold,
                              min_ops_between_replans=cfg.min_ops)
    return dp, policy


def _fmt(x: float) -> str:
    # repr of a Python float is the shortest exact round-trip form, so CSV
    # consumers can recompute aggregates bit-for-bit
    return repr(float(x))


def _frame_rows(summary, scheme: str) -> list[str]:
    rows = []
    for r in summary.reports:
        rows.append(",".join([
            str(r.frame_idx), scheme, _fmt(r.totals.latency_s),
            _fmt(r.totals.energy_j), str(r.replans),
            "true" if r.met_budget else "false",
            _fmt(mape_pct_of(r.records))]))
    return rows


def _trace_kind(name: str) -> TraceKind:
    try:
        return _TRACE_KINDS[name.lower()]
    except KeyError:
        raise CliError(2, f"unknown trace kind {name!r}; "
                          f"choose from {sorted(_TRACE_KINDS)}")


def _schemes(names) -> tuple[Scheme, ...]:
    if not names:
        raise CliError(2, "schemes must be non-empty")
    try:
        return tuple(Scheme(n) for n in names)
    except ValueError:
        raise CliError(2, f"unknown scheme in {list(names)}; "
                          f"choose from {list(_ALL_SCHEMES)}")


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------

def cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = _resolved(args)
    if args.n < 1:
        raise CliError(2, "--n must be >= 1")
    spec, _ = _load_inputs(cfg)
    ds = gen_dataset(spec, args.n, cfg.seed)
    out = Path(args.out) if args.out else Path(cfg.out_dir) / "dataset.csv"
    header = ",".join(FEATURE_NAMES + ("log_latency", "log_energy"))
    lines = [header]
    for i in range(len(ds)):
        vals = [_fmt(v) for v in ds.X[i]]
        vals += [_fmt(ds.log_latency[i]), _fmt(ds.log_energy[i])]
        lines.append(",".join(vals))
    _atomic_write(out, "\n".join(lines) + "\n")
    print(f"wrote {len(ds)} rows to {out}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _read_dataset_csv(path: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not path.exists():
        raise CliError(3, f"dataset file not found: {path}")
    try:
        raw = np.loadtxt(path, delimiter=",", skiprows=1)
    except ValueError as e:
        raise CliError(3, f"dataset {path} is not a valid CSV: {e}")
    if raw.ndim != 2 or raw.shape[1] != FEATURE_DIM + 2:
        raise CliError(3, f"dataset {path} must have {FEATURE_DIM + 2} columns")
    return raw[:, :FEATURE_DIM], raw[:, FEATURE_DIM], raw[:, FEATURE_DIM + 1]


def _gbdt_mape_pct(model: GbdtModel, X: np.ndarray, log_y: np.ndarray) -> float:
    truth = np.exp(log_y)
    pred = np.exp(model.predict(X))
    return 100.0 * float(np.mean(np.abs(pred - truth) / truth))


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolved(args)
    spec, graph = _load_inputs(cfg)
    data_path = Path(args.data) if args.data else Path(cfg.out_dir) / "dataset.csv"
    X, log_lat, log_en = _read_dataset_csv(data_path)
    gbdt_hyper = (GbdtHyper(trees=args.trees, depth=ACCURATE_GBDT_HYPER.depth)
                  if args.trees else ACCURATE_GBDT_HYPER)
    gru_hyper = (GruHyper(lr=ACCURATE_GRU_HYPER.lr, epochs=args.gru_epochs)
                 if args.gru_epochs else ACCURATE_GRU_HYPER)
    try:
        model = train_profiler_from_arrays(
            spec, graph, X, log_lat, log_en, seed=cfg.seed,
            gbdt_hyper=gbdt_hyper, gru_hyper=gru_hyper)
    except (InsufficientData, EmptyEpisodes, ValidationError) as e:
        raise CliError(4, f"training failed: {e}")
    out = Path(args.out) if args.out else Path(cfg.out_dir) / "profiler.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=out.parent, prefix=out.name + ".")
    os.close(fd)
    try:
        save_profiler(model, tmp)
        os.replace(tmp, out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    eval_ds = gen_dataset(spec, args.eval_n, cfg.seed + 1000)
    m_lat = _gbdt_mape_pct(model.gbdt_latency, eval_ds.X, eval_ds.log_latency)
    m_en = _gbdt_mape_pct(model.gbdt_energy, eval_ds.X, eval_ds.log_energy)
    print(f"wrote model to {out}")
    print(f"held-out MAPE: latency {m_lat:.2f}% energy {m_en:.2f}%")
    return 0


# ---------------------------------------------------------------------------
# plan
# ---------------------------------------------------------------------------

def cmd_plan(args: argparse.Namespace) -> int:
    cfg = _resolved(args)
    spec, graph = _load_inputs(cfg)
    state = preset_state(cfg.preset)
    dp_cfg, _ = _dp_config(cfg, spec, graph, state)
    if args.model:
        predictor = _load_model(args.model, spec)
        from .runtime import planning_callback
        cb = planning_callback(predictor, graph, dp_cfg, state, spec)
    else:
        cb = true_cost_callback(spec)
    plan = dp_partition(graph, 0, ON_CPU, 0.0, cb, state, spec, dp_cfg)
    doc = plan_to_dict(plan)
    doc["latency_budget_s"] = dp_cfg.latency_budget_s
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        _atomic_write(Path(args.out), text)
        print(f"wrote plan to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# simulate / compare
# ---------------------------------------------------------------------------

def _session(graph, spec, cfg: ExperimentConfig, scheme: Scheme, preset: str,
             profiler) -> tuple[str, object]:
    state = preset_state(preset)
    dp_cfg, policy = _dp_config(cfg, spec, graph, state)
    trace = gen_trace(_trace_kind(cfg.kind), state, cfg.frames, cfg.seed)
    summary = run_baseline(graph, spec, trace, scheme, profiler, policy,
                           dp_cfg, cfg.seed)
    return scheme.value, summary


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _resolved(args)
    spec, graph = _load_inputs(cfg)
    profiler = (_load_model(args.model, spec) if args.model
                else TrueCostPredictor(spec))
    scheme = _schemes([args.scheme])[0]
    name, summary = _session(graph, spec, cfg, scheme, cfg.preset, profiler)
    out_dir = Path(cfg.out_dir)
    _atomic_write(out_dir / "simulate.csv",
                  "\n".join([CSV_HEADER] + _frame_rows(summary, name)) + "\n")
    doc = {"scheme": name, "preset": cfg.preset, "frames": cfg.frames,
           "seed": cfg.seed, "mean_latency_s": summary.mean_latency_s,
           "mean_energy_j": summary.mean_energy_j,
           "total_latency_s": summary.total_latency_s,
           "total_energy_j": summary.total_energy_j,
           "replan_count": summary.replan_count,
           "mape_pct": summary.mape_pct}
    _atomic_write(out_dir / "simulate_summary.json",
                  json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"{name} on {cfg.preset!r}: mean latency "
          f"{summary.mean_latency_s * 1e3:.2f} ms, mean energy "
          f"{summary.mean_energy_j:.4f} J, {summary.replan_count} replans")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = _resolved(args)
    spec, graph = _load_inputs(cfg)
    predictor = _load_model(args.model, spec)
    schemes = _schemes(cfg.schemes)
    presets = tuple(p.strip() for p in args.presets.split(",") if p.strip())
    if not presets:
        raise CliError(2, "--presets must name at least one preset")
    out_dir = Path(cfg.out_dir)
    rows_by_key: dict[tuple[str, str], dict] = {}
    for preset in presets:
        lines = [CSV_HEADER]
        for scheme in schemes:
            name, summary = _session(graph, spec, cfg, scheme, preset,
                                     predictor)
            lines.extend(_frame_rows(summary, name))
            rows_by_key[(name, preset)] = {
                "scheme": name, "preset": preset,
                "mean_latency_s": summary.mean_latency_s,
                "mean_energy_j": summary.mean_energy_j,
                "replan_count": summary.replan_count,
                "mape_pct": summary.mape_pct}
        _atomic_write(out_dir / f"compare_{preset}.csv",
                      "\n".join(lines) + "\n")

    def mean_of(scheme: str, preset: str, field: str) -> float:
        return rows_by_key[(scheme, preset)][field]

    deltas: dict[str, dict[str, float]] = {"adaptive_vs_latency_min_energy": {},
                                           "adaptive_vs_gpu_only_latency": {}}
    for preset in presets:
        have = {s.value for s in schemes}
        if {"adaptive", "latency_min"} <= have:
            a = mean_of("adaptive", preset, "mean_energy_j")
            b = mean_of("latency_min", preset, "mean_energy_j")
            deltas["adaptive_vs_latency_min_energy"][preset] = 100.0 * (a - b) / b
        if {"adaptive", "gpu_only"} <= have:
            a = mean_of("adaptive", preset, "mean_latency_s")
            b = mean_of("gpu_only", preset, "mean_latency_s")
            deltas["adaptive_vs_gpu_only_latency"][preset] = 100.0 * (a - b) / b
    doc = {"frames": cfg.frames, "seed": cfg.seed, "kind": cfg.kind,
           "margin": cfg.margin, "rows": [rows_by_key[k] for k in
                                          sorted(rows_by_key)],
           "deltas_pct": deltas}
    _atomic_write(out_dir / "summary.json",
                  json.dumps(doc, indent=2, sort_keys=True) + "\n")

    dat = ["# preset scheme mean_latency_s mean_energy_j"]
    for key in sorted(rows_by_key):
        r = rows_by_key[key]
        dat.append(f"{r['preset']} {r['scheme']} {_fmt(r['mean_latency_s'])} "
                   f"{_fmt(r['mean_energy_j'])}")
    _atomic_write(out_dir / "compare.dat", "\n".join(dat) + "\n")
    _atomic_write(out_dir / "compare.gp", _GNUPLOT_SCRIPT)

    for r in (rows_by_key[k] for k in sorted(rows_by_key)):
        print(f"{r['preset']:>9} {r['scheme']:>12}: "
              f"lat {r['mean_latency_s'] * 1e3:8.2f} ms  "
              f"energy {r['mean_energy_j']:8.4f} J  "
              f"replans {r['replan_count']}")
    for metric, by_preset in deltas.items():
        for preset, d in by_preset.items():
            print(f"{metric}[{preset}]: {d:+.2f}%")
    return 0


_GNUPLOT_SCRIPT = """\
# gnuplot script for compare.dat: mean energy per scheme, one cluster per preset
set style data histogram
set style histogram cluster gap 1
set style fill solid 0.8 border -1
set ylabel "mean energy (J)"
set key top left
plot for [s in "gpu_only latency_min adaptive"] \\
    "< grep ' '.s.' ' compare.dat" using 4:xtic(1) title s
"""


# ---------------------------------------------------------------------------
# oracle-check
# ---------------------------------------------------------------------------

_ORACLE_KINDS = tuple(OpKind)


def _oracle_chain(n: int, rng: np.random.Generator) -> OperatorGraph:
    byts = [int(rng.uniform(1e4, 5e6)) for _ in range(n + 1)]
    ops = tuple(
        Operator(id=i, kind=_ORACLE_KINDS[rng.integers(len(_ORACLE_KINDS))],
                 flops=float(rng.uniform(1e7, 2e9)),
                 input=TensorSpec(byts[i]), output=TensorSpec(byts[i + 1]),
                 divisible=bool(rng.uniform() < 0.8))
        for i in range(n))
    return OperatorGraph(name=f"chain{n}", ops=ops)


def _oracle_state(rng: np.random.Generator, spec: DeviceSpec) -> DeviceState:
    return DeviceState(cpu_freq=float(rng.uniform(0.4, 1.0)) * spec.cpu.f_max,
                       gpu_freq=float(rng.uniform(0.4, 1.0)) * spec.gpu.f_max,
                       cpu_util=float(rng.uniform(0, 0.9)),
                       gpu_util=float(rng.uniform(0, 0.9)))


def run_oracle_check(seeds: int = 20,
                     spec: DeviceSpec | None = None) -> tuple[int, list[str]]:
    """Exhaustive-search equivalence sweep: chains n = 3..8 x `seeds` cases.

    Returns (case count, failure descriptions). A case passes when the
    planner is optimal up to bucket rounding: energy no worse than the
    exhaustive optimum whenever that optimum is interior-feasible, latency
    within budget plus n buckets of slack, and infeasibility verdicts agree.
    """
    spec = spec or soc_default()
    cb = true_cost_callback(spec)
    gpu = PartitionDecision.gpu_only()
    cases = 0
    failures: list[str] = []
    for n in range(3, 9):
        for seed in range(seeds):
            rng = np.random.default_rng(1000 * n + seed)
            graph = _oracle_chain(n, rng)
            state = _oracle_state(rng, spec)
            res = ON_CPU
            gpu_lat = 0.0
            for op in graph.ops:
                lat, _ = cb(op, gpu, res, state)
                gpu_lat += lat
                res = residence_after(gpu)
            budget = float(rng.uniform(0.8, 1.6)) * gpu_lat
            dp_cfg = DpConfig(latency_budget_s=budget,
                              bucket_width_s=budget / 400,
                              ratio_grid=(0.25, 0.5, 0.75))
            dp = dp_partition(graph, 0, ON_CPU, 0.0, cb, state, spec, dp_cfg)
            bf = brute_force_partition(graph, ON_CPU, cb, state, spec, dp_cfg)
            cases += 1
            tag = f"n={n} seed={seed}"
            w = dp_cfg.bucket_width_s
            if bf.feasible and bf.predicted_latency_s <= budget - n * w:
                if not dp.feasible:
                    failures.append(f"{tag}: dp infeasible, oracle interior")
                elif dp.predicted_energy_j > bf.predicted_energy_j + 1e-12:
                    failures.append(
                        f"{tag}: dp energy {dp.predicted_energy_j!r} > "
                        f"oracle {bf.predicted_energy_j!r}")
            if dp.feasible:
                if dp.predicted_latency_s > budget + n * w:
                    failures.append(
                        f"{tag}: dp latency {dp.predicted_latency_s!r} "
                        f"over budget {budget!r} + slack")
            elif bf.feasible:
                failures.append(f"{tag}: dp infeasible but oracle feasible")
    return cases, failures


def golden_check(golden_path: Path) -> list[str]:
    """Compare the simulator against the independently computed golden value."""
    try:
        expect = json.loads(golden_path.read_text())
    except OSError as e:
        raise CliError(3, f"cannot read golden file {golden_path}: {e}")
    spec = soc_default()
    graph = synth_yolo_like()
    state = preset_state("moderate")
    res = ON_CPU
    lat = en = 0.0
    for op in graph.ops:
        cost, res = true_cost(op, PartitionDecision.gpu_only(), res, spec,
                              state)
        lat += cost.latency_s
        en += cost.energy_j
    failures = []
    for name, got in (("latency_s", lat), ("energy_j", en)):
        want = expect[name]
        if not math.isclose(got, want, rel_tol=1e-9):
            failures.append(f"golden {name}: simulator {got!r} != "
                            f"reference {want!r}")
    return failures


def cmd_oracle_check(args: argparse.Namespace) -> int:
    if args.seeds < 1:
        raise CliError(2, "--seeds must be >= 1")
    cases, failures = run_oracle_check(args.seeds)
    golden_path = Path(args.golden)
    if golden_path.exists():
        failures += golden_check(golden_path)
        golden_note = "golden check passed"
    else:
        golden_note = f"golden file {golden_path} absent; check skipped"
    if failures:
        for f in failures:
            print(f"FAIL {f}")
        print(f"{len(failures)} failures in {cases} cases")
        return 1
    print(f"{cases} cases passed; {golden_note}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="master seed for data, training, and noise")
    common.add_argument("--spec", default=None,
                        help="device spec JSON path or builtin:<name>")
    common.add_argument("--graph", default=None,
                        help="operator graph JSON path or builtin:<name>")
    common.add_argument("--out-dir", dest="out_dir", default=None,
                        help="directory for output artifacts")
    common.add_argument("--config", default=None,
                        help="JSON experiment config; flags override it")

    run_flags = argparse.ArgumentParser(add_help=False)
    run_flags.add_argument("--preset", default=None,
                           help="workload preset for the device state")
    run_flags.add_argument("--kind", default=None,
                           help="trace kind: stationary, drift, or step")
    run_flags.add_argument("--frames", type=int, default=None)
    run_flags.add_argument("--margin", type=float, default=None,
                           help="latency budget as a multiple of the all-GPU "
                                "frame latency")
    run_flags.add_argument("--buckets", type=int, default=None,
                           help="latency buckets across the budget")
    run_flags.add_argument("--threshold", type=float, default=None,
                           help="energy deviation fraction that triggers "
                                "a replan")
    run_flags.add_argument("--min-ops", dest="min_ops", type=int, default=None,
                           help="minimum operators between replans")

    p = argparse.ArgumentParser(
        prog="coexec",
        description="Energy-aware CPU/GPU co-execution planning toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common],
                       help="sample a labelled cost dataset")
    g.add_argument("--n", type=int, default=50_000, help="number of rows")
    g.add_argument("--out", default=None, help="output CSV path")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common],
                       help="train the cost models from a dataset CSV")
    t.add_argument("--data", default=None, help="dataset CSV from gen-data")
    t.add_argument("--out", default=None, help="model JSON path")
    t.add_argument("--trees", type=int, default=None,
                   help="boosting rounds per target (default "
                        f"{ACCURATE_GBDT_HYPER.trees})")
    t.add_argument("--gru-epochs", dest="gru_epochs", type=int, default=None,
                   help="corrector training epochs (default "
                        f"{ACCURATE_GRU_HYPER.epochs})")
    t.add_argument("--eval-n", dest="eval_n", type=int, default=10_000,
                   help="fresh held-out rows for the printed MAPE")
    t.set_defaults(func=cmd_train)

    pl = sub.add_parser("plan", parents=[common, run_flags],
                        help="emit one partition plan as JSON")
    pl.add_argument("--model", default=None,
                    help="trained model JSON; omit to plan on true costs")
    pl.add_argument("--out", default=None, help="plan JSON path (default "
                                                "stdout)")
    pl.set_defaults(func=cmd_plan)

    sim = sub.add_parser("simulate", parents=[common, run_flags],
                         help="run one scheme over a generated trace")
    sim.add_argument("--model", default=None,
                     help="trained model JSON; omit to run on true costs")
    sim.add_argument("--scheme", default="adaptive",
                     choices=list(_ALL_SCHEMES))
    sim.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", parents=[common, run_flags],
                       help="paired-seed scheme comparison with CSV output")
    c.add_argument("--model", required=True, help="trained model JSON")
    c.add_argument("--presets", default="moderate,high",
                   help="comma-separated workload presets")
    c.add_argument("--schemes", default=None, nargs="+",
                   help="subset of schemes to run")
    c.set_defaults(func=cmd_compare)

    o = sub.add_parser("oracle-check", parents=[common],
                       help="planner-vs-exhaustive sweep and golden check")
    o.add_argument("--seeds", type=int, default=20,
                   help="cases per chain length")
    o.add_argument("--golden", default="golden/hwsim_yolo_gpuonly.json",
                   help="reference values JSON; skipped if absent")
    o.set_defaults(func=cmd_oracle_check)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (ValidationError, InvalidArgument, UnknownPreset) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (OSError, ParseError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (InsufficientData, EmptyEpisodes) as e:
        print(f"error: training failed: {e}", file=sys.stderr)
        return 4
    except CoexecError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
