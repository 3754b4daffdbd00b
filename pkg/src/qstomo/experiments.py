"""Batch studies: estimator comparisons across state families, qubit counts and shot numbers.

Each ``run_*`` function takes an :class:`ExperimentConfig`, writes CSV files
plus a ``manifest.json`` into ``config.output_dir`` and returns the rows it
wrote.  Trials are enumerated in a fixed grid order and trial ``k`` draws all
of its randomness from ``rng_stream(seed, k)``, so results do not depend on
how trials are scheduled across workers.
"""
from __future__ import annotations

import csv
import json
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from . import __version__
from .linalg import MemoryBudgetError, memory_budget
from .mle import OptimizerConfig, mle_estimate
from .reconstruction import forced_purity, linear_reconstruct, load_counts, quick_and_dirty
from .simulate import (
    RNG_ALGORITHM,
    StateFamilySpec,
    build_state,
    delta_for_tangle,
    make_physical,
    mems_state,
    rng_stream,
    simulate_counts,
    spec_metadata,
    tangle_biased_pure,
    trial_mixture,
    werner_epsilon_for_tangle,
    werner_state,
    write_counts_with_metadata,
)
from .states import fidelity, linear_entropy, load_density, num_qubits, save_density, tangle

COMMANDS = ("tomo", "plane-sweep", "werner-line", "fp-shots-search", "qd-purity-scan", "benchmark")
ESTIMATORS = ("linear", "qd", "fp", "mle")

TRIAL_COLUMNS = [
    "command", "n", "family", "epsilon", "delta", "gamma", "tau_target",
    "s_linear", "tangle", "estimator", "fidelity", "time_ms", "iterations",
    "line_search_ms", "seed", "stream", "status",
]

# shots used when the config leaves them unset
DEFAULT_SHOTS = {
    "tomo": 10_000, "plane-sweep": 10_000, "werner-line": 10_000,
    "fp-shots-search": 10, "qd-purity-scan": 1_000_000, "benchmark": 1_000_000,
}
DEFAULT_GRID = {"plane-sweep": 20, "werner-line": 21}
DEFAULT_TRIALS = {
    "tomo": 1, "plane-sweep": 10, "werner-line": 20, "fp-shots-search": 10,
    "qd-purity-scan": 10, "benchmark": 5,
}
DEFAULT_QUBITS = {
    "tomo": [2], "plane-sweep": [2], "werner-line": [2, 3, 4], "fp-shots-search": [2, 3, 4],
    "qd-purity-scan": [2, 3, 4, 5], "benchmark": [2, 3, 4],
}
DEFAULT_ESTIMATORS = {
    "tomo": ("linear", "qd", "fp", "mle"), "plane-sweep": ("qd", "fp", "mle"),
    "werner-line": ("qd", "fp", "mle"), "fp-shots-search": ("fp",),
    "qd-purity-scan": ("qd", "fp"), "benchmark": ("qd", "fp", "mle"),
}
SHOTS_CAP = 10_000_000


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class EstimatorError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"estimator stage {stage!r} failed: {cause}")
        self.stage = stage


@dataclass
class ExperimentConfig:
    command: str = "tomo"
    qubits: list = None
    family: str = "ghz"
    epsilon: float = 0.0
    delta: float = 0.0
    gamma: float = 0.0
    state_error: float | None = None
    shots: float | None = None
    grid: int | None = None
    trials: int | None = None
    estimators: tuple = None
    seed: int = 12345
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    output_dir: str = "results"
    zero_noise: bool = False
    counts: str | None = None
    truth: str | None = None
    state_path: str | None = None
    record_timing: bool = True
    workers: int = 1
    tangle_values: int = 11
    verify_trials: int = 20

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}; choose from {COMMANDS}")
        c = self.command
        if self.qubits is None:
            self.qubits = list(DEFAULT_QUBITS[c])
        elif isinstance(self.qubits, int):
            self.qubits = [self.qubits]
        self.qubits = [int(q) for q in self.qubits]
        if not self.qubits or min(self.qubits) < 1:
            raise ConfigError("qubit counts must be positive")
        if self.shots is None:
            self.shots = DEFAULT_SHOTS[c]
        if self.grid is None:
            self.grid = DEFAULT_GRID.get(c, 1)
        if self.trials is None:
            self.trials = DEFAULT_TRIALS[c]
        if self.estimators is None:
            self.estimators = DEFAULT_ESTIMATORS[c]
        if isinstance(self.estimators, str):
            self.estimators = tuple(e.strip() for e in self.estimators.split(",") if e.strip())
        self.estimators = tuple(self.estimators)
        if self.state_error is None:
            self.state_error = 0.0 if c in ("tomo", "plane-sweep", "benchmark") else 0.05
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerConfig(**self.optimizer)
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.grid < 1:
            raise ConfigError("grid must be at least 1")
        if not self.estimators:
            raise ConfigError("at least one estimator is required")
        bad = set(self.estimators) - set(ESTIMATORS)
        if bad:
            raise ConfigError(f"unknown estimators {sorted(bad)}; choose from {ESTIMATORS}")
        if self.shots <= 0:
            raise ConfigError("shots must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        for name in ("epsilon", "state_error", "gamma"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ConfigError(f"{name}={v} outside [0, 1]")
        if not 0 <= self.delta <= 1 / math.sqrt(2) + 1e-15:
            raise ConfigError(f"delta={self.delta} outside [0, 1/sqrt(2)]")
        if c == "plane-sweep" and self.qubits != [2]:
            raise ConfigError("plane-sweep is defined for two qubits only")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["estimators"] = list(self.estimators)
        return out


# ----------------------------------------------------------------- estimator runs


def run_estimators(record, estimators, optimizer: OptimizerConfig) -> dict:
    """Run each requested estimator on ``record``.

    Returns ``{name: {"rho", "time_ms", "iterations", "line_search_ms", "report", "error"}}``.
    Times for ``qd``/``fp``/``mle`` include the shared linear inversion.
    """
    out = {}
    lin = None
    t_lin = 0.0
    try:
        tic = time.perf_counter()
        lin = linear_reconstruct(record)
        t_lin = time.perf_counter() - tic
    except MemoryBudgetError:
        raise
    except Exception as exc:  # noqa: BLE001 - recorded per row
        for name in estimators:
            out[name] = {"error": EstimatorError("linear", exc)}
        return out
    for name in estimators:
        res = {"rho": None, "time_ms": None, "iterations": None, "line_search_ms": None, "report": None, "error": None}
        try:
            tic = time.perf_counter()
            if name == "linear":
                res["rho"] = lin
            elif name == "qd":
                res["rho"] = quick_and_dirty(lin)
            elif name == "fp":
                res["rho"] = forced_purity(lin)
            else:
                rho, report = mle_estimate(record, config=optimizer)
                res["rho"] = rho
                res["report"] = report
                res["iterations"] = report.iterations
                res["line_search_ms"] = 1e3 * report.line_search_seconds / max(report.iterations, 1)
            elapsed = time.perf_counter() - tic
            # mle_estimate repeats the linear inversion internally
            res["time_ms"] = 1e3 * (elapsed + (t_lin if name != "mle" else 0.0))
        except MemoryBudgetError:
            raise
        except Exception as exc:  # noqa: BLE001 - recorded per row
            res["error"] = EstimatorError(name, exc)
        out[name] = res
    return out


def _fmt(x, digits: int = 12) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.{digits}g}"
    return str(x)


def _trial_rows(cfg: ExperimentConfig, truth, record, base: dict, stream: int) -> list[dict]:
    n = num_qubits(truth)
    results = run_estimators(record, cfg.estimators, cfg.optimizer)
    s_lin = linear_entropy(truth)
    tau = tangle(truth) if n == 2 else None
    rows = []
    for name in cfg.estimators:
        res = results[name]
        row = dict.fromkeys(TRIAL_COLUMNS, None)
        row.update(base)
        row.update(command=cfg.command, n=n, s_linear=s_lin, tangle=tau, estimator=name,
                   seed=cfg.seed, stream=stream)
        if res.get("error") is not None:
            row["status"] = f"error:{res['error'].stage}"
        else:
            try:
                row["fidelity"] = fidelity(res["rho"], truth)
                row["status"] = "ok"
            except ValueError:
                row["status"] = "nonphysical"
            row["iterations"] = res["iterations"]
            if cfg.record_timing:
                row["time_ms"] = res["time_ms"]
                row["line_search_ms"] = res["line_search_ms"]
        rows.append(row)
    return rows


def _execute(task):
    kind, cfg, payload, stream = task
    rng = rng_stream(cfg.seed, stream)
    n = payload["n"]
    if kind == "plane":
        structured = (
            tangle_biased_pure(payload["delta"], 2) if payload["family"] == "tangle_biased"
            else mems_state(payload["gamma"])
        )
        truth = trial_mixture(structured, payload["epsilon"], rng)
    elif kind == "werner":
        truth = make_physical(werner_state(n, payload["epsilon"]), cfg.state_error, rng)
    elif kind == "pure":
        pure = tangle_biased_pure(payload["delta"], n)
        truth = make_physical(pure, cfg.state_error, rng)
    elif kind == "bench":
        if payload["family"] == "tangle_biased":
            target = tangle_biased_pure(payload["delta"], n)
        else:
            target = werner_state(n, payload["epsilon"])
        truth = make_physical(target, cfg.state_error, rng) if cfg.state_error else target
    else:
        raise ValueError(kind)
    record = simulate_counts(truth, cfg.shots, rng, zero_noise=cfg.zero_noise)
    return _trial_rows(cfg, truth, record, payload, stream)


def _map_tasks(cfg: ExperimentConfig, tasks: list) -> list[dict]:
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(_execute, tasks, chunksize=max(1, len(tasks) // (4 * cfg.workers))))
    else:
        chunks = [_execute(t) for t in tasks]
    return [row for chunk in chunks for row in chunk]


# ------------------------------------------------------------------------ writers


def write_csv(path, rows: list[dict], columns: list[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_manifest(cfg: ExperimentConfig, extra: dict | None = None) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "package": "qstomo",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "rng": RNG_ALGORITHM,
        "memory_budget_bytes": memory_budget(),
        "config": cfg.to_dict(),
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def summarize(rows: list[dict], keys: list[str]) -> list[dict]:
    """Mean and standard deviation of fidelity and time, grouped by ``keys`` (first-seen order)."""
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in keys), []).append(row)
    out = []
    for key, members in groups.items():
        fids = np.array([float(r["fidelity"]) for r in members if r["fidelity"] not in (None, "")])
        times = np.array([float(r["time_ms"]) for r in members if r["time_ms"] not in (None, "")])
        entry = dict(zip(keys, key))
        entry.update(
            trials=len(members),
            ok=int(fids.size),
            fidelity_mean=float(fids.mean()) if fids.size else None,
            fidelity_std=float(fids.std(ddof=1)) if fids.size > 1 else None,
            time_ms_mean=float(times.mean()) if times.size else None,
            time_ms_std=float(times.std(ddof=1)) if times.size > 1 else None,
        )
        its = [float(r["iterations"]) for r in members if r.get("iterations") not in (None, "")]
        ls = [float(r["line_search_ms"]) for r in members if r.get("line_search_ms") not in (None, "")]
        entry["iterations_mean"] = float(np.mean(its)) if its else None
        entry["line_search_ms_mean"] = float(np.mean(ls)) if ls else None
        out.append(entry)
    return out


SUMMARY_STATS = ["trials", "ok", "fidelity_mean", "fidelity_std", "time_ms_mean", "time_ms_std",
                 "iterations_mean", "line_search_ms_mean"]


# ----------------------------------------------------------------------- commands


def run_tomo(cfg: ExperimentConfig) -> dict:
    """Tomography of one data set, from a counts file or simulated from a state family."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    truth = None
    if cfg.counts:
        record = load_counts(cfg.counts)
        if cfg.truth:
            truth = load_density(cfg.truth)
            if num_qubits(truth) != record.qubits:
                raise ConfigError(
                    f"truth file is a {num_qubits(truth)}-qubit state but the counts are for {record.qubits} qubits"
                )
    else:
        n = cfg.qubits[0]
        spec = StateFamilySpec(cfg.family, n, cfg.epsilon, cfg.delta, cfg.gamma, cfg.state_path)
        rng = rng_stream(cfg.seed, 0)
        target = build_state(spec, rng)
        truth = make_physical(target, cfg.state_error, rng) if cfg.state_error else target
        record = simulate_counts(truth, cfg.shots, rng, zero_noise=cfg.zero_noise)
        meta = spec_metadata(spec)
        meta.update(seed=cfg.seed, stream=0, state_error=cfg.state_error, zero_noise=cfg.zero_noise)
        write_counts_with_metadata(out / "counts.txt", record, meta)
        save_density(out / "rho_truth.txt", truth)
    results = run_estimators(record, cfg.estimators, cfg.optimizer)
    report = {"qubits": record.qubits, "shots": record.shots, "estimators": {}}
    failure = None
    for name in cfg.estimators:
        res = results[name]
        entry = {}
        if res.get("error") is not None:
            entry["status"] = f"error:{res['error'].stage}"
            entry["message"] = str(res["error"])
            failure = failure or res["error"]
        else:
            rho = res["rho"]
            save_density(out / f"rho_{name}.txt", rho)
            entry.update(status="ok", time_ms=res["time_ms"], linear_entropy=linear_entropy(rho))
            if record.qubits == 2:
                try:
                    entry["tangle"] = tangle(rho)
                except ValueError:
                    entry["tangle"] = None
            if truth is not None:
                try:
                    entry["fidelity"] = fidelity(rho, truth)
                except ValueError:
                    entry["fidelity"] = None
                    entry["status"] = "nonphysical"
            if res["report"] is not None:
                (out / "mle_report.json").write_text(res["report"].to_json() + "\n")
                entry["iterations"] = res["report"].iterations
                entry["termination_reason"] = res["report"].termination_reason
        report["estimators"][name] = entry
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    write_manifest(cfg)
    if failure is not None:
        raise failure
    return report


def run_plane_sweep(cfg: ExperimentConfig) -> list[dict]:
    """Two-qubit states spread over the entropy-tangle plane.

    Tangle-biased pure states on a (delta, epsilon) grid and MEMS states on a
    (gamma, epsilon) grid, each mixed with a random state at weight
    ``epsilon**2``.
    """
    g = cfg.grid
    eps_axis = np.linspace(0, 1, g)
    tasks = []
    stream = 0
    for delta in np.linspace(0, 1 / math.sqrt(2), g):
        for eps in eps_axis:
            for _ in range(cfg.trials):
                tasks.append(("plane", cfg, dict(n=2, family="tangle_biased", epsilon=float(eps),
                                                 delta=float(delta)), stream))
                stream += 1
    for gamma in np.linspace(0, 1, g):
        for eps in eps_axis:
            for _ in range(cfg.trials):
                tasks.append(("plane", cfg, dict(n=2, family="mems", epsilon=float(eps),
                                                 gamma=float(gamma)), stream))
                stream += 1
    rows = _map_tasks(cfg, tasks)
    write_csv(Path(cfg.output_dir) / "plane_sweep.csv", rows, TRIAL_COLUMNS)
    write_manifest(cfg, {"rows": len(rows)})
    return rows


def run_werner_line(cfg: ExperimentConfig) -> list[dict]:
    """Generalized Werner states across ``epsilon``, with state error, for each qubit count."""
    tasks = []
    stream = 0
    eps_axis = np.linspace(0, 1, cfg.grid) if cfg.grid > 1 else np.array([cfg.epsilon])
    for n in cfg.qubits:
        for eps in eps_axis:
            for _ in range(cfg.trials):
                tasks.append(("werner", cfg, dict(n=n, family="werner", epsilon=float(eps)), stream))
                stream += 1
    rows = _map_tasks(cfg, tasks)
    out = Path(cfg.output_dir)
    write_csv(out / "werner_line.csv", rows, TRIAL_COLUMNS)
    summary = summarize(rows, ["n", "epsilon", "estimator"])
    write_csv(out / "werner_line_summary.csv", summary, ["n", "epsilon", "estimator"] + SUMMARY_STATS)
    write_manifest(cfg, {"rows": len(rows)})
    return rows


def _tangle_axis(cfg: ExperimentConfig) -> np.ndarray:
    return np.linspace(0, 1, cfg.tangle_values)


def run_qd_purity_scan(cfg: ExperimentConfig) -> list[dict]:
    """Nearly pure states (tangle grid, state error) recovered by the cheap estimators for each n."""
    tasks = []
    stream = 0
    for n in cfg.qubits:
        for tau in _tangle_axis(cfg):
            for _ in range(cfg.trials):
                tasks.append(("pure", cfg, dict(n=n, family="tangle_biased", tau_target=float(tau),
                                                delta=delta_for_tangle(float(tau))), stream))
                stream += 1
    rows = _map_tasks(cfg, tasks)
    out = Path(cfg.output_dir)
    write_csv(out / "qd_purity_scan.csv", rows, TRIAL_COLUMNS)
    summary = summarize(rows, ["n", "estimator"])
    write_csv(out / "qd_purity_scan_summary.csv", summary, ["n", "estimator"] + SUMMARY_STATS)
    trend = {}
    for est in cfg.estimators:
        pts = [(r["n"], r["fidelity"]) for r in rows if r["estimator"] == est and r["fidelity"] is not None]
        if len({p[0] for p in pts}) > 1:
            rho_s, p = spearmanr([p[0] for p in pts], [p[1] for p in pts])
            trend[est] = {"spearman": float(rho_s), "p_value": float(p)}
    write_manifest(cfg, {"rows": len(rows), "trend": trend})
    return rows


def run_benchmark(cfg: ExperimentConfig) -> list[dict]:
    """Wall time of each estimator for a pure state at tangle 0.5 and the Werner state of equal tangle."""
    delta = delta_for_tangle(0.5)
    eps = werner_epsilon_for_tangle(0.5)
    tasks = []
    stream = 0
    for n in cfg.qubits:
        for family, params in (("tangle_biased", dict(delta=delta)), ("werner", dict(epsilon=eps))):
            for _ in range(cfg.trials):
                tasks.append(("bench", cfg, dict(n=n, family=family, tau_target=0.5, **params), stream))
                stream += 1
    # timing runs stay sequential so workers do not compete for cores
    rows = _map_tasks(replace(cfg, workers=1), tasks)
    out = Path(cfg.output_dir)
    write_csv(out / "benchmark.csv", rows, TRIAL_COLUMNS)
    summary = summarize(rows, ["n", "family", "estimator"])
    write_csv(out / "benchmark_summary.csv", summary, ["n", "family", "estimator"] + SUMMARY_STATS)
    write_manifest(cfg, {"rows": len(rows)})
    return rows


FP_SEARCH_COLUMNS = [
    "n", "tau_target", "min_shots", "censored", "fidelity_at_min", "verify_fidelity_at_min",
    "verify_fidelity_at_half", "seed",
]


def _fp_mean_fidelity(cfg: ExperimentConfig, n: int, delta: float, shots: float, streams) -> float:
    pure = tangle_biased_pure(delta, n)
    fids = []
    for stream in streams:
        rng = rng_stream(cfg.seed, stream)
        truth = make_physical(pure, cfg.state_error, rng)
        record = simulate_counts(truth, shots, rng)
        fids.append(fidelity(forced_purity(linear_reconstruct(record)), truth))
    return float(np.mean(fids))


def search_min_shots(cfg: ExperimentConfig, n: int, delta: float, streams, target: float = 0.9):
    """Smallest shot count whose mean forced-purity fidelity reaches ``target``.

    Doubling from ``cfg.shots`` brackets the threshold, then integer bisection
    narrows it.  The same trial streams are reused at every shot count.
    Returns ``(shots, fidelity, censored)``.
    """
    lo = None
    hi = int(cfg.shots)
    f_hi = _fp_mean_fidelity(cfg, n, delta, hi, streams)
    while f_hi < target:
        lo = hi
        hi *= 2
        if hi > SHOTS_CAP:
            return SHOTS_CAP, f_hi, True
        f_hi = _fp_mean_fidelity(cfg, n, delta, hi, streams)
    if lo is None:
        return hi, f_hi, False
    while hi - lo > 1:
        mid = (lo + hi) // 2
        f_mid = _fp_mean_fidelity(cfg, n, delta, mid, streams)
        if f_mid >= target:
            hi, f_hi = mid, f_mid
        else:
            lo = mid
    return hi, f_hi, False


def run_fp_shots_search(cfg: ExperimentConfig) -> list[dict]:
    """Minimal shots for 90% forced-purity fidelity, per qubit count and tangle value."""
    rows = []
    base = 0
    for n in cfg.qubits:
        for tau in _tangle_axis(cfg):
            delta = delta_for_tangle(float(tau))
            streams = range(base, base + cfg.trials)
            verify = range(base + cfg.trials, base + cfg.trials + cfg.verify_trials)
            base += cfg.trials + cfg.verify_trials
            shots, fid, censored = search_min_shots(cfg, n, delta, streams)
            row = dict(n=n, tau_target=float(tau), min_shots=shots, censored=censored,
                       fidelity_at_min=fid, seed=cfg.seed)
            if not censored:
                row["verify_fidelity_at_min"] = _fp_mean_fidelity(cfg, n, delta, shots, verify)
                row["verify_fidelity_at_half"] = _fp_mean_fidelity(cfg, n, delta, max(1, shots // 2), verify)
            rows.append(row)
    out = Path(cfg.output_dir)
    write_csv(out / "fp_shots_search.csv", rows, FP_SEARCH_COLUMNS)
    agg = []
    for n in cfg.qubits:
        mine = [r for r in rows if r["n"] == n]
        found = [r["min_shots"] for r in mine if not r["censored"]]
        agg.append(dict(n=n, tangles=len(mine), censored=sum(r["censored"] for r in mine),
                        min_shots_mean=float(np.mean(found)) if found else None,
                        min_shots_median=float(np.median(found)) if found else None,
                        min_shots_max=max(found) if found else None))
    write_csv(out / "fp_shots_search_summary.csv", agg,
              ["n", "tangles", "censored", "min_shots_mean", "min_shots_median", "min_shots_max"])
    write_manifest(cfg, {"rows": len(rows)})
    return rows


RUNNERS = {
    "tomo": run_tomo,
    "plane-sweep": run_plane_sweep,
    "werner-line": run_werner_line,
    "fp-shots-search": run_fp_shots_search,
    "qd-purity-scan": run_qd_purity_scan,
    "benchmark": run_benchmark,
}


def run(cfg: ExperimentConfig):
    return RUNNERS[cfg.command](cfg)
