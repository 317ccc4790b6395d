"""Benchmark execution, metrics and result files."""
from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from ..config import load_file
from ..dispatch import ConfigError, NfDefinition, Runtime, RuntimeConfig, Simulation, run_threaded
from ..nfs import build_nf
from ..profiler import ProfileReport, Profiler, build_report
from ..stm import CostModel, RetryPolicy
from .trace import TraceRecord

WARMUP = 0.1


class NotConverged(RuntimeError):
    pass


class KeyMismatch(KeyError):
    pass


@dataclass
class RunMetrics:
    nf: str
    workers: int
    params: dict = field(default_factory=dict)
    throughput_pps: float = 0.0
    loss: float = 0.0            # queue drops / ingested
    delivery_loss: float = 0.0   # 1 - emitted / ingested
    abort_fraction: float = 0.0
    p50_ns: float = 0.0
    p99_ns: float = 0.0
    ingested: int = 0
    processed: int = 0
    dropped: int = 0
    emitted: int = 0
    commits: int = 0
    aborts: int = 0
    per_worker: list = field(default_factory=list)
    mode: str = "deterministic"
    wall_s: float = 0.0


@dataclass
class BenchConfig:
    """Everything a config file can set besides the NF params."""

    runtime: RuntimeConfig = field(default_factory=RuntimeConfig)
    params: dict = field(default_factory=dict)
    rate_pps: float | None = None  # replay rate; None keeps trace timestamps
    extra_ms: float = 0.0          # virtual time simulated past the last arrival


_RUNTIME_KEYS = {f.name for f in dataclasses.fields(RuntimeConfig)} - {"cost", "retry"}


def load_bench_config(path, nf: str | None = None) -> BenchConfig:
    doc = load_file(path) if path is not None else {}
    return bench_config_from(doc or {}, nf)


def bench_config_from(doc: dict, nf: str | None = None) -> BenchConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    allowed = {"runtime", "params", "replay", "cost", "retry"} | ({nf} if nf else set())
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    rt = dict(doc.get("runtime") or {})
    bad = set(rt) - _RUNTIME_KEYS
    if bad:
        raise ConfigError(f"unknown runtime keys {sorted(bad)}")
    try:
        cost = CostModel(**(doc.get("cost") or {}))
        retry = RetryPolicy(**(doc.get("retry") or {}))
        runtime = RuntimeConfig(**rt, cost=cost, retry=retry)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    runtime.validate()
    params = dict(doc.get("params") or {})
    if nf and doc.get(nf):
        params.update(doc[nf])
    replay = doc.get("replay") or {}
    return BenchConfig(runtime, params, replay.get("rate_pps"), float(replay.get("extra_ms", 0.0)))


def rescale(records: list[TraceRecord], rate_pps: float) -> list[TraceRecord]:
    """Stretch or compress timestamps so the trace is offered at ``rate_pps``."""
    if len(records) < 2:
        return list(records)
    t0 = records[0].ts_ns
    span = records[-1].ts_ns - t0
    target = (len(records) - 1) * 1e9 / rate_pps
    factor = target / span if span else 0.0
    if not span:
        gap = 1e9 / rate_pps
        return [r.with_ts(int(i * gap)) for i, r in enumerate(records)]
    return [r.with_ts(int(round((r.ts_ns - t0) * factor))) for r in records]


def _percentile(values: list[int], q: float) -> float:
    if not values:
        return 0.0
    values = sorted(values)
    k = (len(values) - 1) * q
    lo, hi = math.floor(k), math.ceil(k)
    return values[lo] + (values[hi] - values[lo]) * (k - lo)


def collect_metrics(rt: Runtime, nf: str, params: dict, mode: str = "deterministic",
                    wall_s: float = 0.0, warmup: float = WARMUP) -> RunMetrics:
    st = rt.stats or rt.stop_nf()
    n = rt.ingested
    start = int(n * warmup)
    measured = [s for s in rt.done_ns if s >= start]
    lat = [rt.done_ns[s] - rt.arrival_ns[s] for s in measured]
    if mode == "wall":
        thr = st.processed / wall_s if wall_s > 0 else 0.0
    elif len(measured) >= 2:
        first = min(rt.done_ns[s] for s in measured)
        last = max(rt.done_ns[s] for s in measured)
        arrive = min(rt.arrival_ns[s] for s in measured)
        span = last - min(first, arrive)
        thr = len(measured) * 1e9 / span if span > 0 else 0.0
    else:
        thr = 0.0
    attempts = st.commits + st.aborts
    return RunMetrics(
        nf=nf, workers=rt.config.n_workers, params=params, throughput_pps=thr,
        loss=st.dropped / n if n else 0.0, delivery_loss=1 - st.emitted / n if n else 0.0,
        abort_fraction=st.aborts / attempts if attempts else 0.0,
        p50_ns=_percentile(lat, 0.5), p99_ns=_percentile(lat, 0.99), ingested=n,
        processed=st.processed, dropped=st.dropped, emitted=st.emitted, commits=st.commits,
        aborts=st.aborts, per_worker=list(st.per_worker_processed), mode=mode, wall_s=wall_s)


@dataclass
class BenchResult:
    metrics: RunMetrics
    report: ProfileReport | None
    runtime: Runtime


def run_benchmark(nf: str | NfDefinition, config: BenchConfig | RuntimeConfig | None,
                  trace: list[TraceRecord], workers: int | None = None, mode: str = "deterministic",
                  profile: bool = False, seed: int | None = None, params: dict | None = None) -> BenchResult:
    """Replay ``trace`` through a fresh runtime and measure it."""
    cfg = config if isinstance(config, BenchConfig) else BenchConfig(config or RuntimeConfig())
    runtime_cfg = dataclasses.replace(cfg.runtime)
    if workers is not None:
        runtime_cfg.n_workers = workers
    if seed is not None:
        runtime_cfg.seed = seed
    merged = {**cfg.params, **(params or {})}
    nf_def = nf if isinstance(nf, NfDefinition) else build_nf(nf, merged)
    name = nf_def.name
    if cfg.rate_pps:
        trace = rescale(trace, cfg.rate_pps)
    records = [(r.ts_ns, r.frame()) for r in trace]
    profiler = Profiler() if profile else None
    rt = Runtime(nf_def, runtime_cfg, profiler)
    wall = 0.0
    if mode == "deterministic":
        Simulation(rt).run(records, extra_ns=int(cfg.extra_ms * 1e6))
    elif mode == "wall":
        rt.last_worker = 0
        wall = run_threaded(rt, records)
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    rt.stop_nf()
    metrics = collect_metrics(rt, name, merged, mode, wall)
    report = build_report(profiler, rt.store.commits) if profiler is not None else None
    return BenchResult(metrics, report, rt)


def measure_max_throughput(nf: str | NfDefinition, config: BenchConfig | RuntimeConfig | None,
                           trace: list[TraceRecord], loss_budget: float = 0.001,
                           lo_pps: float = 1e5, hi_pps: float = 1e9, tolerance: float = 0.02,
                           max_iter: int = 40, loss_metric: str = "loss", workers: int | None = None,
                           params: dict | None = None) -> float:
    """Highest offered rate whose loss stays within ``loss_budget`` (binary search)."""
    cfg = config if isinstance(config, BenchConfig) else BenchConfig(config or RuntimeConfig())

    def loss_at(rate: float) -> float:
        run_cfg = dataclasses.replace(cfg, rate_pps=rate)
        m = run_benchmark(nf, run_cfg, trace, workers=workers, params=params).metrics
        return getattr(m, loss_metric)

    if loss_at(hi_pps) <= loss_budget:
        return hi_pps
    if loss_at(lo_pps) > loss_budget:
        raise NotConverged(f"loss exceeds budget even at {lo_pps:.0f} pps")
    lo, hi = lo_pps, hi_pps
    for _ in range(max_iter):
        if (hi - lo) / hi <= tolerance:
            return lo
        mid = math.sqrt(lo * hi) if hi / lo > 4 else (lo + hi) / 2
        if loss_at(mid) <= loss_budget:
            lo = mid
        else:
            hi = mid
    raise NotConverged(f"no convergence within {max_iter} iterations (bracket {lo:.0f}..{hi:.0f} pps)")


# -- result files ---------------------------------------------------------------

CSV_FIELDS = ["nf", "workers", "params", "throughput", "loss", "abort_fraction", "p50", "p99"]


def run_key(row: dict, with_params: bool = False) -> tuple:
    key = (row["nf"], str(row["workers"]))
    return key + (row["params"],) if with_params else key


def metrics_row(m: RunMetrics) -> dict:
    return {"nf": m.nf, "workers": m.workers, "params": json.dumps(m.params, sort_keys=True, default=str),
            "throughput": repr(float(m.throughput_pps)), "loss": repr(float(m.loss)),
            "abort_fraction": repr(float(m.abort_fraction)), "p50": repr(float(m.p50_ns)),
            "p99": repr(float(m.p99_ns))}


def emit_results(metrics: list[RunMetrics], csv_path, report: ProfileReport | None = None,
                 json_path=None) -> None:
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for m in metrics:
            w.writerow(metrics_row(m))
    if report is not None and json_path is not None:
        from ..profiler import render_report
        Path(json_path).write_text(render_report(report, "json"), encoding="utf-8")


def read_results(csv_path) -> list[dict]:
    with open(csv_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("throughput", "loss", "abort_fraction", "p50", "p99"):
            r[k] = float(r[k])
        r["workers"] = int(r["workers"])
    return rows


@dataclass(frozen=True)
class Delta:
    key: tuple
    throughput_ratio: float
    abort_ratio: float
    flagged: bool


def _ratio(b: float, a: float) -> float:
    if a == 0:
        return 1.0 if b == 0 else math.inf
    return b / a


def compare_runs(csv_a, csv_b, throughput_threshold: float = 0.1, abort_threshold: float = 0.1) -> list[Delta]:
    """Per run key, ratios b/a of throughput and abort fraction.

    Runs are matched on (nf, workers), so a sweep before a parameter change
    lines up with the sweep after it.  When a file holds several parameter
    sets for one (nf, workers), the params join the key.  A row is flagged
    when either ratio moves by more than its threshold.
    """
    rows_a, rows_b = read_results(csv_a), read_results(csv_b)
    with_params = any(len({run_key(r) for r in rows}) < len(rows) for rows in (rows_a, rows_b))
    a = {run_key(r, with_params): r for r in rows_a}
    b = {run_key(r, with_params): r for r in rows_b}
    for k in a:
        if k not in b:
            raise KeyMismatch(f"run {k} missing from {csv_b}")
    for k in b:
        if k not in a:
            raise KeyMismatch(f"run {k} missing from {csv_a}")
    out = []
    for k in sorted(a):
        t = _ratio(b[k]["throughput"], a[k]["throughput"])
        ab = _ratio(b[k]["abort_fraction"], a[k]["abort_fraction"])
        flagged = abs(t - 1) > throughput_threshold or abs(ab - 1) > abort_threshold
        out.append(Delta(k, t, ab, flagged))
    return out
