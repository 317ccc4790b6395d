"""Before/after workloads for the profiling case studies and the batching and scaling checks.

Each study runs the same trace twice, once with the NF's default semantics
and once with the recipe applied, and returns both runs.  Sizes default to
what a laptop finishes in seconds; scale them up through the arguments.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

from ..dispatch import RuntimeConfig
from .bench import BenchConfig, BenchResult, run_benchmark
from .trace import TraceSpec, generate_trace


@dataclass
class Study:
    name: str
    knob: str
    before: BenchResult
    after: BenchResult

    @property
    def abort_drop(self) -> float:
        """How many times lower the abort fraction is after the change."""
        a, b = self.before.metrics.abort_fraction, self.after.metrics.abort_fraction
        return a / b if b else float("inf")

    @property
    def speedup(self) -> float:
        a, b = self.before.metrics.throughput_pps, self.after.metrics.throughput_pps
        return b / a if a else float("inf")

    def summary(self) -> str:
        lines = [f"{self.name}: {self.knob}"]
        for label, r in (("before", self.before), ("after", self.after)):
            m = r.metrics
            top = r.report.causes[0] if r.report and r.report.causes else None
            cause = f", top cause {top.id} ({100 * top.fraction:.1f}%)" if top else ""
            lines.append(f"  {label:<6} workers={m.workers} throughput={m.throughput_pps / 1e6:.2f} Mpps "
                         f"abort_fraction={m.abort_fraction:.4f} aborts={m.aborts}{cause}")
        lines.append(f"  throughput x{self.speedup:.2f}, abort fraction /{self.abort_drop:.1f}")
        return "\n".join(lines)


def _pair(name, knob, nf, trace, runtime, before, after, profile=True) -> Study:
    a = run_benchmark(nf, BenchConfig(runtime, before), trace, profile=profile)
    b = run_benchmark(nf, BenchConfig(runtime, after), trace, profile=profile)
    return Study(name, knob, a, b)


def antiddos_study(workers: int = 8, n_flows: int = 10_000, rate_pps: float = 50e6, seed: int = 1,
                   relaxed_ms: float = 0.1) -> Study:
    """Attack traffic of one-packet flows; counter staleness 0 vs ``relaxed_ms``."""
    trace = generate_trace(TraceSpec(n_flows=n_flows, packets_per_flow=1, rate_pps=rate_pps, seed=seed))
    rt = RuntimeConfig(n_workers=workers, queue_capacity=max(100_000, len(trace)))
    return _pair("antiddos", f"ctr_staleness_ms 0 -> {relaxed_ms}", "antiddos", trace, rt,
                 {"ctr_staleness_ms": 0.0}, {"ctr_staleness_ms": relaxed_ms})


def bridge_study(workers: int = 8, n_packets: int = 10_000, rate_pps: float = 50e6, seed: int = 1,
                 refresh_ms: float = 1000.0) -> Study:
    """One hot source MAC; refresh on every packet vs at most once per ``refresh_ms``."""
    trace = generate_trace(TraceSpec(kind="hot_mac", n_packets=n_packets, rate_pps=rate_pps, seed=seed))
    rt = RuntimeConfig(n_workers=workers, queue_capacity=max(100_000, len(trace)))
    return _pair("bridge", f"refresh_interval_ms 0 -> {refresh_ms}", "bridge", trace, rt,
                 {"refresh_interval_ms": 0.0}, {"refresh_interval_ms": refresh_ms})


def nat_study(workers: int = 4, n_flows: int = 15_000, rate_pps: float = 4e6, lan_share: float = 0.9,
              ports_per_ip: int = 64, ips: int = 53, extra_ips: int = 2, seed: int = 3) -> Study:
    """Public pool sized to the concurrent demand, then overprovisioned by ``extra_ips``.

    Mappings live as long as it takes the LAN side to open ``ips * ports_per_ip``
    new flows, so in steady state the base pool is just about fully leased.
    """
    trace = generate_trace(TraceSpec(n_flows=n_flows, packets_per_flow=1, from_lan=lan_share, rate_pps=rate_pps,
                                     seed=seed))
    ttl_ms = ips * ports_per_ip / (rate_pps * lan_share) * 1e3
    rt = RuntimeConfig(n_workers=workers, queue_capacity=max(100_000, len(trace)))
    base = {"ports_per_ip": ports_per_ip, "mapping_ttl_ms": ttl_ms}
    return _pair("nat", f"public_ips {ips} -> {ips + extra_ips}", "nat", trace, rt,
                 {**base, "public_ips": ips}, {**base, "public_ips": ips + extra_ips})


def batching_study(workers: int = 4, n_packets: int = 20_000, rate_pps: float = 100e6, seed: int = 1,
                   batch: int = 32) -> Study:
    """Cheap read-only handlers offered faster than one-packet transactions drain."""
    trace = generate_trace(TraceSpec(n_flows=n_packets, packets_per_flow=1, rate_pps=rate_pps, seed=seed))
    params = {"mode": "RO"}
    cfg = RuntimeConfig(n_workers=workers, queue_capacity=max(100_000, len(trace)))
    a = run_benchmark("microbench", BenchConfig(cfg, params), trace)
    b = run_benchmark("microbench", BenchConfig(replace(cfg, batch_size=batch), params), trace)
    return Study("batching", f"batch_size 1 -> {batch}", a, b)


def ro_scaling(workers: tuple[int, ...] = (1, 4), n_packets: int = 20_000, rate_pps: float = 100e6,
               mode: str = "deterministic", seed: int = 1) -> dict[int, BenchResult]:
    """Read-only microbench throughput per worker count (``mode="wall"`` for real threads)."""
    trace = generate_trace(TraceSpec(n_flows=n_packets, packets_per_flow=1, rate_pps=rate_pps, seed=seed))
    out = {}
    for w in workers:
        cfg = BenchConfig(RuntimeConfig(n_workers=w, queue_capacity=max(100_000, len(trace))), {"mode": "RO"})
        out[w] = run_benchmark("microbench", cfg, trace, mode=mode)
    return out
