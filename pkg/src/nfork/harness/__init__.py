from .bench import (BenchConfig, BenchResult, KeyMismatch, NotConverged, RunMetrics, bench_config_from,
                    compare_runs, emit_results, load_bench_config, measure_max_throughput, read_results,
                    rescale, run_benchmark)
from .trace import (TraceRecord, TraceSpec, dumps_trace, frames, generate_trace, load_trace_spec, read_trace,
                    write_trace)

__all__ = [
    "BenchConfig", "BenchResult", "KeyMismatch", "NotConverged", "RunMetrics", "bench_config_from",
    "compare_runs", "emit_results", "load_bench_config", "measure_max_throughput", "read_results",
    "rescale", "run_benchmark", "TraceRecord", "TraceSpec", "dumps_trace", "frames", "generate_trace",
    "load_trace_spec", "read_trace", "write_trace",
]
