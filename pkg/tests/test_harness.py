import collections

import pytest

from nfork.dispatch import ConfigError, RuntimeConfig
from nfork.harness import (BenchConfig, KeyMismatch, NotConverged, TraceSpec, bench_config_from, compare_runs,
                           dumps_trace, emit_results, generate_trace, load_trace_spec, measure_max_throughput,
                           read_results, read_trace, rescale, run_benchmark, write_trace)
from nfork.harness.trace import HEADER
from nfork.profiler import report_from_json


def policer_trace(n=4000, rate=2e6):
    return generate_trace(TraceSpec(n_flows=1, packets_per_flow=n, rate_pps=rate, flow_spread=1.0, seed=1))


class TestTrace:
    def test_fixed_flows(self):
        recs = generate_trace(TraceSpec(n_flows=100, packets_per_flow=21, seed=4))
        assert len(recs) == 2100
        flows = collections.Counter((r.src_ip, r.dst_ip, r.src_port, r.dst_port) for r in recs)
        assert len(flows) == 100 and set(flows.values()) == {21}

    def test_mac_pairs(self):
        recs = generate_trace(TraceSpec(kind="mac_pairs", mac_pairs=3, packets_per_pair=10_000, seed=4))
        assert len(recs) == 60_000
        dirs = collections.Counter((r.src_mac, r.dst_mac) for r in recs)
        assert len(dirs) == 6 and set(dirs.values()) == {10_000}

    def test_sorted_and_deterministic(self, tmp_path):
        spec = TraceSpec(n_flows=50, flow_size="geometric", packets_per_flow=5, arrival="bursty",
                         bidirectional=True, tcp_fraction=0.5, seed=9)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_trace(generate_trace(spec), a)
        write_trace(generate_trace(spec), b)
        assert a.read_bytes() == b.read_bytes()
        ts = [r.ts_ns for r in read_trace(a)]
        assert ts == sorted(ts)
        other = dumps_trace(generate_trace(TraceSpec(**{**vars(spec), "seed": 10})))
        assert other != a.read_text()

    def test_csv_round_trip(self, tmp_path):
        recs = generate_trace(TraceSpec(kind="hot_mac", n_packets=300, seed=2))
        p = tmp_path / "t.csv"
        write_trace(recs, p)
        assert p.read_text().splitlines()[0] == ",".join(HEADER)
        back = read_trace(p)
        assert back == recs and [r.frame() for r in back] == [r.frame() for r in recs]

    def test_bad_inputs(self, tmp_path):
        with pytest.raises(ConfigError):
            TraceSpec(kind="pcap")
        p = tmp_path / "bad.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(ConfigError):
            read_trace(p)
        p.write_text(",".join(HEADER) + "\n1,zz,00:00:00:00:00:01,10.0.0.1,10.0.0.2,tcp,1,2,0\n")
        with pytest.raises(ConfigError, match="line 2"):
            read_trace(p)

    def test_spec_file(self, tmp_path):
        p = tmp_path / "spec.yaml"
        p.write_text("kind: mac_pairs\nmac_pairs: 2\npackets_per_pair: 5\nseed: 3\n")
        assert len(generate_trace(load_trace_spec(p))) == 20
        p.write_text("flows: 3\n")
        with pytest.raises(ConfigError):
            load_trace_spec(p)


class TestConfig:
    def test_sections(self):
        cfg = bench_config_from({"runtime": {"n_workers": 3, "batch_size": 8}, "params": {"burst": 2},
                                 "policer": {"rate_pps": 10}, "replay": {"rate_pps": 5e6, "extra_ms": 1},
                                 "cost": {"per_packet": 10}, "retry": {"immediate": 1}}, "policer")
        assert cfg.runtime.n_workers == 3 and cfg.runtime.cost.per_packet == 10
        assert cfg.runtime.retry.immediate == 1
        assert cfg.params == {"burst": 2, "rate_pps": 10} and cfg.rate_pps == 5e6 and cfg.extra_ms == 1.0

    @pytest.mark.parametrize("doc", [{"runtme": {}}, {"runtime": {"workers": 2}}, {"cost": {"x": 1}},
                                     {"runtime": {"batch_size": 33}}, [1, 2]])
    def test_rejects(self, doc):
        with pytest.raises(ConfigError):
            bench_config_from(doc, "fw")


class TestRescale:
    def test_rate(self):
        recs = policer_trace(101, 1e6)
        out = rescale(recs, 1e7)
        assert out[0].ts_ns == 0 and out[-1].ts_ns == 10_000
        assert [r.frame() for r in out] == [r.frame() for r in recs]

    def test_all_same_timestamp(self):
        recs = [r.with_ts(5) for r in policer_trace(4)]
        assert [r.ts_ns for r in rescale(recs, 1e9)] == [0, 1, 2, 3]


class TestRunBenchmark:
    def test_conservation_and_determinism(self):
        trace = generate_trace(TraceSpec(n_flows=200, packets_per_flow=5, rate_pps=50e6, seed=2))
        cfg = BenchConfig(RuntimeConfig(queue_capacity=16))
        a = run_benchmark("fw", cfg, trace, workers=4, profile=True)
        b = run_benchmark("fw", cfg, trace, workers=4, profile=True)
        m = a.metrics
        assert m.processed + m.dropped == m.ingested == len(trace) and m.dropped > 0
        assert m.loss == m.dropped / m.ingested and sum(m.per_worker) == m.processed
        assert m == b.metrics and a.report == b.report

    def test_latency_window_excludes_warmup(self):
        trace = generate_trace(TraceSpec(n_flows=100, packets_per_flow=10, seed=2))
        m = run_benchmark("microbench", None, trace, workers=2).metrics
        assert 0 < m.p50_ns <= m.p99_ns and m.throughput_pps > 0

    def test_unknown_mode(self):
        with pytest.raises(ConfigError):
            run_benchmark("fw", None, policer_trace(3), mode="fast")

    def test_policer_forwards_its_rate(self):
        # offered at twice the rate: a token bucket forwards rate * span + burst
        trace = policer_trace()
        cfg = BenchConfig(RuntimeConfig(n_workers=1), {"rate_pps": 1_000_000, "burst": 4})
        m = run_benchmark("policer", cfg, trace).metrics
        span_s = (trace[-1].ts_ns - trace[0].ts_ns) / 1e9
        assert m.emitted == pytest.approx(1e6 * span_s + 4, rel=0.02)


class TestMaxThroughput:
    def test_policer_at_configured_rate(self):
        cfg = BenchConfig(RuntimeConfig(n_workers=1), {"rate_pps": 1_000_000, "burst": 4})
        got = measure_max_throughput("policer", cfg, policer_trace(), loss_metric="delivery_loss", hi_pps=1e7)
        assert got == pytest.approx(1e6, rel=0.05)

    def test_lossless_nf_returns_ceiling(self):
        trace = generate_trace(TraceSpec(n_flows=20, packets_per_flow=5, seed=1))
        assert measure_max_throughput("microbench", None, trace, hi_pps=1e5, lo_pps=1e4) == 1e5

    def test_not_converged(self):
        trace = policer_trace(400)
        cfg = BenchConfig(RuntimeConfig(n_workers=1), {"rate_pps": 1000, "burst": 1})
        with pytest.raises(NotConverged):
            measure_max_throughput("policer", cfg, trace, loss_metric="delivery_loss", lo_pps=1e6)

    def test_budget_soundness_and_queue_monotonicity(self):
        trace = generate_trace(TraceSpec(n_flows=200, packets_per_flow=4, seed=5))
        rates = []
        for cap in (4, 64):
            cfg = BenchConfig(RuntimeConfig(queue_capacity=cap))
            r = measure_max_throughput("fw", cfg, trace, workers=2, lo_pps=1e5, hi_pps=1e9, loss_budget=0.01)
            again = run_benchmark("fw", BenchConfig(cfg.runtime, rate_pps=r), trace, workers=2).metrics
            assert again.loss <= 0.01
            rates.append(r)
        assert rates[1] >= rates[0]


class TestResults:
    def sweep(self):
        trace = generate_trace(TraceSpec(n_flows=60, packets_per_flow=5, rate_pps=20e6, seed=3))
        return [run_benchmark("antiddos", None, trace, workers=w, profile=True) for w in (1, 2, 3, 4)]

    def test_round_trip(self, tmp_path):
        runs = self.sweep()
        emit_results([r.metrics for r in runs], tmp_path / "r.csv", runs[-1].report, tmp_path / "p.json")
        rows = read_results(tmp_path / "r.csv")
        assert len(rows) == 4 and [r["workers"] for r in rows] == [1, 2, 3, 4]
        for row, r in zip(rows, runs):
            m = r.metrics
            assert (row["throughput"], row["loss"], row["abort_fraction"], row["p50"], row["p99"]) == \
                (m.throughput_pps, m.loss, m.abort_fraction, m.p50_ns, m.p99_ns)
        assert report_from_json((tmp_path / "p.json").read_text()) == runs[-1].report

    def test_no_report_no_json(self, tmp_path):
        emit_results([self.sweep()[0].metrics], tmp_path / "r.csv", None, tmp_path / "p.json")
        assert not (tmp_path / "p.json").exists()

    def test_compare(self, tmp_path):
        runs = self.sweep()
        emit_results([r.metrics for r in runs], tmp_path / "a.csv")
        deltas = compare_runs(tmp_path / "a.csv", tmp_path / "a.csv")
        assert len(deltas) == 4
        assert all(d.throughput_ratio == 1.0 and d.abort_ratio == 1.0 and not d.flagged for d in deltas)
        faster = [r.metrics for r in runs]
        for m in faster:
            m.throughput_pps *= 2
        emit_results(faster, tmp_path / "b.csv")
        assert all(d.flagged and d.throughput_ratio == pytest.approx(2) for d in
                   compare_runs(tmp_path / "a.csv", tmp_path / "b.csv"))

    def test_key_mismatch(self, tmp_path):
        runs = self.sweep()
        emit_results([r.metrics for r in runs], tmp_path / "a.csv")
        emit_results([r.metrics for r in runs[:3]], tmp_path / "b.csv")
        with pytest.raises(KeyMismatch, match="'4'"):
            compare_runs(tmp_path / "a.csv", tmp_path / "b.csv")

    def test_before_after_sweeps_line_up(self, tmp_path):
        trace = generate_trace(TraceSpec(kind="hot_mac", n_packets=3000, rate_pps=50e6, seed=1))
        for name, refresh in (("a", 0.0), ("b", 1000.0)):
            cfg = BenchConfig(RuntimeConfig(queue_capacity=10_000), {"refresh_interval_ms": refresh})
            emit_results([run_benchmark("bridge", cfg, trace, workers=w).metrics for w in (1, 4)],
                         tmp_path / f"{name}.csv")
        deltas = {d.key: d for d in compare_runs(tmp_path / "a.csv", tmp_path / "b.csv")}
        assert set(deltas) == {("bridge", "1"), ("bridge", "4")}
        assert deltas[("bridge", "4")].throughput_ratio > 2

    def test_params_join_key_when_needed(self, tmp_path):
        trace = policer_trace(200)
        rows = [run_benchmark("policer", None, trace, workers=1, params={"burst": b}).metrics for b in (1, 2)]
        emit_results(rows, tmp_path / "a.csv")
        keys = [d.key for d in compare_runs(tmp_path / "a.csv", tmp_path / "a.csv")]
        assert len(keys) == 2 and all(len(k) == 3 for k in keys)
