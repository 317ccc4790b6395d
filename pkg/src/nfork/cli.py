"""``nfork`` command line: trace generation, single runs, worker sweeps, comparisons."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ParseError
from .dispatch import ConfigError, RssIncompatible
from .harness import (KeyMismatch, NotConverged, compare_runs, emit_results, generate_trace, load_bench_config,
                      load_trace_spec, read_trace, run_benchmark, write_trace)
from .nfs import CATALOG
from .profiler import UnknownFormat, render_report


class UsageError(ValueError):
    pass


def parse_range(text: str) -> list[int]:
    """``"1..4"`` -> [1, 2, 3, 4]; a bare ``"3"`` is a single point."""
    lo, sep, hi = text.partition("..")
    try:
        a = int(lo)
        b = int(hi) if sep else a
    except ValueError:
        raise UsageError(f"bad worker range {text!r} (expected A..B)") from None
    if a < 1 or b < a:
        raise UsageError(f"bad worker range {text!r}")
    return list(range(a, b + 1))


def _summary(m) -> str:
    return (f"{m.nf}: workers={m.workers} throughput={m.throughput_pps / 1e6:.3f} Mpps "
            f"loss={m.loss:.4f} aborts={m.aborts} abort_fraction={m.abort_fraction:.4f} "
            f"p50={m.p50_ns:.0f}ns p99={m.p99_ns:.0f}ns processed={m.processed} dropped={m.dropped}")


def cmd_gen_trace(args) -> int:
    spec = load_trace_spec(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    records = generate_trace(spec)
    write_trace(records, args.out)
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def _run(args, workers: int, profile: bool):
    cfg = load_bench_config(args.config, args.nf)
    trace = read_trace(args.trace)
    mode = "wall" if getattr(args, "wall", False) else "deterministic"
    return run_benchmark(args.nf, cfg, trace, workers=workers, mode=mode, profile=profile,
                         seed=getattr(args, "seed", None))


def cmd_run(args) -> int:
    profile = args.profile or args.report is not None
    res = _run(args, args.workers, profile)
    print(_summary(res.metrics))
    if res.report is not None:
        sys.stdout.write("\n" + render_report(res.report, "text"))
        if args.report is not None:
            Path(args.report).write_text(render_report(res.report, "json"), encoding="utf-8")
    if args.out:
        emit_results([res.metrics], args.out)
    return 0


def cmd_bench(args) -> int:
    rows = []
    for w in parse_range(args.sweep_workers):
        m = _run(args, w, False).metrics
        print(_summary(m))
        rows.append(m)
    emit_results(rows, args.out)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_compare(args) -> int:
    deltas = compare_runs(args.a, args.b, args.throughput_threshold, args.abort_threshold)
    print(f"{'nf':<12} {'workers':>7}  {'throughput b/a':>14}  {'aborts b/a':>10}  params")
    for d in deltas:
        nf, workers, *params = d.key
        mark = "  *" if d.flagged else ""
        print(f"{nf:<12} {workers:>7}  {d.throughput_ratio:>14.3f}  {d.abort_ratio:>10.3f}  {''.join(params)}{mark}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nfork", description="Transactional NF runtime harness")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-trace", help="generate a synthetic CSV trace")
    g.add_argument("--spec", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen_trace)

    def common(sp):
        sp.add_argument("--nf", required=True, choices=sorted(CATALOG))
        sp.add_argument("--config")
        sp.add_argument("--trace", required=True)
        sp.add_argument("--wall", action="store_true", help="threaded run timed by the wall clock")

    r = sub.add_parser("run", help="run one NF over a trace")
    common(r)
    r.add_argument("--workers", type=int, default=4)
    r.add_argument("--profile", action="store_true")
    r.add_argument("--report", help="write the profiler report as JSON")
    r.add_argument("--deterministic", action="store_true", help="virtual-time simulation (the default)")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="also write a one-row results CSV")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="sweep worker counts and write a results CSV")
    common(b)
    b.add_argument("--sweep-workers", required=True, metavar="A..B")
    b.add_argument("--seed", type=int)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("compare", help="ratio table between two results CSVs")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--throughput-threshold", type=float, default=0.1)
    c.add_argument("--abort-threshold", type=float, default=0.1)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "deterministic", False) and getattr(args, "wall", False):
        parser.error("--deterministic and --wall are exclusive")
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be >= 1")
    try:
        return args.func(args)
    except (ConfigError, ParseError, RssIncompatible, KeyMismatch, NotConverged, UnknownFormat,
            UsageError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"nfork: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
