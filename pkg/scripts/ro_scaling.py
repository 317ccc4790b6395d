"""Read-only microbench throughput against worker count.

Virtual time shows the runtime's scaling; ``--wall`` times real threads,
which on CPython are bound by the interpreter lock and the host's cores.
"""
import argparse
import os

from nfork.harness.studies import ro_scaling


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--max-workers", type=int, default=4)
    ap.add_argument("--packets", type=int, default=20_000)
    ap.add_argument("--wall", action="store_true")
    args = ap.parse_args()
    mode = "wall" if args.wall else "deterministic"
    runs = ro_scaling(tuple(range(1, args.max_workers + 1)), args.packets, mode=mode)
    base = runs[1].metrics.throughput_pps
    print(f"mode={mode} cores={os.cpu_count()}")
    for w, r in runs.items():
        m = r.metrics
        print(f"  workers={w} throughput={m.throughput_pps / 1e6:8.2f} Mpps  x{m.throughput_pps / base:.2f}  "
              f"aborts={m.aborts}")


if __name__ == "__main__":
    main()
