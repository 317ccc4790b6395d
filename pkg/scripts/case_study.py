"""Before/after runs of a profiling case study, printed with the profiler's report.

    python scripts/case_study.py antiddos --workers 8
    python scripts/case_study.py nat --report
"""
import argparse

from nfork.harness import studies
from nfork.profiler import render_report

STUDIES = {
    "antiddos": studies.antiddos_study,
    "bridge": studies.bridge_study,
    "nat": studies.nat_study,
    "batching": studies.batching_study,
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("study", choices=sorted(STUDIES))
    ap.add_argument("--workers", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--report", action="store_true", help="print the full profiler report of the first run")
    args = ap.parse_args()
    kw = {k: v for k, v in (("workers", args.workers), ("seed", args.seed)) if v is not None}
    st = STUDIES[args.study](**kw)
    print(st.summary())
    if args.report and st.before.report is not None:
        print()
        print(render_report(st.before.report), end="")


if __name__ == "__main__":
    main()
