"""Array microbenchmark: each packet reads (RO) or increments (RW) one Zipf-chosen element."""
from __future__ import annotations

import bisect
import itertools
from dataclasses import dataclass

from ..dispatch import NfDefinition
from ..ds import TVector
from .common import params_from, splitmix64


@dataclass
class MicrobenchParams:
    length: int = 10_000
    mode: str = "RO"
    zipf: float = 0.0
    seed: int = 1

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("length must be >= 1")
        self.mode = self.mode.upper()
        if self.mode not in ("RO", "RW"):
            raise ValueError("mode must be RO or RW")


def zipf_cdf(n: int, s: float) -> list[float]:
    weights = [1.0 / (k ** s) for k in range(1, n + 1)]
    total = sum(weights)
    return [c / total for c in itertools.accumulate(weights)]


def zipf_index(cdf: list[float], seed: int, seq: int) -> int:
    u = splitmix64(splitmix64(seed) ^ seq) / 2.0 ** 64
    return min(bisect.bisect_right(cdf, u), len(cdf) - 1)


def build_microbench(params: dict | MicrobenchParams | None = None) -> NfDefinition:
    p = params_from(MicrobenchParams, params)
    cdf = zipf_cdf(p.length, p.zipf)
    rw = p.mode == "RW"

    def init_nf(ctx):
        ctx.agg.array = TVector(ctx.store, "array", p.length, 0)

    def orphan(ctx, pkt):
        i = zipf_index(cdf, p.seed, pkt.seq)
        v = ctx.agg.array.read(i)
        if rw:
            ctx.agg.array.write(i, v + 1)
        ctx.send()

    return NfDefinition("microbench", init_nf=init_nf, orphan_pkt=orphan, params=vars(p).copy())
