"""Wall-clock timing of alignment losses (forward plus backward) across feature widths."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import autodiff as ad
from .alignment import AlignmentConfig, alignment_terms

BENCH_COLUMNS = ("p", "batch", "method", "iters", "median_s", "p10_s", "p90_s")


@dataclass(frozen=True)
class BenchRow:
    p: int
    batch: int
    method: str
    iters: int
    median_s: float
    p10_s: float
    p90_s: float

    def as_tuple(self):
        return (self.p, self.batch, self.method, self.iters, self.median_s, self.p10_s, self.p90_s)


def alignment_step(method: str, zs: np.ndarray, zt: np.ndarray, cfg: AlignmentConfig) -> float:
    """One loss evaluation and its backward pass; every term gets unit weight."""
    a = ad.parameter(zs)
    b = ad.parameter(zt)
    terms = alignment_terms(method, a, b, cfg)
    total = None
    for v in terms.values():
        total = v if total is None else total + v
    ad.backward(total)
    return total.item()


def time_method(method: str, zs, zt, cfg: AlignmentConfig, iters: int, warmup: int = 1) -> np.ndarray:
    for _ in range(warmup):
        alignment_step(method, zs, zt, cfg)
    out = np.empty(iters)
    for i in range(iters):
        t0 = time.perf_counter()
        alignment_step(method, zs, zt, cfg)
        out[i] = time.perf_counter() - t0
    return out


def bench_alignment(
    p_list: Sequence[int],
    batch: int = 64,
    iters: int = 20,
    methods: Sequence[str] = ("tikuda", "dare-gram"),
    seed: int = 0,
    warmup: int = 1,
    cfg: AlignmentConfig | None = None,
    threads: int = 1,
) -> list[BenchRow]:
    """Median, 10th and 90th percentile of per-call time for each ``(p, method)``.

    Inputs are seeded Gaussian batches generated before any timing starts.
    BLAS is pinned to ``threads`` threads for the whole run.
    """
    p_list = list(p_list)
    if p_list != sorted(p_list):
        raise ValueError("p values must be sorted ascending")
    if iters < 20:
        raise ValueError("iters must be >= 20 for stable medians")
    cfg = cfg or AlignmentConfig()
    rng = np.random.default_rng(seed)
    inputs = {p: (rng.standard_normal((batch, p)), rng.standard_normal((batch, p)) * 1.5 + 0.3) for p in p_list}
    rows = []
    with threadpool_limits(limits=threads):
        for p in p_list:
            zs, zt = inputs[p]
            for m in methods:
                t = time_method(m, zs, zt, cfg, iters, warmup)
                rows.append(
                    BenchRow(
                        p, batch, m, iters,
                        float(np.median(t)), float(np.percentile(t, 10)), float(np.percentile(t, 90)),
                    )
                )
    return rows


def speed_ratios(rows: Sequence[BenchRow], slow: str = "dare-gram", fast: str = "tikuda") -> dict[int, float]:
    """``median(slow) / median(fast)`` per feature width."""
    med = {(r.p, r.method): r.median_s for r in rows}
    return {p: med[(p, slow)] / med[(p, fast)] for p in sorted({r.p for r in rows}) if (p, slow) in med and (p, fast) in med}


def write_bench_csv(path, rows: Sequence[BenchRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BENCH_COLUMNS)
        for r in rows:
            w.writerow([r.p, r.batch, r.method, r.iters, repr(r.median_s), repr(r.p10_s), repr(r.p90_s)])


def read_bench_csv(path) -> list[BenchRow]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        return [
            BenchRow(int(d["p"]), int(d["batch"]), d["method"], int(d["iters"]),
                     float(d["median_s"]), float(d["p10_s"]), float(d["p90_s"]))
            for d in rd
        ]
