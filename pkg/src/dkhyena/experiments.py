"""Ablation and kernel-size experiment harnesses with a fixed results CSV.

Each run clones the base estimator, pins (variant, k_s, seed), fits on the
training set, and scores the held-out set. Seeds and data are identical
across variants, so rows are comparable; aggregation is a deterministic fold
in job order. DKH_THREADS > 1 fans runs out to a process pool; results are
reassembled in job order either way.
"""

from __future__ import annotations

import concurrent.futures
import io
from dataclasses import dataclass

import numpy as np

from .data import MultimodalSample
from .errors import BadKernelSizeError
from .estimator import MultimodalIntentClassifier
from .fusion import VARIANTS
from .metrics import MetricsReport

CSV_HEADER = "variant,k_s,seed,acc,wf,wp,f1,prec,rec,oid_acc,f1_is,f1_oos,oid_f1"
_METRIC_KEYS = ("acc", "wf", "wp", "f1", "prec", "rec",
                "oid_acc", "f1_is", "f1_oos", "oid_f1")

PAPER_ABLATION_VARIANTS = ("full", "no_attention", "no_dynamic_short_conv",
                           "no_long_conv")


@dataclass
class RunResult:
    variant: str
    k_s: int
    seed: int
    report: MetricsReport


def _run_one(job) -> RunResult:
    est_params, variant, k_s, seed, train_samples, test_samples, oos_index = job
    est = MultimodalIntentClassifier(**est_params)
    est.set_params(variant=variant, k_s=k_s, seed=seed)
    est.fit(train_samples)
    return RunResult(variant, k_s, seed, est.evaluate(test_samples, oos_index))


def _execute(jobs, threads: int) -> list[RunResult]:
    if threads <= 1 or len(jobs) <= 1:
        return [_run_one(job) for job in jobs]
    with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_run_one, jobs))


def run_ablation_suite(base: MultimodalIntentClassifier,
                       train_samples: list[MultimodalSample],
                       test_samples: list[MultimodalSample],
                       variants=PAPER_ABLATION_VARIANTS,
                       seeds=(0, 1, 2, 3, 4),
                       oos_index: int | None = None,
                       threads: int = 1) -> list[RunResult]:
    if not variants:
        raise ValueError("variants list must be non-empty")
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}")
    est_params = base.get_params()
    k_s = est_params["k_s"]
    jobs = [(est_params, variant, k_s, seed, train_samples, test_samples, oos_index)
            for variant in variants for seed in seeds]
    return _execute(jobs, threads)


def run_kernel_sweep(base: MultimodalIntentClassifier,
                     train_samples: list[MultimodalSample],
                     test_samples: list[MultimodalSample],
                     k_values=(1, 3, 5),
                     seeds=(0, 1, 2, 3, 4),
                     oos_index: int | None = None,
                     threads: int = 1) -> list[RunResult]:
    for k in k_values:
        if k < 1 or k % 2 == 0:
            raise BadKernelSizeError(f"kernel sizes must be odd and >= 1, got {k}")
    est_params = base.get_params()
    variant = est_params["variant"]
    jobs = [(est_params, variant, k, seed, train_samples, test_samples, oos_index)
            for k in k_values for seed in seeds]
    return _execute(jobs, threads)


def _fmt(value) -> str:
    return "" if value is None else repr(float(value))


def results_to_csv(results: list[RunResult]) -> str:
    """Per-run rows, then mean/std summary rows per (variant, k_s) group."""
    out = io.StringIO()
    out.write(CSV_HEADER + "\n")
    groups: dict[tuple, list[RunResult]] = {}
    for r in results:
        row = r.report.as_dict()
        cells = [r.variant, str(r.k_s), str(r.seed)]
        cells += [_fmt(row.get(k)) for k in _METRIC_KEYS]
        out.write(",".join(cells) + "\n")
        groups.setdefault((r.variant, r.k_s), []).append(r)
    for (variant, k_s), members in groups.items():
        for stat, fn in (("mean", np.mean), ("std", lambda v: np.std(v, ddof=0))):
            cells = [variant, str(k_s), stat]
            for key in _METRIC_KEYS:
                vals = [m.report.as_dict().get(key) for m in members]
                cells.append("" if vals[0] is None else repr(float(fn(vals))))
            out.write(",".join(cells) + "\n")
    return out.getvalue()


def group_mean(results: list[RunResult], variant: str, key: str,
               k_s: int | None = None) -> float:
    vals = [r.report.as_dict()[key] for r in results
            if r.variant == variant and (k_s is None or r.k_s == k_s)]
    if not vals:
        raise ValueError(f"no runs for variant {variant!r}")
    return float(np.mean(vals))
