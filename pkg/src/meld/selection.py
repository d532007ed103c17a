"""Fitness index and selection of the number of components."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .data import Dataset
from .estimator import FitConfig, FitReport, fit, with_k
from .gmm import MomentVectorLayout, WeightVector, target_vector
from .moments import MomentStats

log = logging.getLogger(__name__)


def fitness_index(q_value: float, stats: MomentStats, weights=None, order: int = 2) -> float:
    """``1 - Q / (e^T A e)`` where e stacks the pair (and triple) targets."""
    layout = MomentVectorLayout.build(stats.schema, order)
    e = target_vector(stats, layout)
    if weights is None:
        scale = float(e @ e)
    else:
        w = weights.values if isinstance(weights, WeightVector) else np.asarray(weights, float)
        scale = float(e @ (w * e))
    if not scale > 0:
        raise ValueError("fitness index undefined: the targets have zero weighted norm")
    return 1.0 - q_value / scale


@dataclass
class KResult:
    k: int
    seed: int
    fi: list[float] = field(default_factory=list)
    sweeps: list[int] = field(default_factory=list)
    converged: list[bool] = field(default_factory=list)
    error: str | None = None
    report: FitReport | None = field(default=None, repr=False)


@dataclass
class SelectionReport:
    order: int
    stages: int
    criterion_stage: int
    results: list[KResult]
    chosen_k: int | None

    def fi_table(self) -> dict[int, list[float]]:
        return {r.k: r.fi for r in self.results}

    def to_rows(self) -> list[list]:
        rows = [["k", "fi_stage1", "fi_stage2", "sweeps_stage1", "sweeps_stage2",
                 "converged_stage1", "converged_stage2", "error"]]
        for r in self.results:
            fi = r.fi + [None] * (2 - len(r.fi))
            sw = r.sweeps + [None] * (2 - len(r.sweeps))
            cv = r.converged + [None] * (2 - len(r.converged))
            rows.append([r.k, *fi, *sw, *cv, r.error])
        return rows

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "stages": self.stages,
            "criterion_stage": self.criterion_stage,
            "chosen_k": self.chosen_k,
            "results": [
                {"k": r.k, "seed": r.seed, "fi": r.fi, "sweeps": r.sweeps,
                 "converged": r.converged, "error": r.error}
                for r in self.results
            ],
        }


def seed_for_k(base_seed: int, k: int) -> int:
    return int(np.random.SeedSequence([base_seed, k]).generate_state(1)[0])


def _fit_one(dataset: Dataset, config: FitConfig) -> KResult:
    out = KResult(k=config.k, seed=config.seed)
    try:
        report = fit(dataset, config)
    except (ValueError, RuntimeError, FloatingPointError) as exc:
        out.error = f"{type(exc).__name__}: {exc}"
        return out
    out.report = report
    out.fi = [s.fi for s in report.stages]
    out.sweeps = [s.sweeps for s in report.stages]
    out.converged = [s.converged for s in report.stages]
    return out


def sweep_k(
    dataset: Dataset,
    k_values: Iterable[int],
    config: FitConfig,
    criterion_stage: int = 1,
    n_jobs: int = 1,
) -> SelectionReport:
    """Fit every k with a fresh seeded start and pick the k with the largest FI.

    FI ties go to the smaller k. A failed fit is recorded on its row and
    does not stop the sweep.
    """
    ks = sorted(set(int(k) for k in k_values))
    if not ks:
        raise ValueError("k_values must not be empty")
    if criterion_stage > config.stages:
        raise ValueError("criterion stage exceeds the number of fitted stages")
    configs = [with_k(config, k, seed_for_k(config.seed, k)) for k in ks]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_fit_one, [dataset] * len(configs), configs))
    else:
        results = [_fit_one(dataset, cfg) for cfg in configs]
    chosen, best = None, -np.inf
    for r in results:
        if r.error:
            log.warning("k=%d failed: %s", r.k, r.error)
            continue
        value = r.fi[criterion_stage - 1]
        if value > best:
            chosen, best = r.k, value
    return SelectionReport(config.order, config.stages, criterion_stage, results, chosen)


__all__ = ["KResult", "SelectionReport", "fitness_index", "seed_for_k", "sweep_k"]
