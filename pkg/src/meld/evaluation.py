"""Component alignment, parameter error and averaged-KL variable ranking."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import Dataset
from .params import ModelParams


@dataclass(frozen=True, eq=False)
class Alignment:
    """``perm[h]`` is the estimated component matched to true component ``h``."""

    perm: np.ndarray
    error: float


def _blocks(Phi) -> list[np.ndarray]:
    if isinstance(Phi, ModelParams):
        return Phi.blocks
    return [np.atleast_2d(np.asarray(b, dtype=float)) for b in Phi]


def alignment_costs(Phi_hat, Phi_true) -> np.ndarray:
    """``C[a, b] = sum_j ||phi_hat_ja - phi_true_jb||^2``."""
    est, true = _blocks(Phi_hat), _blocks(Phi_true)
    if len(est) != len(true):
        raise ValueError(f"variable counts differ: {len(est)} vs {len(true)}")
    k = est[0].shape[1]
    cost = np.zeros((k, k))
    for e, t in zip(est, true):
        if e.shape != t.shape:
            raise ValueError(f"parameter blocks differ in shape: {e.shape} vs {t.shape}")
        cost += ((e[:, :, None] - t[:, None, :]) ** 2).sum(axis=0)
    return cost


def align_components(Phi_hat, Phi_true) -> Alignment:
    """Relabel estimated components to best match the truth (optimal assignment)."""
    cost = alignment_costs(Phi_hat, Phi_true)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty_like(cols)
    perm[cols] = rows
    return Alignment(perm=perm, error=float(cost[rows, cols].sum()))


def param_mse(Phi_hat, Phi_true, alignment: Alignment | None = None) -> float:
    """Aligned squared error averaged over all ``sum_j d_j * k`` parameters."""
    alignment = alignment or align_components(Phi_hat, Phi_true)
    est, true = _blocks(Phi_hat), _blocks(Phi_true)
    total = sum(((e[:, alignment.perm] - t) ** 2).sum() for e, t in zip(est, true))
    count = sum(t.size for t in true)
    return float(total / count)


def marginal_frequency(dataset: Dataset, j: int) -> np.ndarray:
    spec = dataset.schema[j]
    if not spec.is_categorical:
        raise ValueError(f"variable {spec.name!r} is not categorical")
    if dataset.n < 1:
        raise ValueError("empty dataset")
    counts = np.bincount(dataset.codes[:, j].astype(int), minlength=spec.dim)
    return counts / dataset.n


def marginal_frequency_exact(dataset: Dataset, j: int) -> list[Fraction]:
    """Level frequencies as exact fractions."""
    counts = np.bincount(dataset.codes[:, j].astype(int), minlength=dataset.schema[j].dim)
    return [Fraction(int(c), dataset.n) for c in counts]


def ave_kl(Phi_j: np.ndarray, marginal: np.ndarray, k: int | None = None) -> float:
    """Mean over components of KL(phi_jh || marginal), natural log.

    Returns ``inf`` when some component puts mass on a level the marginal
    gives zero probability.
    """
    Phi_j = np.asarray(Phi_j, dtype=float)
    marginal = np.asarray(marginal, dtype=float)
    k = Phi_j.shape[1] if k is None else k
    if Phi_j.shape != (marginal.size, k):
        raise ValueError(f"Phi_j must be ({marginal.size}, {k}), got {Phi_j.shape}")
    if np.any((Phi_j > 0) & (marginal[:, None] <= 0)):
        return float("inf")
    pos = Phi_j > 0
    terms = np.zeros_like(Phi_j)
    ratio = Phi_j[pos] / np.broadcast_to(marginal[:, None], Phi_j.shape)[pos]
    terms[pos] = Phi_j[pos] * np.log(ratio)
    return float(terms.sum() / k)


def rank_variables_by_kl(Phi_hat: ModelParams, dataset: Dataset) -> list[tuple[int, float]]:
    """Categorical variables sorted by decreasing averaged KL; ties by index."""
    scores = []
    for j, spec in enumerate(dataset.schema):
        if spec.is_categorical:
            scores.append((j, ave_kl(Phi_hat[j], marginal_frequency(dataset, j))))
    return sorted(scores, key=lambda item: (-item[1], item[0]))
