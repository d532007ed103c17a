"""Dirichlet moment scalings, empirical moment targets and population moments.

The empirical targets are the data-only parts of the second and third order
moment functions once the component means are replaced by sample means:

    E2[j, t] = mean(b_j o b_t) - a0/(a0+1) * mu_j o mu_t
    E3[j, s, t] = mean(b_j o b_s o b_t)
                  - a0/(a0+2) * (M_js o mu_t + mu_j o M_st + M_jt with mu_s in slot 2)
                  + 2 a0^2/((a0+1)(a0+2)) * mu_j o mu_s o mu_t

At the true parameters their expectations equal ``Phi_j L2 Phi_t^T`` and
``L3 x1 Phi_j x2 Phi_s x3 Phi_t`` respectively.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset, Schema


@dataclass(frozen=True, eq=False)
class DirichletPrior:
    alpha: np.ndarray

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float)).copy()
        if alpha.ndim != 1 or alpha.size == 0:
            raise ValueError("alpha must be a nonempty vector")
        if not np.all(np.isfinite(alpha)) or np.any(alpha <= 0):
            raise ValueError(f"alpha entries must be positive, got {alpha.tolist()}")
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def symmetric(cls, k: int, value: float = 0.1) -> "DirichletPrior":
        return cls(np.full(k, float(value)))

    @property
    def k(self) -> int:
        return self.alpha.size

    @property
    def alpha0(self) -> float:
        return float(self.alpha.sum())


@dataclass(frozen=True, eq=False)
class LambdaDiagonals:
    l2: np.ndarray
    l3: np.ndarray


def lambda_diagonals(prior: DirichletPrior) -> LambdaDiagonals:
    """Diagonal entries of the second and third order Dirichlet scalings."""
    a, a0 = prior.alpha, prior.alpha0
    l2 = a / (a0 * (a0 + 1.0))
    l3 = 2.0 * a / (a0 * (a0 + 1.0) * (a0 + 2.0))
    return LambdaDiagonals(l2=l2, l3=l3)


def pair_index(p: int) -> list[tuple[int, int]]:
    """Pairs j < t in stacking order (1,2), ..., (1,p), (2,3), ..., (p-1,p)."""
    return list(itertools.combinations(range(p), 2))


def triple_index(p: int) -> list[tuple[int, int, int]]:
    """Triples j < s < t with the rightmost index running fastest."""
    return list(itertools.combinations(range(p), 3))


@dataclass(frozen=True, eq=False)
class MomentStats:
    """Empirical moment targets in the padded layout.

    ``means`` is ``(p, D)``; ``e2`` is the dense ``(p, p, D, D)`` array with
    ``e2[t, j] == e2[j, t].T`` (diagonal blocks are zero and unused); ``e3``,
    when present, is packed over ``triples`` with shape ``(T, D, D, D)``.
    Padded cells are zero everywhere.
    """

    schema: Schema
    prior: DirichletPrior
    n: int
    means: np.ndarray = field(repr=False)
    e2: np.ndarray = field(repr=False)
    e3: np.ndarray | None = field(default=None, repr=False)

    @property
    def order(self) -> int:
        return 2 if self.e3 is None else 3

    @property
    def p(self) -> int:
        return self.schema.p

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return pair_index(self.p)

    @property
    def triples(self) -> list[tuple[int, int, int]]:
        return triple_index(self.p)

    def mean(self, j: int) -> np.ndarray:
        return self.means[j, : self.schema[j].dim].copy()

    def pair(self, j: int, t: int) -> np.ndarray:
        """Unpadded ``(d_j, d_t)`` target; ``pair(t, j) == pair(j, t).T``."""
        if j == t:
            raise ValueError("pair targets need distinct variables")
        dj, dt = self.schema[j].dim, self.schema[t].dim
        return self.e2[j, t, :dj, :dt].copy()

    def triple(self, j: int, s: int, t: int) -> np.ndarray:
        """Unpadded ``(d_j, d_s, d_t)`` target for any ordering of distinct indices."""
        if self.e3 is None:
            raise ValueError("third order targets were not computed")
        idx = (j, s, t)
        if len(set(idx)) != 3:
            raise ValueError("triple targets need distinct variables")
        order = np.argsort(idx)
        key = tuple(int(idx[o]) for o in order)
        block = self.e3[_triple_position(key, self.p)]
        # axis a of the result is variable idx[a], stored at sorted position rank[a]
        rank = np.argsort(order)
        block = np.transpose(block, rank)
        dims = [self.schema[v].dim for v in idx]
        return block[: dims[0], : dims[1], : dims[2]].copy()

    def to_dict(self) -> dict:
        out = {
            "n": self.n,
            "order": self.order,
            "alpha": self.prior.alpha.tolist(),
            "schema": self.schema.to_dict(),
            "means": [self.mean(j).tolist() for j in range(self.p)],
            "pairs": [
                {"j": j, "t": t, "E2": self.pair(j, t).tolist()} for j, t in self.pairs
            ],
        }
        if self.e3 is not None:
            out["triples"] = [
                {"j": j, "s": s, "t": t, "E3": self.triple(j, s, t).tolist()}
                for j, s, t in self.triples
            ]
        return out


def _triple_position(key: tuple[int, int, int], p: int) -> int:
    j, s, t = key
    # number of combinations preceding (j, s, t) in lexicographic order
    before_j = sum((p - 1 - a) * (p - 2 - a) // 2 for a in range(j))
    before_s = sum(p - 1 - b for b in range(j + 1, s))
    return before_j + before_s + (t - s - 1)


def _coefficients(prior: DirichletPrior) -> tuple[float, float, float]:
    a0 = prior.alpha0
    return a0 / (a0 + 1.0), a0 / (a0 + 2.0), 2.0 * a0**2 / ((a0 + 1.0) * (a0 + 2.0))


def stats_from_raw_moments(
    schema: Schema,
    prior: DirichletPrior,
    n: int,
    means: np.ndarray,
    raw2: np.ndarray,
    raw3: np.ndarray | None = None,
) -> MomentStats:
    """Form the moment targets from raw (uncentered) moments.

    ``means`` is ``(p, D)``, ``raw2`` the dense ``(p, p, D, D)`` cross moments
    and ``raw3`` the packed ``(T, D, D, D)`` cross moments over j < s < t.
    Works equally for sample moments and population moments.
    """
    c2, c3, c3b = _coefficients(prior)
    p = schema.p
    e2 = raw2 - c2 * (means[:, None, :, None] * means[None, :, None, :])
    e2[np.arange(p), np.arange(p)] = 0.0
    e3 = None
    if raw3 is not None:
        trip = np.array(triple_index(p), dtype=int).reshape(-1, 3)
        J, S, T = trip[:, 0], trip[:, 1], trip[:, 2]
        mj, ms, mt = means[J], means[S], means[T]
        cross = (
            raw2[J, S][:, :, :, None] * mt[:, None, None, :]
            + mj[:, :, None, None] * raw2[S, T][:, None, :, :]
            + raw2[J, T][:, :, None, :] * ms[:, None, :, None]
        )
        e3 = (
            raw3
            - c3 * cross
            + c3b * mj[:, :, None, None] * ms[:, None, :, None] * mt[:, None, None, :]
        )
    mask = schema.cell_mask()
    e2 = e2 * (mask[:, None, :, None] & mask[None, :, None, :])
    for arr in (means, e2, e3):
        if arr is not None:
            arr.setflags(write=False)
    return MomentStats(schema=schema, prior=prior, n=n, means=means, e2=e2, e3=e3)


def raw_triple_moments(b: np.ndarray) -> np.ndarray:
    """Packed sample means of ``b_j o b_s o b_t`` over j < s < t.

    ``b`` is the padded ``(n, p, D)`` encoding. Each (j, s) pair contributes
    one matrix product against all later variables.
    """
    n, p, D = b.shape
    out = np.empty((len(triple_index(p)), D, D, D))
    pos = 0
    for j in range(p - 2):
        for s in range(j + 1, p - 1):
            js = (b[:, j, :, None] * b[:, s, None, :]).reshape(n, D * D)
            rest = b[:, s + 1 :, :].reshape(n, -1)
            block = (js.T @ rest).reshape(D, D, p - s - 1, D) / n
            m = p - s - 1
            out[pos : pos + m] = np.transpose(block, (2, 0, 1, 3))
            pos += m
    return out


def compute_stats(
    dataset: Dataset, prior: DirichletPrior, order: int = 2, chunk_size: int = 65536
) -> MomentStats:
    """Empirical moment targets from data in a single pass over samples.

    Cross products are accumulated over sample chunks (partial sums merge
    additively) and divided by n at the end.
    """
    if order not in (2, 3):
        raise ValueError(f"order must be 2 or 3, got {order}")
    schema = dataset.schema
    p, n = schema.p, dataset.n
    if n < 2:
        raise ValueError(f"need at least 2 samples to compute moments, got n={n}")
    if p < order:
        raise ValueError(f"order-{order} moments need p >= {order} variables, got p={p}")
    D = schema.max_dim
    sum1 = np.zeros((p, D))
    sum2 = np.zeros((p * D, p * D))
    sum3 = np.zeros((len(triple_index(p)), D, D, D)) if order == 3 else None
    for start in range(0, n, chunk_size):
        b = dataset.encoded(slice(start, start + chunk_size))
        m = b.shape[0]
        sum1 += b.sum(axis=0)
        flat = b.reshape(m, p * D)
        sum2 += flat.T @ flat
        if sum3 is not None:
            sum3 += raw_triple_moments(b) * m
    means = sum1 / n
    sum2 = 0.5 * (sum2 + sum2.T)  # BLAS leaves rounding asymmetry
    raw2 = (sum2 / n).reshape(p, D, p, D).transpose(0, 2, 1, 3).copy()
    raw3 = sum3 / n if sum3 is not None else None
    return stats_from_raw_moments(schema, prior, n, means, raw2, raw3)


def _check_phi(Phi: Sequence[np.ndarray], prior: DirichletPrior, *idx: int) -> list[np.ndarray]:
    blocks = []
    for j in idx:
        block = np.asarray(Phi[j], dtype=float)
        if block.ndim == 1:
            block = block[None, :]
        if block.shape[1] != prior.k:
            raise ValueError(
                f"Phi_{j} has {block.shape[1]} columns but the prior has k={prior.k}"
            )
        blocks.append(block)
    return blocks


def population_mean(Phi: Sequence[np.ndarray], prior: DirichletPrior, j: int) -> np.ndarray:
    """E[b_j] = Phi_j alpha / alpha0."""
    (Pj,) = _check_phi(Phi, prior, j)
    return Pj @ prior.alpha / prior.alpha0


def population_pair_moment(
    Phi: Sequence[np.ndarray], prior: DirichletPrior, j: int, t: int
) -> np.ndarray:
    """E[b_j o b_t] for distinct variables j and t."""
    if j == t:
        raise ValueError("pair moment needs distinct variables")
    Pj, Pt = _check_phi(Phi, prior, j, t)
    a, a0 = prior.alpha, prior.alpha0
    mu_j, mu_t = Pj @ a / a0, Pt @ a / a0
    return (Pj * a) @ Pt.T / (a0 * (a0 + 1.0)) + a0 / (a0 + 1.0) * np.outer(mu_j, mu_t)


def population_triple_moment(
    Phi: Sequence[np.ndarray], prior: DirichletPrior, j: int, s: int, t: int
) -> np.ndarray:
    """E[b_j o b_s o b_t] for distinct variables, written explicitly in Phi and alpha."""
    if len({j, s, t}) != 3:
        raise ValueError("triple moment needs distinct variables")
    Pj, Ps, Pt = _check_phi(Phi, prior, j, s, t)
    a, a0 = prior.alpha, prior.alpha0
    vj, vs, vt = Pj @ a, Ps @ a, Pt @ a
    out = np.einsum("a,b,c->abc", vj, vs, vt)
    out += np.einsum("h,ah,bh,c->abc", a, Pj, Ps, vt)
    out += np.einsum("h,ah,b,ch->abc", a, Pj, vs, Pt)
    out += np.einsum("h,a,bh,ch->abc", a, vj, Ps, Pt)
    out += 2.0 * np.einsum("h,ah,bh,ch->abc", a, Pj, Ps, Pt)
    return out / (a0 * (a0 + 1.0) * (a0 + 2.0))


def population_stats(
    Phi: Sequence[np.ndarray], prior: DirichletPrior, schema: Schema, order: int = 2
) -> MomentStats:
    """Moment targets built from population moments instead of data.

    At the generating parameters these targets are matched exactly by the
    rank-one parameter terms, which makes them a useful test oracle.
    """
    p, D = schema.p, schema.max_dim
    means = np.zeros((p, D))
    raw2 = np.zeros((p, p, D, D))
    for j in range(p):
        means[j, : schema[j].dim] = population_mean(Phi, prior, j)
    for j, t in pair_index(p):
        m = population_pair_moment(Phi, prior, j, t)
        raw2[j, t, : m.shape[0], : m.shape[1]] = m
        raw2[t, j, : m.shape[1], : m.shape[0]] = m.T
    raw3 = None
    if order == 3:
        trips = triple_index(p)
        raw3 = np.zeros((len(trips), D, D, D))
        for pos, (j, s, t) in enumerate(trips):
            m = population_triple_moment(Phi, prior, j, s, t)
            raw3[pos, : m.shape[0], : m.shape[1], : m.shape[2]] = m
    return stats_from_raw_moments(schema, prior, n=0, means=means, raw2=raw2, raw3=raw3)
