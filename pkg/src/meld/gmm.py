"""Stacked moment vectors and diagonal second-stage weights."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, Schema
from .moments import LambdaDiagonals, MomentStats, pair_index, triple_index

DEFAULT_VARIANCE_FLOOR = 1e-8


def model_pair_terms(Phi: np.ndarray, lam: LambdaDiagonals) -> np.ndarray:
    """Dense ``(p, p, D, D)`` array of ``Phi_j L2 Phi_t^T`` from padded ``Phi``."""
    return np.einsum("jah,h,tch->jtac", Phi, lam.l2, Phi, optimize=True)


def model_triple_terms(Phi: np.ndarray, lam: LambdaDiagonals) -> np.ndarray:
    """Packed ``(T, D, D, D)`` array of ``L3 x1 Phi_j x2 Phi_s x3 Phi_t`` over j < s < t."""
    trip = np.array(triple_index(Phi.shape[0]), dtype=int).reshape(-1, 3)
    return np.einsum(
        "mah,h,mbh,mch->mabc",
        Phi[trip[:, 0]], lam.l3, Phi[trip[:, 1]], Phi[trip[:, 2]],
        optimize=True,
    )


@dataclass(frozen=True, eq=False)
class MomentVectorLayout:
    """Maps each (block, cell) of the stacked moment vector to a coordinate.

    Pair blocks come first in order (1,2), ..., (p-1,p), then (order 3) triple
    blocks j < s < t with the rightmost index running fastest. Each block is
    vectorized column-major.
    """

    schema: Schema
    order: int
    blocks: list = field(repr=False)
    pair_cells: np.ndarray = field(repr=False)  # columns: j, t, a, c
    triple_cells: np.ndarray = field(repr=False)  # columns: pos, j, s, t, a, b, c

    @classmethod
    def build(cls, schema: Schema, order: int) -> "MomentVectorLayout":
        if order not in (2, 3):
            raise ValueError(f"order must be 2 or 3, got {order}")
        if schema.p < order:
            raise ValueError(f"order-{order} layout needs p >= {order}, got p={schema.p}")
        dims = schema.dims
        blocks = []
        pair_rows = []
        start = 0
        for j, t in pair_index(schema.p):
            dj, dt = dims[j], dims[t]
            c, a = np.meshgrid(np.arange(dt), np.arange(dj), indexing="ij")
            cells = np.column_stack(
                [np.full(dj * dt, j), np.full(dj * dt, t), a.ravel(), c.ravel()]
            )
            pair_rows.append(cells)
            blocks.append(((j, t), slice(start, start + dj * dt)))
            start += dj * dt
        triple_rows = []
        if order == 3:
            for pos, (j, s, t) in enumerate(triple_index(schema.p)):
                dj, ds, dt = dims[j], dims[s], dims[t]
                c, b, a = np.meshgrid(np.arange(dt), np.arange(ds), np.arange(dj), indexing="ij")
                size = dj * ds * dt
                cells = np.column_stack(
                    [np.full(size, pos), np.full(size, j), np.full(size, s), np.full(size, t),
                     a.ravel(), b.ravel(), c.ravel()]
                )
                triple_rows.append(cells)
                blocks.append(((j, s, t), slice(start, start + size)))
                start += size
        pair_cells = np.vstack(pair_rows).astype(int)
        triple_cells = (
            np.vstack(triple_rows).astype(int) if triple_rows else np.zeros((0, 7), dtype=int)
        )
        return cls(schema, order, blocks, pair_cells, triple_cells)

    @property
    def n_pair_coords(self) -> int:
        return self.pair_cells.shape[0]

    @property
    def size(self) -> int:
        return self.pair_cells.shape[0] + self.triple_cells.shape[0]

    def coordinate(self, key: tuple, cell: tuple) -> int:
        for bkey, sl in self.blocks:
            if bkey == key:
                dims = [self.schema[v].dim for v in key]
                offset = 0
                stride = 1
                for idx, d in zip(cell, dims):
                    if not 0 <= idx < d:
                        raise IndexError(f"cell {cell} outside block {key}")
                    offset += idx * stride
                    stride *= d
                return sl.start + offset
        raise KeyError(f"no block {key} in order-{self.order} layout")

    def locate(self, coord: int) -> tuple[tuple, tuple]:
        if not 0 <= coord < self.size:
            raise IndexError(coord)
        if coord < self.n_pair_coords:
            j, t, a, c = self.pair_cells[coord]
            return (int(j), int(t)), (int(a), int(c))
        _, j, s, t, a, b, c = self.triple_cells[coord - self.n_pair_coords]
        return (int(j), int(s), int(t)), (int(a), int(b), int(c))

    def flatten(self, pairs: np.ndarray, triples: np.ndarray | None = None) -> np.ndarray:
        """Stack dense pair blocks ``(p, p, D, D)`` and packed triple blocks."""
        pc = self.pair_cells
        out = [pairs[pc[:, 0], pc[:, 1], pc[:, 2], pc[:, 3]]]
        if self.order == 3:
            if triples is None:
                raise ValueError("order-3 layout needs triple blocks")
            tc = self.triple_cells
            out.append(triples[tc[:, 0], tc[:, 4], tc[:, 5], tc[:, 6]])
        return np.concatenate(out)

    def unflatten(self, vec: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        """Inverse of :meth:`flatten`; pair blocks come back symmetric, padding zero."""
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.size,):
            raise ValueError(f"vector must have length {self.size}, got {vec.shape}")
        p, D = self.schema.p, self.schema.max_dim
        pc = self.pair_cells
        pairs = np.zeros((p, p, D, D))
        v2 = vec[: self.n_pair_coords]
        pairs[pc[:, 0], pc[:, 1], pc[:, 2], pc[:, 3]] = v2
        pairs[pc[:, 1], pc[:, 0], pc[:, 3], pc[:, 2]] = v2
        triples = None
        if self.order == 3:
            tc = self.triple_cells
            triples = np.zeros((len(triple_index(p)), D, D, D))
            triples[tc[:, 0], tc[:, 4], tc[:, 5], tc[:, 6]] = vec[self.n_pair_coords :]
        return pairs, triples


def target_vector(stats: MomentStats, layout: MomentVectorLayout) -> np.ndarray:
    """Concatenated targets ``vec(E2_jt)`` (and ``vec(E3_jst)``) in layout order."""
    return layout.flatten(stats.e2, stats.e3)


def model_vector(Phi: np.ndarray, lam: LambdaDiagonals, layout: MomentVectorLayout) -> np.ndarray:
    m3 = model_triple_terms(Phi, lam) if layout.order == 3 else None
    return layout.flatten(model_pair_terms(Phi, lam), m3)


def mean_moment_vector(
    Phi: np.ndarray, stats: MomentStats, lam: LambdaDiagonals, layout: MomentVectorLayout
) -> np.ndarray:
    """Sample mean of the stacked moment vectors, i.e. targets minus model terms."""
    return target_vector(stats, layout) - model_vector(_padded(Phi), lam, layout)


def _padded(Phi) -> np.ndarray:
    return Phi.padded if hasattr(Phi, "padded") else np.asarray(Phi, dtype=float)


def _data_terms(b: np.ndarray, stats: MomentStats, layout: MomentVectorLayout) -> np.ndarray:
    """Parameter-free part of the per-sample moment vectors for a batch ``(m, p, D)``."""
    a0 = stats.prior.alpha0
    c2, c3, c3b = a0 / (a0 + 1.0), a0 / (a0 + 2.0), 2.0 * a0**2 / ((a0 + 1.0) * (a0 + 2.0))
    mu = stats.means
    pc = layout.pair_cells
    bj = b[:, pc[:, 0], pc[:, 2]]
    bt = b[:, pc[:, 1], pc[:, 3]]
    parts = [bj * bt - c2 * mu[pc[:, 0], pc[:, 2]] * mu[pc[:, 1], pc[:, 3]]]
    if layout.order == 3:
        tc = layout.triple_cells
        xj, xs, xt = b[:, tc[:, 1], tc[:, 4]], b[:, tc[:, 2], tc[:, 5]], b[:, tc[:, 3], tc[:, 6]]
        mj, ms, mt = mu[tc[:, 1], tc[:, 4]], mu[tc[:, 2], tc[:, 5]], mu[tc[:, 3], tc[:, 6]]
        parts.append(
            xj * xs * xt
            - c3 * (xj * xs * mt + mj * xs * xt + xj * ms * xt)
            + c3b * mj * ms * mt
        )
    return np.concatenate(parts, axis=1)


def stack_moment_vectors(
    dataset: Dataset,
    Phi,
    stats: MomentStats,
    lam: LambdaDiagonals,
    layout: MomentVectorLayout,
    rows: slice | np.ndarray | None = None,
) -> np.ndarray:
    """Per-sample moment vectors ``f(y_i, Phi)`` as rows of an ``(m, L)`` array.

    Means are the sample means held by ``stats``.
    """
    b = dataset.encoded(rows)
    return _data_terms(b, stats, layout) - model_vector(_padded(Phi), lam, layout)[None, :]


def stack_moment_vector(
    sample_index: int,
    dataset: Dataset,
    Phi,
    stats: MomentStats,
    lam: LambdaDiagonals,
    layout: MomentVectorLayout,
) -> np.ndarray:
    """Moment vector of a single sample."""
    if _padded(Phi).shape[0] != layout.schema.p:
        raise ValueError("parameters do not match the layout's schema")
    return stack_moment_vectors(
        dataset, Phi, stats, lam, layout, rows=np.array([sample_index])
    )[0]


def _merge_moments(count_a, mean_a, m2_a, count_b, mean_b, m2_b):
    count = count_a + count_b
    if count == 0:
        return 0, mean_a, m2_a
    delta = mean_b - mean_a
    mean = mean_a + delta * (count_b / count)
    m2 = m2_a + m2_b + delta**2 * (count_a * count_b / count)
    return count, mean, m2


def estimate_diag_S(
    dataset: Dataset,
    Phi,
    stats: MomentStats,
    lam: LambdaDiagonals,
    layout: MomentVectorLayout,
    chunk_size: int = 512,
) -> np.ndarray:
    """Per-coordinate variance (divisor n) of the per-sample moment vectors.

    Chunks are combined with the pairwise (count, mean, M2) merge, so the
    result does not depend on how samples are batched.
    """
    n = dataset.n
    if n < 2:
        raise ValueError(f"need at least 2 samples to estimate variances, got n={n}")
    count, mean, m2 = 0, np.zeros(layout.size), np.zeros(layout.size)
    for start in range(0, n, chunk_size):
        f = stack_moment_vectors(dataset, Phi, stats, lam, layout, rows=slice(start, start + chunk_size))
        cmean = f.mean(axis=0)
        cm2 = ((f - cmean) ** 2).sum(axis=0)
        count, mean, m2 = _merge_moments(count, mean, m2, f.shape[0], cmean, cm2)
    return m2 / count


@dataclass(frozen=True, eq=False)
class WeightVector:
    order: int
    values: np.ndarray

    def __len__(self) -> int:
        return self.values.size


def weights_from_S(
    diag_s: np.ndarray, floor: float = DEFAULT_VARIANCE_FLOOR, order: int | None = None
) -> WeightVector:
    """Reciprocal variances with a floor: ``w = 1 / max(S_cc, floor)``."""
    if not floor > 0:
        raise ValueError(f"variance floor must be positive, got {floor}")
    diag_s = np.asarray(diag_s, dtype=float)
    return WeightVector(order=order or 0, values=1.0 / np.maximum(diag_s, floor))


def block_weights(
    weights: np.ndarray | WeightVector | None, layout: MomentVectorLayout
) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Scatter a flat weight vector into (dense pair, packed triple) block arrays.

    ``None`` stands for identity weights and is passed through.
    """
    if weights is None:
        return None, None
    values = weights.values if isinstance(weights, WeightVector) else np.asarray(weights, float)
    return layout.unflatten(values)
