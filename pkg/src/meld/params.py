"""Component mean parameters."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Schema
from .moments import DirichletPrior, LambdaDiagonals, lambda_diagonals


@dataclass(eq=False)
class ModelParams:
    """Mean parameters ``Phi_j`` (``d_j x k``) for every variable.

    Stored padded as ``padded[j, :d_j, h] = phi_jh``; rows beyond ``d_j`` are
    kept at zero.
    """

    schema: Schema
    prior: DirichletPrior
    padded: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.padded, dtype=float)
        want = (self.schema.p, self.schema.max_dim, self.prior.k)
        if arr.shape != want:
            raise ValueError(f"padded parameters must have shape {want}, got {arr.shape}")
        self.padded = arr

    @classmethod
    def from_blocks(
        cls, schema: Schema, prior: DirichletPrior, blocks: Sequence[np.ndarray]
    ) -> "ModelParams":
        if len(blocks) != schema.p:
            raise ValueError(f"expected {schema.p} parameter blocks, got {len(blocks)}")
        arr = np.zeros((schema.p, schema.max_dim, prior.k))
        for j, (spec, block) in enumerate(zip(schema, blocks)):
            block = np.asarray(block, dtype=float)
            if block.ndim == 1:
                block = block[None, :]
            if block.shape != (spec.dim, prior.k):
                raise ValueError(
                    f"Phi_{j} ({spec.name}) must be {(spec.dim, prior.k)}, got {block.shape}"
                )
            arr[j, : spec.dim] = block
        return cls(schema, prior, arr)

    @property
    def k(self) -> int:
        return self.prior.k

    @property
    def lam(self) -> LambdaDiagonals:
        return lambda_diagonals(self.prior)

    def __len__(self) -> int:
        return self.schema.p

    def __getitem__(self, j: int) -> np.ndarray:
        return self.padded[j, : self.schema[j].dim].copy()

    @property
    def blocks(self) -> list[np.ndarray]:
        return [self[j] for j in range(self.schema.p)]

    def copy(self) -> "ModelParams":
        return ModelParams(self.schema, self.prior, self.padded.copy())

    def permuted(self, tau: Sequence[int]) -> "ModelParams":
        """Columns reordered so that new column h is old column ``tau[h]``."""
        tau = np.asarray(tau, dtype=int)
        alpha = self.prior.alpha[tau]
        return ModelParams(self.schema, DirichletPrior(alpha), self.padded[:, :, tau].copy())

    def simplex_violation(self) -> float:
        """Largest deviation of any categorical column from its simplex."""
        worst = 0.0
        for j, spec in enumerate(self.schema):
            if spec.is_categorical:
                block = self[j]
                worst = max(worst, float(np.abs(block.sum(axis=0) - 1.0).max()))
                worst = max(worst, float(max(0.0, -block.min())))
        return worst

    def to_dict(self) -> dict:
        return {
            "alpha": self.prior.alpha.tolist(),
            "variables": [
                {"name": spec.name, "Phi": self[j].tolist()} for j, spec in enumerate(self.schema)
            ],
        }

    @classmethod
    def from_dict(cls, desc: dict, schema: Schema) -> "ModelParams":
        prior = DirichletPrior(np.asarray(desc["alpha"], dtype=float))
        by_name = {v["name"]: v["Phi"] for v in desc["variables"]}
        missing = [name for name in schema.names if name not in by_name]
        if missing:
            raise ValueError(f"parameter file lacks variables {missing}")
        return cls.from_blocks(schema, prior, [np.asarray(by_name[name]) for name in schema.names])
