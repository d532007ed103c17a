import numpy as np

from meld.data import Schema, VariableSpec


def categorical_schema(p: int, d: int) -> Schema:
    levels = tuple(f"L{c}" for c in range(d))
    return Schema(tuple(VariableSpec(f"v{j}", "categorical", levels) for j in range(p)))


def random_phi(schema: Schema, k: int, rng) -> list[np.ndarray]:
    blocks = []
    for spec in schema:
        if spec.is_categorical:
            blocks.append(rng.dirichlet(np.ones(spec.dim), size=k).T)
        else:
            blocks.append(rng.normal(size=(1, k)))
    return blocks
