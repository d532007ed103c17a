"""Sampling from the Dirichlet mixed-membership generative model.

For each subject a membership vector ``x_i ~ Dir(alpha)`` is drawn, then for
each variable a component ``m_ij ~ Multi(x_i)`` and finally the observation
from that component's emission (multinomial, normal or Poisson).

Samples are generated in fixed-size chunks, each with its own RNG stream
spawned from the seed, so results do not depend on how chunks are scheduled.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import CATEGORICAL, CONTINUOUS, COUNT, Dataset, Schema, VariableSpec
from .moments import DirichletPrior
from .params import ModelParams

MULTINOMIAL = "multinomial"
NORMAL = "normal"
POISSON = "poisson"
CHUNK = 4096

DNA = ("A", "C", "G", "T")
TRAIT_LOCI = (2, 4, 12, 14, 32, 34, 42, 44)


@dataclass(frozen=True, eq=False)
class Emission:
    """Component distributions of one variable.

    ``params`` is ``(d, k)`` with simplex columns for multinomial emissions
    and ``(k,)`` means or rates otherwise.
    """

    name: str
    kind: str
    params: np.ndarray
    levels: tuple[str, ...] = ()
    sd: float = 1.0

    def __post_init__(self):
        params = np.asarray(self.params, dtype=float)
        if self.kind == MULTINOMIAL:
            if params.ndim != 2 or params.shape[0] != len(self.levels) or params.shape[0] < 2:
                raise ValueError(f"{self.name}: multinomial params must be (levels, k)")
            if np.any(params < 0) or not np.allclose(params.sum(axis=0), 1.0):
                raise ValueError(f"{self.name}: multinomial columns must lie on the simplex")
        elif self.kind == NORMAL:
            if params.ndim != 1:
                raise ValueError(f"{self.name}: normal means must be a vector")
            if not self.sd > 0:
                raise ValueError(f"{self.name}: normal sd must be positive")
        elif self.kind == POISSON:
            if params.ndim != 1 or np.any(params <= 0):
                raise ValueError(f"{self.name}: Poisson rates must be positive")
        else:
            raise ValueError(f"{self.name}: unknown emission kind {self.kind!r}")
        object.__setattr__(self, "params", params)

    @property
    def k(self) -> int:
        return self.params.shape[-1]

    def variable(self) -> VariableSpec:
        if self.kind == MULTINOMIAL:
            return VariableSpec(self.name, CATEGORICAL, tuple(self.levels))
        return VariableSpec(self.name, CONTINUOUS if self.kind == NORMAL else COUNT)

    def mean_block(self) -> np.ndarray:
        return self.params if self.kind == MULTINOMIAL else self.params[None, :]

    def to_dict(self) -> dict:
        out = {"name": self.name, "kind": self.kind}
        if self.kind == MULTINOMIAL:
            out["levels"] = list(self.levels)
            out["phi"] = self.params.tolist()
        elif self.kind == NORMAL:
            out["means"] = self.params.tolist()
            out["sd"] = self.sd
        else:
            out["rates"] = self.params.tolist()
        return out


@dataclass(frozen=True, eq=False)
class GenerativeSpec:
    prior: DirichletPrior
    emissions: tuple[Emission, ...]
    membership: str = "dirichlet"

    def __post_init__(self):
        for em in self.emissions:
            if em.k != self.prior.k:
                raise ValueError(f"{em.name}: emission has {em.k} components, alpha has {self.prior.k}")
        if self.membership not in ("dirichlet", "two_group"):
            raise ValueError(f"unknown membership scheme {self.membership!r}")

    @property
    def k(self) -> int:
        return self.prior.k

    @property
    def schema(self) -> Schema:
        return Schema(tuple(em.variable() for em in self.emissions))

    def true_params(self) -> ModelParams:
        return ModelParams.from_blocks(
            self.schema, self.prior, [em.mean_block() for em in self.emissions]
        )

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "alpha": self.prior.alpha.tolist(),
            "membership": self.membership,
            "variables": [em.to_dict() for em in self.emissions],
        }


def spec_from_dict(desc: dict) -> GenerativeSpec:
    """Build a generative spec from its JSON form.

    Multinomial variables give ``phi`` explicitly (levels x k) or a symmetric
    Dirichlet concentration under ``dirichlet``, drawn with ``param_seed``.
    An entry may carry ``repeat: r`` to expand into ``r`` variables named
    ``<name>1 .. <name>r``.
    """
    try:
        alpha = np.asarray(desc["alpha"], dtype=float)
        entries = desc["variables"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"generative spec lacks field {exc}") from exc
    if "k" in desc and int(desc["k"]) != alpha.size:
        raise ValueError(f"k={desc['k']} disagrees with alpha of length {alpha.size}")
    prior = DirichletPrior(alpha)
    rng = np.random.default_rng(desc.get("param_seed", 0))
    emissions = []
    for entry in entries:
        repeat = int(entry.get("repeat", 0))
        names = [f"{entry['name']}{r + 1}" for r in range(repeat)] if repeat else [entry["name"]]
        for name in names:
            emissions.append(_emission_from_entry(entry, name, prior.k, rng))
    return GenerativeSpec(prior, tuple(emissions), desc.get("membership", "dirichlet"))


def _emission_from_entry(entry: dict, name: str, k: int, rng) -> Emission:
    kind = entry["kind"]
    if kind == MULTINOMIAL:
        levels = tuple(str(lv) for lv in entry["levels"])
        if "phi" in entry:
            phi = np.asarray(entry["phi"], dtype=float)
        elif "dirichlet" in entry:
            conc = np.broadcast_to(np.asarray(entry["dirichlet"], dtype=float), (len(levels),))
            phi = rng.dirichlet(conc, size=k).T
        else:
            raise ValueError(f"{name}: multinomial needs 'phi' or 'dirichlet'")
        return Emission(name, kind, phi, levels)
    if kind == NORMAL:
        return Emission(name, kind, np.asarray(entry["means"], float), sd=float(entry.get("sd", 1.0)))
    if kind == POISSON:
        return Emission(name, kind, np.asarray(entry["rates"], float))
    raise ValueError(f"{name}: unknown emission kind {kind!r}")


def load_spec(text: str) -> GenerativeSpec:
    return spec_from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class SimulatedData:
    dataset: Dataset
    x: np.ndarray = field(repr=False)
    memberships: np.ndarray = field(repr=False)  # 0-based component indices
    spec: GenerativeSpec = field(repr=False)
    seed: int = 0

    @property
    def n(self) -> int:
        return self.dataset.n

    def truth_dict(self) -> dict:
        return {
            "seed": self.seed,
            "spec": self.spec.to_dict(),
            "params": self.spec.true_params().to_dict(),
            "x": self.x.tolist(),
            "memberships": self.memberships.tolist(),
        }


def _draw_observations(spec: GenerativeSpec, m: np.ndarray, rng) -> np.ndarray:
    n, p = m.shape
    codes = np.empty((n, p))
    for j, em in enumerate(spec.emissions):
        comp = m[:, j]
        if em.kind == MULTINOMIAL:
            cum = np.cumsum(em.params.T[comp], axis=1)
            u = rng.random(n)
            codes[:, j] = np.minimum((u[:, None] >= cum).sum(axis=1), em.params.shape[0] - 1)
        elif em.kind == NORMAL:
            codes[:, j] = em.params[comp] + em.sd * rng.standard_normal(n)
        else:
            codes[:, j] = rng.poisson(em.params[comp])
    return codes


def _draw_components(x: np.ndarray, p: int, rng) -> np.ndarray:
    cum = np.cumsum(x, axis=1)
    u = rng.random((x.shape[0], p))
    return np.minimum((u[:, :, None] >= cum[:, None, :]).sum(axis=2), x.shape[1] - 1)


def _chunked(n: int, seed: int):
    children = np.random.SeedSequence(seed).spawn(max(1, math.ceil(n / CHUNK)))
    for c, child in enumerate(children):
        start = c * CHUNK
        yield start, min(n, start + CHUNK), np.random.default_rng(child)


def sample_dataset(spec: GenerativeSpec, n: int, seed: int) -> SimulatedData:
    """Draw n subjects; memberships follow ``spec.membership``."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    if spec.membership == "two_group":
        return sample_two_group_dataset(spec, n, seed)
    p, k = len(spec.emissions), spec.k
    x = np.empty((n, k))
    m = np.empty((n, p), dtype=int)
    codes = np.empty((n, p))
    for start, stop, rng in _chunked(n, seed):
        xs = rng.dirichlet(spec.prior.alpha, size=stop - start)
        # tiny alpha can underflow every coordinate; fall back to a vertex
        bad = ~np.isfinite(xs).all(axis=1) | (xs.sum(axis=1) <= 0)
        if bad.any():
            xs[bad] = np.eye(k)[rng.integers(k, size=int(bad.sum()))]
        ms = _draw_components(xs, p, rng)
        x[start:stop], m[start:stop] = xs, ms
        codes[start:stop] = _draw_observations(spec, ms, rng)
    return SimulatedData(Dataset(spec.schema, codes), x, m, spec, seed)


def sample_two_group_dataset(spec: GenerativeSpec, n: int, seed: int) -> SimulatedData:
    """First half of the subjects purely in component 1, second half in component 2."""
    if spec.k != 2:
        raise ValueError(f"two-group sampling needs k=2, got k={spec.k}")
    if n < 2 or n % 2:
        raise ValueError(f"two-group sampling needs a positive even n, got {n}")
    p = len(spec.emissions)
    group = np.repeat([0, 1], n // 2)
    x = np.eye(2)[group]
    m = np.repeat(group[:, None], p, axis=1)
    codes = np.empty((n, p))
    for start, stop, rng in _chunked(n, seed):
        codes[start:stop] = _draw_observations(spec, m[start:stop], rng)
    return SimulatedData(Dataset(spec.schema, codes), x, m, spec, seed)


def contaminate(data: SimulatedData, fraction: float, seed: int) -> SimulatedData:
    """Redraw a fraction of categorical cells uniformly over their levels.

    ``floor(fraction * C)`` cells are chosen without replacement among all
    ``C`` categorical cells; scalar cells are left alone.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"contamination fraction must lie in [0, 1], got {fraction}")
    schema = data.dataset.schema
    cat_cols = np.flatnonzero(schema.categorical_mask)
    n = data.n
    total = n * cat_cols.size
    count = math.floor(fraction * total)
    codes = data.dataset.codes.copy()
    if count:
        rng = np.random.default_rng(seed)
        cells = rng.choice(total, size=count, replace=False)
        rows, cols = cells // cat_cols.size, cat_cols[cells % cat_cols.size]
        levels = schema.dims[cols]
        codes[rows, cols] = np.floor(rng.random(count) * levels)
    return replace(data, dataset=Dataset(schema, codes))


def categorical_study_spec(
    param_seed: int, p: int = 20, d: int = 4, k: int = 3, alpha: float = 0.1, concentration: float = 0.5
) -> GenerativeSpec:
    """All-categorical design: component distributions drawn from a symmetric Dirichlet."""
    levels = DNA if d == 4 else tuple(f"L{c + 1}" for c in range(d))
    return spec_from_dict({
        "alpha": [alpha] * k,
        "param_seed": param_seed,
        "variables": [
            {"name": "y", "kind": MULTINOMIAL, "levels": list(levels),
             "dirichlet": concentration, "repeat": p}
        ],
    })


def quantitative_trait_spec(
    trait: str, param_seed: int, n_loci: int = 50, loci: tuple[int, ...] = TRAIT_LOCI
) -> GenerativeSpec:
    """Two-group design: nucleotide loci plus one Gaussian or Poisson trait.

    Loci listed in ``loci`` (1-based) get component distributions drawn from
    Dir(0.5, 0.5, 0.5, 0.5); all others are uniform over the four bases.
    """
    rng = np.random.default_rng(param_seed)
    emissions = []
    for locus in range(1, n_loci + 1):
        if locus in loci:
            phi = rng.dirichlet(np.full(4, 0.5), size=2).T
        else:
            phi = np.full((4, 2), 0.25)
        emissions.append(Emission(f"locus{locus}", MULTINOMIAL, phi, DNA))
    if trait == "gaussian":
        emissions.append(Emission("trait", NORMAL, np.array([-3.0, 3.0]), sd=1.0))
    elif trait == "poisson":
        emissions.append(Emission("trait", POISSON, np.array([5.0, 10.0])))
    else:
        raise ValueError(f"trait must be 'gaussian' or 'poisson', got {trait!r}")
    return GenerativeSpec(DirichletPrior.symmetric(2, 0.1), tuple(emissions), "two_group")
