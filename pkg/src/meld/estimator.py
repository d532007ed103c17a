"""Two-stage GMM fitting by block coordinate Newton-Raphson.

Each block is one component column ``phi_jh``. With every other block held
fixed the objective is a quadratic in ``phi_jh`` with a diagonal Hessian, so
the Newton step lands exactly on the block minimizer; categorical columns are
then projected back onto the probability simplex and scalar means clamped to
their bounds.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, Schema
from .gmm import (
    DEFAULT_VARIANCE_FLOOR,
    MomentVectorLayout,
    WeightVector,
    block_weights,
    estimate_diag_S,
    model_pair_terms,
    model_triple_terms,
    weights_from_S,
)
from .moments import (
    DirichletPrior,
    LambdaDiagonals,
    MomentStats,
    compute_stats,
    lambda_diagonals,
    triple_index,
)
from .params import ModelParams

log = logging.getLogger(__name__)

DENOMINATOR_EPS = 1e-300


class FitError(RuntimeError):
    """Raised when a fit cannot proceed (e.g. the objective became non-finite)."""


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-and-threshold)."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("expected a nonempty vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot project a non-finite vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    w = np.maximum(v - theta, 0.0)
    # the threshold leaves a rounding-level error in the total; put it on the largest entry
    w[np.argmax(w)] += 1.0 - w.sum()
    return w


def project_to_simplex_weighted(v: np.ndarray, metric: np.ndarray) -> np.ndarray:
    """Projection onto the simplex under the norm ``sum_a metric[a] * x[a]^2``.

    Solves ``x_a = max(v_a - theta / metric_a, 0)`` with ``theta`` chosen so
    the entries sum to one; equal metrics give the Euclidean projection.
    """
    v = np.asarray(v, dtype=float)
    metric = np.asarray(metric, dtype=float)
    if metric.shape != v.shape or np.any(metric <= 0):
        raise ValueError("metric must be positive and match the vector")
    if np.allclose(metric, metric[0]):
        return project_to_simplex(v)
    inv = 1.0 / metric
    breaks = v * metric  # theta at which each coordinate hits zero
    order = np.argsort(-breaks)
    sum_v = np.cumsum(v[order])
    sum_inv = np.cumsum(inv[order])
    thetas = (sum_v - 1.0) / sum_inv
    nxt = np.append(breaks[order][1:], -np.inf)
    # active set of size m+1 is consistent when the next breakpoint lies below theta
    m = int(np.nonzero((thetas < breaks[order]) & (thetas >= nxt))[0][0])
    w = np.maximum(v - thetas[m] * inv, 0.0)
    w[np.argmax(w)] += 1.0 - w.sum()
    return w


def default_bounds(dataset: Dataset) -> np.ndarray:
    """Per-variable scalar bounds: data range widened by 3 sample standard deviations.

    Returns a ``(p, 2)`` array; rows of categorical variables are ``(0, 1)``.
    """
    p = dataset.p
    bounds = np.tile([0.0, 1.0], (p, 1))
    for j, spec in enumerate(dataset.schema):
        if spec.is_categorical or dataset.n == 0:
            continue
        col = dataset.codes[:, j]
        sd = col.std(ddof=1) if dataset.n > 1 else 0.0
        bounds[j] = (col.min() - 3.0 * sd, col.max() + 3.0 * sd)
    return bounds


@dataclass(frozen=True)
class FitConfig:
    k: int
    order: int = 2
    stages: int = 1
    tol: float = 1e-7
    max_sweeps: int = 500
    seed: int = 0
    alpha: tuple[float, ...] | None = None
    bounds: np.ndarray | None = field(default=None, compare=False, repr=False)
    variance_floor: float = DEFAULT_VARIANCE_FLOOR

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be at least 1, got {self.k}")
        if self.order not in (2, 3):
            raise ValueError(f"order must be 2 or 3, got {self.order}")
        if self.stages not in (1, 2):
            raise ValueError(f"stages must be 1 or 2, got {self.stages}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_sweeps < 1:
            raise ValueError(f"max_sweeps must be at least 1, got {self.max_sweeps}")
        if not self.variance_floor > 0:
            raise ValueError("variance_floor must be positive")
        if self.alpha is not None and len(self.alpha) != self.k:
            raise ValueError(f"alpha has {len(self.alpha)} entries but k={self.k}")

    def prior(self) -> DirichletPrior:
        if self.alpha is None:
            return DirichletPrior.symmetric(self.k, 0.1)
        return DirichletPrior(np.asarray(self.alpha, dtype=float))


def init_params(
    schema: Schema,
    k: int,
    dataset: Dataset,
    seed: int,
    prior: DirichletPrior | None = None,
    bounds: np.ndarray | None = None,
) -> ModelParams:
    """Seeded starting point.

    Categorical columns are flat-Dirichlet draws; scalar means start at the
    sample mean plus one sample standard deviation times a standard normal.
    """
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    prior = prior or DirichletPrior.symmetric(k, 0.1)
    if prior.k != k:
        raise ValueError(f"prior has k={prior.k} but k={k} was requested")
    rng = np.random.default_rng(seed)
    Phi = np.zeros((schema.p, schema.max_dim, k))
    for j, spec in enumerate(schema):
        if spec.is_categorical:
            Phi[j, : spec.dim] = rng.dirichlet(np.ones(spec.dim), size=k).T
        else:
            col = dataset.codes[:, j]
            mean = float(col.mean()) if dataset.n else 0.0
            sd = float(col.std(ddof=1)) if dataset.n > 1 else 1.0
            Phi[j, 0] = mean + sd * rng.standard_normal(k)
            if bounds is not None:
                Phi[j, 0] = np.clip(Phi[j, 0], bounds[j, 0], bounds[j, 1])
    return ModelParams(schema, prior, Phi)


class BlockSystem:
    """Moment targets and weights arranged for per-block work.

    Pair targets and weights are dense ``(p, p, D, D)`` arrays oriented so
    that ``e2[j, t]`` has variable j on its rows. For order 3 every variable
    j gets a stack of the triples containing it, permuted so j's axis comes
    first and the remaining two variables follow in ascending order; each
    unordered triple appears once, as in the objective.
    """

    def __init__(
        self,
        stats: MomentStats,
        lam: LambdaDiagonals,
        order: int,
        weights: np.ndarray | WeightVector | None = None,
        layout: MomentVectorLayout | None = None,
    ):
        if order == 3 and stats.e3 is None:
            raise ValueError("order-3 fitting needs third order moment targets")
        if order not in (2, 3):
            raise ValueError(f"order must be 2 or 3, got {order}")
        self.stats = stats
        self.schema = stats.schema
        self.lam = lam
        self.order = order
        self.p = stats.p
        self.dims = self.schema.dims
        self.e2 = stats.e2
        if weights is not None:
            layout = layout or MomentVectorLayout.build(self.schema, order)
            values = weights.values if isinstance(weights, WeightVector) else np.asarray(weights)
            if values.shape != (layout.size,):
                raise ValueError(
                    f"weights have length {values.size}, order-{order} layout needs {layout.size}"
                )
            self.w2, self.w3 = block_weights(values, layout)
        else:
            self.w2, self.w3 = None, None
        self.trip = np.array(triple_index(self.p), dtype=int).reshape(-1, 3)
        self.views = self._triple_views() if order == 3 else None

    def _triple_views(self):
        views = []
        e3 = self.stats.e3
        for j in range(self.p):
            pos_list, others, perms = [], [], []
            for pos, tri in enumerate(map(tuple, self.trip)):
                if j not in tri:
                    continue
                rest = [v for v in tri if v != j]
                axes = (tri.index(j), tri.index(rest[0]), tri.index(rest[1]))
                pos_list.append(pos)
                others.append(rest)
                perms.append(axes)
            pos_arr = np.array(pos_list, dtype=int)
            E = np.stack([np.transpose(e3[m], ax) for m, ax in zip(pos_arr, perms)])
            W = None
            if self.w3 is not None:
                W = np.stack([np.transpose(self.w3[m], ax) for m, ax in zip(pos_arr, perms)])
            others = np.array(others, dtype=int).reshape(-1, 2)
            views.append((others[:, 0], others[:, 1], E, W))
        return views

    # -- objective -----------------------------------------------------------

    def objective(self, Phi: np.ndarray) -> float:
        R2 = self.e2 - model_pair_terms(Phi, self.lam)
        sq = R2**2 if self.w2 is None else self.w2 * R2**2
        # dense pairs count every unordered pair twice; diagonal blocks are excluded
        idx = np.arange(self.p)
        sq[idx, idx] = 0.0
        total = 0.5 * float(sq.sum())
        if self.order == 3:
            R3 = self.stats.e3 - model_triple_terms(Phi, self.lam)
            total += float((R3**2).sum() if self.w3 is None else (self.w3 * R3**2).sum())
        return total

    def null_scale(self) -> float:
        """Weighted squared norm of the targets, ``e^T A e``."""
        return self.objective(np.zeros((self.p, self.schema.max_dim, self.lam.l2.size)))

    # -- per-block quadratic -------------------------------------------------

    def block_terms(self, Phi: np.ndarray, j: int, h: int, use_third: bool | None = None):
        """Numerator and denominator of the block's diagonal Newton system.

        The block objective is ``sum_a den[a] * phi[a]^2 - 2 num[a] * phi[a] + const``.
        """
        use_third = (self.order == 3) if use_third is None else use_third
        lam2, lam3 = self.lam.l2, self.lam.l3
        others = np.delete(np.arange(self.p), j)
        P = Phi[others]  # (p-1, D, k)
        phi_t = P[:, :, h]
        lam_wo = lam2.copy()
        lam_wo[h] = 0.0
        Ebar = self.e2[j, others] - np.einsum("ah,h,tch->tac", Phi[j], lam_wo, P)
        if self.w2 is None:
            num = lam2[h] * np.einsum("tac,tc->a", Ebar, phi_t)
            den = np.full(Phi.shape[1], lam2[h] ** 2 * float((phi_t**2).sum()))
        else:
            W = self.w2[j, others]
            num = lam2[h] * np.einsum("tac,tac,tc->a", W, Ebar, phi_t)
            den = lam2[h] ** 2 * np.einsum("tac,tc->a", W, phi_t**2)
        if use_third:
            s_idx, t_idx, E, W3 = self.views[j]
            Ps, Pt = Phi[s_idx], Phi[t_idx]
            l3_wo = lam3.copy()
            l3_wo[h] = 0.0
            Ebar3 = E - np.einsum("ah,h,mbh,mch->mabc", Phi[j], l3_wo, Ps, Pt, optimize=True)
            fs, ft = Ps[:, :, h], Pt[:, :, h]
            if W3 is None:
                num = num + lam3[h] * np.einsum("mabc,mb,mc->a", Ebar3, fs, ft, optimize=True)
                den = den + lam3[h] ** 2 * float(((fs**2).sum(1) * (ft**2).sum(1)).sum())
            else:
                num = num + lam3[h] * np.einsum(
                    "mabc,mabc,mb,mc->a", W3, Ebar3, fs, ft, optimize=True
                )
                den = den + lam3[h] ** 2 * np.einsum("mabc,mb,mc->a", W3, fs**2, ft**2, optimize=True)
        d = self.dims[j]
        return num[:d], den[:d]

    def gradient(self, Phi: np.ndarray, j: int, h: int) -> np.ndarray:
        num, den = self.block_terms(Phi, j, h)
        phi = Phi[j, : self.dims[j], h]
        return 2.0 * (den * phi - num)

    def newton_block(self, Phi: np.ndarray, j: int, h: int, use_third: bool | None = None):
        """Unretracted block minimizer, or ``None`` if the denominator vanishes."""
        step = self.newton_step(Phi, j, h, use_third)
        return None if step is None else step[0]

    def newton_step(self, Phi: np.ndarray, j: int, h: int, use_third: bool | None = None):
        """Block minimizer together with the block's diagonal Hessian (halved)."""
        num, den = self.block_terms(Phi, j, h, use_third)
        if np.any(den <= DENOMINATOR_EPS):
            return None
        return num / den, den


def _as_array(Phi) -> np.ndarray:
    return Phi.padded if isinstance(Phi, ModelParams) else np.asarray(Phi, dtype=float)


def objective(Phi, stats: MomentStats, lam: LambdaDiagonals, order: int, weights=None) -> float:
    """Weighted sum of squared residuals of the pair (and triple) targets.

    ``weights`` is a flat vector in moment-vector layout order or ``None`` for
    identity weights.
    """
    return BlockSystem(stats, lam, order, weights).objective(_as_array(Phi))


def gradient_block(
    j: int, h: int, Phi, stats: MomentStats, lam: LambdaDiagonals, order: int, weights=None
) -> np.ndarray:
    """Gradient of :func:`objective` with respect to ``phi_jh`` (length ``d_j``)."""
    return BlockSystem(stats, lam, order, weights).gradient(_as_array(Phi), j, h)


def update_block_q2(j: int, h: int, Phi, stats: MomentStats, lam: LambdaDiagonals, weights=None):
    """Closed-form minimizer of the order-2 objective in ``phi_jh``, before retraction.

    Returns ``None`` when every partner column is zero (the block is skipped).
    """
    system = BlockSystem(stats, lam, 2, weights)
    return system.newton_block(_as_array(Phi), j, h, use_third=False)


def update_block_q3(j: int, h: int, Phi, stats: MomentStats, lam: LambdaDiagonals, weights=None):
    """Closed-form minimizer of the order-3 objective in ``phi_jh``, before retraction."""
    system = BlockSystem(stats, lam, 3, weights)
    return system.newton_block(_as_array(Phi), j, h, use_third=True)


@dataclass
class StageResult:
    stage: int
    params: ModelParams
    objective: list[float]
    sweeps: int
    converged: bool
    fi: float
    skipped_blocks: list[tuple[int, int, int]] = field(default_factory=list)
    weights: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "sweeps": self.sweeps,
            "converged": self.converged,
            "objective": self.objective,
            "fi": self.fi,
            "skipped_blocks": [list(b) for b in self.skipped_blocks],
            "params": self.params.to_dict(),
        }


@dataclass
class FitReport:
    config: FitConfig
    stages: list[StageResult]
    moment_dim: int
    wall_time: float = 0.0

    @property
    def params(self) -> ModelParams:
        return self.stages[-1].params

    @property
    def fi(self) -> list[float]:
        return [s.fi for s in self.stages]

    def stage(self, number: int) -> StageResult:
        return self.stages[number - 1]

    def to_dict(self, include_timing: bool = False) -> dict:
        cfg = self.config
        out = {
            "k": cfg.k,
            "order": cfg.order,
            "stages_requested": cfg.stages,
            "tol": cfg.tol,
            "max_sweeps": cfg.max_sweeps,
            "seed": cfg.seed,
            "alpha": self.params.prior.alpha.tolist(),
            "moment_dim": self.moment_dim,
            "stages": [s.to_dict() for s in self.stages],
        }
        if include_timing:
            out["wall_time"] = self.wall_time
        return out


def _retract(Phi, j, h, value, schema: Schema, bounds, metric=None) -> None:
    spec = schema[j]
    if spec.is_categorical:
        if metric is None:
            Phi[j, : spec.dim, h] = project_to_simplex(value)
        else:
            Phi[j, : spec.dim, h] = project_to_simplex_weighted(value, metric)
    else:
        lo, hi = bounds[j]
        Phi[j, 0, h] = min(max(float(value[0]), lo), hi)


def run_sweeps(
    system: BlockSystem,
    Phi: np.ndarray,
    bounds: np.ndarray,
    tol: float,
    max_sweeps: int,
    moment_dim: int,
    stage: int = 1,
):
    """Gauss-Seidel sweeps over (j ascending, h ascending) until convergence.

    Stops when the per-coordinate objective decrease between sweeps falls
    below ``tol``. Mutates ``Phi`` in place.
    """
    schema = system.schema
    k = Phi.shape[2]
    q = system.objective(Phi)
    if not np.isfinite(q):
        raise FitError(f"stage {stage}: objective is not finite at the starting point")
    trajectory = [q]
    skipped = []
    converged = False
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        for j in range(schema.p):
            for h in range(k):
                step = system.newton_step(Phi, j, h)
                if step is None:
                    skipped.append((sweeps, j, h))
                    log.warning("stage %d sweep %d: block (%d, %d) skipped, zero denominator",
                                stage, sweeps, j, h)
                    continue
                new, den = step
                if not np.all(np.isfinite(new)):
                    raise FitError(f"stage {stage}: non-finite update for block ({j}, {h})")
                # with non-identity weights the Hessian metric keeps the retracted step a descent step
                _retract(Phi, j, h, new, schema, bounds, None if system.w2 is None else den)
        q_new = system.objective(Phi)
        if not np.isfinite(q_new):
            raise FitError(f"stage {stage} sweep {sweeps}: objective is not finite")
        trajectory.append(q_new)
        if (q - q_new) / moment_dim < tol:
            converged = True
            break
        q = q_new
    return trajectory, sweeps, converged, skipped


def fit(
    dataset: Dataset,
    config: FitConfig,
    stats: MomentStats | None = None,
    init: ModelParams | None = None,
) -> FitReport:
    """Two-stage estimation of the component means.

    Stage 1 uses identity weights. Stage 2 (``config.stages == 2``) weights
    each moment coordinate by the reciprocal of its sample variance at the
    stage-1 estimate and restarts the sweeps from there.
    """
    started = time.perf_counter()
    schema = dataset.schema
    if schema.p < config.order:
        raise ValueError(
            f"order-{config.order} fitting needs at least {config.order} variables, got p={schema.p}"
        )
    prior = config.prior()
    lam = lambda_diagonals(prior)
    if stats is None or stats.order < config.order:
        stats = compute_stats(dataset, prior, config.order)
    elif not np.allclose(stats.prior.alpha, prior.alpha):
        raise ValueError("moment statistics were computed under a different alpha")
    bounds = config.bounds if config.bounds is not None else default_bounds(dataset)
    bounds = np.asarray(bounds, dtype=float)
    if init is None:
        init = init_params(schema, config.k, dataset, config.seed, prior, bounds)
    layout = MomentVectorLayout.build(schema, config.order)
    Phi = init.padded.copy()

    stages = []
    system = BlockSystem(stats, lam, config.order)
    traj, sweeps, conv, skipped = run_sweeps(
        system, Phi, bounds, config.tol, config.max_sweeps, layout.size, stage=1
    )
    fi1 = 1.0 - traj[-1] / system.null_scale()
    stages.append(StageResult(1, ModelParams(schema, prior, Phi.copy()), traj, sweeps, conv, fi1, skipped))

    if config.stages == 2:
        diag_s = estimate_diag_S(dataset, Phi, stats, lam, layout)
        weights = weights_from_S(diag_s, config.variance_floor, config.order)
        system2 = BlockSystem(stats, lam, config.order, weights, layout)
        traj2, sweeps2, conv2, skipped2 = run_sweeps(
            system2, Phi, bounds, config.tol, config.max_sweeps, layout.size, stage=2
        )
        fi2 = 1.0 - traj2[-1] / system2.null_scale()
        stages.append(
            StageResult(2, ModelParams(schema, prior, Phi.copy()), traj2, sweeps2, conv2, fi2,
                        skipped2, weights.values)
        )
    return FitReport(config, stages, layout.size, time.perf_counter() - started)


def with_k(config: FitConfig, k: int, seed: int | None = None) -> FitConfig:
    alpha = None
    if config.alpha is not None:
        if len(set(config.alpha)) != 1:
            raise ValueError("a per-component alpha cannot be carried across different k")
        alpha = (config.alpha[0],) * k
    return replace(config, k=k, alpha=alpha, seed=config.seed if seed is None else seed)


__all__ = [
    "BlockSystem",
    "FitConfig",
    "FitError",
    "FitReport",
    "ModelParams",
    "StageResult",
    "default_bounds",
    "fit",
    "gradient_block",
    "init_params",
    "objective",
    "project_to_simplex",
    "project_to_simplex_weighted",
    "run_sweeps",
    "update_block_q2",
    "update_block_q3",
]

