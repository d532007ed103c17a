"""End-to-end acceptance criteria, each checked at its stated tolerance.

Run alone with ``pytest tests/test_acceptance.py -v``; a summary with one
PASS/FAIL line per criterion is printed at the end of the session.
"""

import itertools
import time
from pathlib import Path

import numpy as np
import pytest

from meld.cli import main
from meld.data import Dataset, Schema, VariableSpec
from meld.estimator import FitConfig, fit, gradient_block, objective, update_block_q2, update_block_q3
from meld.evaluation import param_mse, rank_variables_by_kl
from meld.gmm import MomentVectorLayout, mean_moment_vector
from meld.moments import (
    DirichletPrior,
    compute_stats,
    lambda_diagonals,
    population_pair_moment,
    population_triple_moment,
)
from meld.params import ModelParams
from meld.selection import sweep_k
from meld.simulate import (
    TRAIT_LOCI,
    Emission,
    GenerativeSpec,
    categorical_study_spec,
    contaminate,
    quantitative_trait_spec,
    sample_dataset,
)

from helpers import categorical_schema, random_phi

REPLICATES = 10


def _study(rep: int, n: int = 1000, param_seed: int | None = None):
    spec = categorical_study_spec(param_seed=rep + 1 if param_seed is None else param_seed)
    return spec, sample_dataset(spec, n, seed=1000 + rep)


# ---------------------------------------------------------------- 1

def test_c01_moment_conditions_decay(verdict):
    started = time.perf_counter()
    spec = categorical_study_spec(param_seed=1)
    truth = spec.true_params()
    layout = MomentVectorLayout.build(spec.schema, 2)

    def gap(n, seed):
        stats = compute_stats(sample_dataset(spec, n, seed).dataset, spec.prior)
        return np.abs(mean_moment_vector(truth, stats, truth.lam, layout)).max()

    small = np.mean([gap(2_500, s) for s in range(20)])
    large = np.mean([gap(40_000, 100 + s) for s in range(20)])
    elapsed = time.perf_counter() - started
    verdict(1, large < 0.5 * small and elapsed < 60,
            f"max|f_n(Phi0)|: n=2500 {small:.4g}, n=40000 {large:.4g} "
            f"(ratio {large / small:.3f} < 0.5), {elapsed:.1f}s")


# ---------------------------------------------------------------- 2

def test_c02_population_moments_match_monte_carlo(verdict):
    started = time.perf_counter()
    n = 1_000_000
    zs = []
    for inst in range(10):
        rng = np.random.default_rng(inst)
        k, d = int(rng.integers(1, 4)), int(rng.integers(2, 4))
        prior = DirichletPrior(rng.uniform(0.2, 2.0, size=k))
        schema = categorical_schema(3, d)
        blocks = random_phi(schema, k, rng)
        spec = GenerativeSpec(prior, tuple(
            Emission(s.name, "multinomial", b, s.levels) for s, b in zip(schema, blocks)))
        ds = sample_dataset(spec, n, seed=50 + inst).dataset
        cols = [ds.column(j) for j in range(3)]
        for j, t in itertools.combinations(range(3), 2):
            prod = cols[j][:, :, None] * cols[t][:, None, :]
            zs.append(_z_scores(prod, population_pair_moment(blocks, prior, j, t)))
        prod = cols[0][:, :, None, None] * cols[1][:, None, :, None] * cols[2][:, None, None, :]
        zs.append(_z_scores(prod, population_triple_moment(blocks, prior, 0, 1, 2)))
    z = np.concatenate(zs)
    worst = float(z.max())
    elapsed = time.perf_counter() - started
    verdict(2, worst <= 3.0 and elapsed < 120,
            f"largest |MC - population| = {worst:.2f} SE over 10 instances; "
            f"{int((z > 3).sum())}/{z.size} cells beyond 3 SE "
            f"(chance alone expects {0.0027 * z.size:.1f}), {elapsed:.1f}s")


def _z_scores(samples, expected):
    flat = samples.reshape(samples.shape[0], -1)
    mean = flat.mean(axis=0)
    se = flat.std(axis=0) / np.sqrt(flat.shape[0])
    exp = expected.ravel()
    # cells that never occur and have zero expectation contribute no deviation
    return np.where(se > 0, np.abs(mean - exp) / np.where(se > 0, se, 1.0),
                    np.where(np.abs(mean - exp) > 1e-12, np.inf, 0.0))


# ---------------------------------------------------------------- 3 and 4

def _instance(rng, order):
    p = int(rng.integers(order, 6))
    k = int(rng.integers(1, 4))
    specs = []
    for j in range(p):
        d = int(rng.integers(1, 5))
        specs.append(VariableSpec(f"x{j}", "continuous") if d == 1 else
                     VariableSpec(f"x{j}", "categorical", tuple(f"l{c}" for c in range(d))))
    schema = Schema(tuple(specs))
    n = 60
    cols = [rng.integers(0, s.dim, n) if s.is_categorical else rng.normal(1, 1, n) for s in schema]
    prior = DirichletPrior(rng.uniform(0.1, 1.0, size=k))
    stats = compute_stats(Dataset(schema, np.column_stack(cols)), prior, order)
    Phi = ModelParams.from_blocks(schema, prior, random_phi(schema, k, rng)).padded
    return schema, stats, prior, Phi


def test_c03_gradient_matches_finite_differences(verdict):
    started = time.perf_counter()
    worst = 0.0
    h = 1e-6
    for order, weighted in itertools.product((2, 3), (False, True)):
        rng = np.random.default_rng(10 * order + weighted)
        for _ in range(20):
            schema, stats, prior, Phi = _instance(rng, order)
            lam = lambda_diagonals(prior)
            size = MomentVectorLayout.build(schema, order).size
            w = rng.uniform(0.2, 5.0, size) if weighted else None
            for j, c in itertools.product(range(schema.p), range(prior.k)):
                g = gradient_block(j, c, Phi, stats, lam, order, w)
                fd = np.empty_like(g)
                for a in range(schema[j].dim):
                    up, dn = Phi.copy(), Phi.copy()
                    up[j, a, c] += h
                    dn[j, a, c] -= h
                    fd[a] = (objective(up, stats, lam, order, w) - objective(dn, stats, lam, order, w)) / (2 * h)
                worst = max(worst, np.abs(g - fd).max() / max(1.0, np.abs(fd).max()))
    elapsed = time.perf_counter() - started
    verdict(3, worst <= 1e-6 and elapsed < 60,
            f"max relative gradient error {worst:.2e} (orders 2,3; identity and diagonal weights; "
            f"20 instances each), {elapsed:.1f}s")


def test_c04_newton_step_optimality(verdict):
    worst = 0.0
    for order, weighted in itertools.product((2, 3), (False, True)):
        rng = np.random.default_rng(500 + 10 * order + weighted)
        update = update_block_q3 if order == 3 else update_block_q2
        for _ in range(20):
            schema, stats, prior, Phi = _instance(rng, order)
            lam = lambda_diagonals(prior)
            size = MomentVectorLayout.build(schema, order).size
            w = rng.uniform(0.2, 5.0, size) if weighted else None
            for j, c in itertools.product(range(schema.p), range(prior.k)):
                new = update(j, c, Phi, stats, lam, w)
                trial = Phi.copy()
                trial[j, : schema[j].dim, c] = new
                worst = max(worst, np.abs(gradient_block(j, c, trial, stats, lam, order, w)).max())
    verdict(4, worst <= 1e-8, f"max |block gradient| after the Newton step {worst:.2e}")


# ---------------------------------------------------------------- 5 and 6

@pytest.fixture(scope="module")
def table1():
    out = []
    for rep in range(REPLICATES):
        _, sim = _study(rep)
        q2 = sweep_k(sim.dataset, range(1, 6), FitConfig(k=1, seed=rep))
        q3 = fit(sim.dataset, FitConfig(k=3, order=3, seed=rep))
        out.append((q2, q3))
    return out


def test_c05_table1_fitness_index(table1, verdict):
    fi3 = np.array([q2.fi_table()[3][0] for q2, _ in table1])
    strict_max = sum(
        all(q2.fi_table()[3][0] > q2.fi_table()[k][0] for k in (1, 2, 4, 5)) for q2, _ in table1
    )
    ok = bool(np.all(np.abs(fi3 - 0.996) <= 0.01)) and strict_max >= 8
    verdict(5, ok, f"stage-1 FI(k=3) mean {fi3.mean():.4f} range [{fi3.min():.4f}, {fi3.max():.4f}] "
                   f"(target 0.996 +/- 0.01); k=3 strictly maximal on {strict_max}/10 (need >= 8)")


def test_c06_convergence_speed(table1, verdict):
    sweeps2 = [next(r for r in q2.results if r.k == 3).sweeps[0] for q2, _ in table1]
    sweeps3 = [q3.stage(1).sweeps for _, q3 in table1]
    conv = all(next(r for r in q2.results if r.k == 3).converged[0] and q3.stage(1).converged
               for q2, q3 in table1)
    ok = max(sweeps2) <= 50 and max(sweeps3) <= 25 and conv
    verdict(6, ok, f"Q2 sweeps {min(sweeps2)}-{max(sweeps2)} (<= 50), "
                   f"Q3 sweeps {min(sweeps3)}-{max(sweeps3)} (<= 25)")


# ---------------------------------------------------------------- 7

@pytest.mark.parametrize("trait", ["gaussian", "poisson"])
def test_c07_table2_trait_loci(trait, verdict):
    hits = {}
    for fraction in (0.0, 0.04, 0.10, 0.20):
        count = 0
        for rep in range(REPLICATES):
            spec = quantitative_trait_spec(trait, param_seed=rep)
            sim = contaminate(sample_dataset(spec, 1000, seed=rep), fraction, seed=7000 + rep)
            rep_fit = fit(sim.dataset, FitConfig(k=2, seed=rep))
            top = {j + 1 for j, _ in rank_variables_by_kl(rep_fit.params, sim.dataset)[:8]}
            count += top == set(TRAIT_LOCI)
        hits[fraction] = count
    ok = all(c >= 9 for c in hits.values())
    detail = ", ".join(f"{int(100 * f)}%: {c}/10" for f, c in hits.items())
    verdict(7, ok, f"{trait} trait exact top-8 recovery {detail} (need >= 9/10 each)")


# ---------------------------------------------------------------- 8

def test_c08_mse_decreases_with_n(verdict):
    means = {}
    for n in (100, 1000, 10_000):
        errs = []
        for rep in range(REPLICATES):
            spec, sim = _study(rep, n=n)
            est = fit(sim.dataset, FitConfig(k=3, seed=rep)).params
            errs.append(param_mse(est, spec.true_params()))
        means[n] = float(np.mean(errs))
    ok = means[100] > means[1000] > means[10_000] and means[10_000] < 0.25 * means[100]
    verdict(8, ok, "mean aligned MSE " + ", ".join(f"n={n}: {v:.2e}" for n, v in means.items())
            + f" (ratio {means[10_000] / means[100]:.3f} < 0.25)")


# ---------------------------------------------------------------- 9

def test_c09_robustness_ordering(verdict):
    clean2, dirty2, wins = [], [], 0
    for rep in range(REPLICATES):
        spec, sim = _study(rep)
        truth = spec.true_params()
        dirty = contaminate(sim, 0.10, seed=9000 + rep)
        clean2.append(param_mse(fit(sim.dataset, FitConfig(k=3, seed=rep)).params, truth))
        d2 = param_mse(fit(dirty.dataset, FitConfig(k=3, seed=rep)).params, truth)
        d3 = param_mse(fit(dirty.dataset, FitConfig(k=3, order=3, seed=rep)).params, truth)
        dirty2.append(d2)
        wins += d2 <= d3
    ratio = float(np.mean(dirty2) / np.mean(clean2))
    ok = ratio <= 1.5 and wins >= 7
    verdict(9, ok, f"contaminated/clean Q2 MSE ratio {ratio:.2f} (<= 1.5); "
                   f"Q2 <= Q3 on {wins}/10 contaminated replicates (>= 7)")


# ---------------------------------------------------------------- 10

def test_c10_cli_determinism(tmp_path, verdict):
    specs = Path(__file__).resolve().parent.parent / "specs"

    def run(root):
        root.mkdir()
        sim, io = root / "sim", ["--data", str(root / "sim" / "data.csv"),
                                 "--schema", str(root / "sim" / "schema.json")]
        codes = [
            main(["simulate", "--spec", str(specs / "categorical_p20.json"), "--n", "500",
                  "--seed", "4", "--contaminate", "0.05", "--out-dir", str(sim)]),
            main(["fit", *io, "--k", "3", "--stages", "2", "--out", str(root / "fit.json"),
                  "--tables-dir", str(root / "tables")]),
            main(["fit", *io, "--k", "3", "--order", "3", "--out", str(root / "fit3.json")]),
            main(["select", *io, "--k-list", "1-4", "--out", str(root / "select.csv")]),
            main(["score", *io, "--fit", str(root / "fit.json"), "--out", str(root / "score.csv")]),
            main(["moments", *io, "--order", "3", "--fit", str(root / "fit.json"),
                  "--out", str(root / "moments.json")]),
        ]
        files = {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
        return codes, files

    codes_a, files_a = run(tmp_path / "a")
    codes_b, files_b = run(tmp_path / "b")
    differ = [str(k) for k in files_a if files_a[k] != files_b.get(k)]
    ok = codes_a == codes_b == [0] * 6 and not differ and files_a.keys() == files_b.keys()
    verdict(10, ok, f"{len(files_a)} output files from 5 subcommands, "
                    f"{len(differ)} differ between identical runs")
