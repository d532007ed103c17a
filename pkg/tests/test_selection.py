import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meld.estimator import FitConfig
from meld.gmm import MomentVectorLayout, target_vector
from meld.moments import DirichletPrior, compute_stats
from meld.selection import fitness_index, seed_for_k, sweep_k
from meld.simulate import categorical_study_spec, quantitative_trait_spec, sample_dataset


@pytest.fixture(scope="module")
def stats_and_layout():
    spec = categorical_study_spec(param_seed=0, p=5, d=3)
    ds = sample_dataset(spec, 300, seed=1).dataset
    stats = compute_stats(ds, DirichletPrior.symmetric(3), 3)
    return stats, MomentVectorLayout.build(ds.schema, 3)


@pytest.mark.parametrize("order", [2, 3])
def test_fi_endpoints(stats_and_layout, order):
    stats, _ = stats_and_layout
    layout = MomentVectorLayout.build(stats.schema, order)
    e = target_vector(stats, layout)
    assert fitness_index(0.0, stats, order=order) == 1.0
    assert fitness_index(float(e @ e), stats, order=order) == pytest.approx(0.0, abs=1e-15)
    assert fitness_index(3 * float(e @ e), stats, order=order) < 0


def test_fi_identity_weights_uses_frobenius_norms(stats_and_layout):
    stats, _ = stats_and_layout
    total = sum((stats.pair(j, t) ** 2).sum() for j, t in stats.pairs)
    # equal up to summation order
    assert fitness_index(0.25, stats, order=2) == pytest.approx(1.0 - 0.25 / total, rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(scale=st.floats(1e-3, 1e3), q=st.floats(0, 10), seed=st.integers(0, 1000))
def test_fi_invariant_to_weight_rescaling(stats_and_layout, scale, q, seed):
    stats, layout = stats_and_layout
    w = np.random.default_rng(seed).uniform(0.1, 10.0, layout.size)
    base = fitness_index(q, stats, w, order=3)
    assert fitness_index(q * scale, stats, w * scale, order=3) == pytest.approx(base, rel=1e-9)


def test_fi_zero_scale_rejected(stats_and_layout):
    stats, layout = stats_and_layout
    with pytest.raises(ValueError):
        fitness_index(1.0, stats, np.zeros(layout.size), order=3)


def test_single_k_is_chosen():
    ds = sample_dataset(categorical_study_spec(param_seed=0, p=5), 300, seed=1).dataset
    report = sweep_k(ds, [4], FitConfig(k=1))
    assert report.chosen_k == 4


def test_sweep_picks_three_on_three_component_data():
    ds = sample_dataset(categorical_study_spec(param_seed=1), 1000, seed=11).dataset
    report = sweep_k(ds, range(1, 6), FitConfig(k=1))
    assert report.chosen_k == 3
    fi = {r.k: r.fi[0] for r in report.results}
    assert fi[3] == pytest.approx(0.996, abs=0.01)


def test_sweep_picks_two_on_two_group_data():
    spec = quantitative_trait_spec("gaussian", param_seed=3)
    ds = sample_dataset(spec, 1000, seed=3).dataset
    assert sweep_k(ds, range(1, 6), FitConfig(k=1)).chosen_k == 2


def test_ties_go_to_smaller_k(monkeypatch):
    import meld.selection as sel

    def fake(dataset, config):
        return sel.KResult(k=config.k, seed=config.seed, fi=[0.5], sweeps=[1], converged=[True])

    monkeypatch.setattr(sel, "_fit_one", fake)
    report = sel.sweep_k(None, [3, 1, 2], FitConfig(k=1))
    assert report.chosen_k == 1


def test_failed_k_is_recorded(monkeypatch):
    import meld.selection as sel

    def fake(dataset, config):
        if config.k == 2:
            return sel.KResult(k=2, seed=config.seed, error="FitError: boom")
        return sel.KResult(k=config.k, seed=config.seed, fi=[0.1 * config.k], sweeps=[1],
                           converged=[True])

    monkeypatch.setattr(sel, "_fit_one", fake)
    report = sel.sweep_k(None, [1, 2, 3], FitConfig(k=1))
    assert report.chosen_k == 3
    assert report.to_rows()[2][-1] == "FitError: boom"


def test_criterion_stage_checked():
    with pytest.raises(ValueError):
        sweep_k(None, [1], FitConfig(k=1), criterion_stage=2)
    with pytest.raises(ValueError):
        sweep_k(None, [], FitConfig(k=1))


def test_seeds_differ_per_k():
    assert len({seed_for_k(0, k) for k in range(1, 6)}) == 5
    assert seed_for_k(3, 2) == seed_for_k(3, 2)
