import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabattr.ablation import (AblationCurve, aggregate_curves, ablation_curve, area_under_curve,
                              check_k_grid, draw_noise, f1_score, mask_top_k, n_masked,
                              random_control_curve, rank_features)
from tabattr.numerics import ParameterError, Rng

GRID = (0, 10, 20, 30, 40, 50, 100)


def oracle_attributions(n_rows, m=10):
    """Rank the two informative features first on every row."""
    a = np.zeros((n_rows, m))
    a[:, 0], a[:, 1] = 2.0, 1.0
    return a


def test_rank_examples():
    assert list(rank_features([0.9, 0.1, 0.5, 0.2])) == [0, 2, 3, 1]
    assert list(rank_features([0.5, 0.5])) == [0, 1]
    assert list(rank_features([-0.9, 0.1], "absolute")) == [0, 1]
    assert list(rank_features([-0.9, 0.1], "signed")) == [1, 0]
    with pytest.raises(ParameterError):
        rank_features([1.0], "l2")


@given(st.lists(st.integers(-3, 3), min_size=1, max_size=12))
def test_rank_is_permutation_with_index_tiebreak(values):
    order = list(rank_features(values))
    assert sorted(order) == list(range(len(values)))
    for a, b in zip(order, order[1:]):
        assert values[a] > values[b] or (values[a] == values[b] and a < b)


@pytest.mark.parametrize("m,k,count", [(4, 50, 2), (10, 30, 3), (10, 25, 3), (7, 100, 7), (7, 0, 0), (3, 1, 1)])
def test_masked_count(m, k, count):
    assert n_masked(m, k) == count


def test_n_masked_rejects_out_of_range():
    with pytest.raises(ParameterError):
        n_masked(4, 101)


def test_mask_examples():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    counts = np.zeros(4, dtype=int)
    np.testing.assert_array_equal(mask_top_k(x, [2, 0, 1, 3], 0, counts, Rng(0)), x)
    full = mask_top_k(x, [2, 0, 1, 3], 100, counts, Rng(0))
    assert np.all(full != x)
    half = mask_top_k(x, [2, 0, 1, 3], 50, counts, Rng(0))
    changed = np.flatnonzero(half != x)
    assert list(changed) == [0, 2]


def test_mask_never_touches_other_features_exhaustive():
    m = 5
    x = np.arange(m, dtype=float) + 100.0
    counts = np.array([0, 3, 0, 2, 0])
    for ranking in itertools.permutations(range(m)):
        for k in (0, 10, 20, 40, 60, 80, 100):
            out = mask_top_k(x, ranking, k, counts, Rng(1))
            top = set(ranking[:n_masked(m, k)])
            for j in range(m):
                if j not in top:
                    assert out[j] == x[j]


def test_categorical_noise_uses_codes():
    noise = draw_noise(2000, [0, 3, 5], Rng(2))
    assert set(np.unique(noise[:, 1])) == {0.0, 1.0, 2.0}
    assert set(np.unique(noise[:, 2])) == {0.0, 1.0, 2.0, 3.0, 4.0}
    assert abs(noise[:, 0].mean()) < 0.1 and abs(noise[:, 0].std() - 1.0) < 0.1


def test_f1_examples():
    y = np.array([1, 0, 1, 0])
    assert f1_score(y, y) == 1.0
    # TP=2, FP=1, FN=0
    assert f1_score([1, 1, 1, 0], [1, 1, 0, 0]) == pytest.approx(0.8)
    assert f1_score(1 - y, y) == 0.0
    with pytest.raises(ParameterError):
        f1_score([], [])


def test_macro_f1_matches_sklearn():
    from sklearn.metrics import f1_score as sk_f1
    g = np.random.default_rng(3)
    for _ in range(20):
        y = g.integers(0, 4, size=50)
        p = g.integers(0, 4, size=50)
        assert f1_score(p, y, "macro", 4) == pytest.approx(sk_f1(y, p, average="macro", zero_division=0), abs=1e-12)
        assert f1_score(p % 2, y % 2) == pytest.approx(sk_f1(y % 2, p % 2, zero_division=0), abs=1e-12)


def test_macro_f1_absent_class_scores_zero():
    assert f1_score([0, 1], [0, 1], "macro", 3) == pytest.approx(2 / 3)


@settings(max_examples=50)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=40), st.randoms())
def test_f1_invariant_to_sample_order(pairs, rnd):
    p, y = map(np.array, zip(*pairs))
    perm = list(range(len(p)))
    rnd.shuffle(perm)
    assert f1_score(p, y) == f1_score(p[perm], y[perm])


def test_curve_k0_is_unmasked_f1(synth, trained):
    rows = synth.test_idx[:200]
    base = f1_score(trained.predict_class(synth.features[rows]), synth.labels[rows])
    for seed in range(3):
        a = np.random.default_rng(seed).normal(size=(200, 10))
        curve = ablation_curve(trained, synth, a, GRID, Rng(seed), repeats=2, rows=rows)
        assert curve.f1_values[0] == base


def test_oracle_ranking_beats_random_at_k20(synth, trained):
    rows = synth.test_idx
    rng = Rng(4)
    oracle = ablation_curve(trained, synth, oracle_attributions(len(rows)), GRID, rng, repeats=5)
    control = random_control_curve(trained, synth, GRID, rng, repeats=5)
    assert oracle.f1_values[2] <= control.f1_values[2]


def test_constant_zero_attributions_use_index_order(synth, trained):
    rows = synth.test_idx[:100]
    zeros = np.zeros((100, 10))
    first_two = oracle_attributions(100)
    c0 = ablation_curve(trained, synth, zeros, GRID, Rng(5), repeats=3, rows=rows)
    c1 = ablation_curve(trained, synth, first_two, GRID, Rng(5), repeats=3, rows=rows)
    # index order puts features 0 and 1 first too, so the curves agree
    assert c0.f1_values == c1.f1_values
    assert all(0.0 <= f <= 1.0 for f in c0.f1_values)


def test_k100_coincides_under_shared_stream(synth, trained):
    rng = Rng(6)
    n = len(synth.test_idx)
    g = np.random.default_rng(0)
    curves = [ablation_curve(trained, synth, g.normal(size=(n, 10)), GRID, rng, repeats=3) for _ in range(3)]
    curves.append(random_control_curve(trained, synth, GRID, rng, repeats=3))
    assert len({c.f1_values[-1] for c in curves}) == 1
    assert len({c.f1_values[0] for c in curves}) == 1


def test_control_standard_error_with_50_repeats(synth, trained):
    curve = random_control_curve(trained, synth, GRID, Rng(7), repeats=50)
    se = np.asarray(curve.f1_std) / np.sqrt(50)
    assert np.all(se <= 0.03)


def test_attribution_shape_checked(synth, trained):
    with pytest.raises(ParameterError):
        ablation_curve(trained, synth, np.zeros((3, 10)), GRID, Rng(0))


@pytest.mark.parametrize("grid", [(), (10, 20), (0, 20, 10), (0, 0), (0, 50, 120)])
def test_bad_k_grid(grid):
    with pytest.raises(ParameterError):
        check_k_grid(grid)


def test_aggregate_examples():
    a = AblationCurve((0, 50), (0.9, 0.5))
    b = AblationCurve((0, 50), (0.7, 0.3))
    agg = aggregate_curves([a, b])
    np.testing.assert_allclose(agg.mean_f1, [0.8, 0.4])
    np.testing.assert_allclose(agg.std_f1, [0.1, 0.1])
    assert agg.n_curves == 2
    one = aggregate_curves([a])
    assert one.mean_f1 == a.f1_values and one.std_f1 == (0.0, 0.0)
    same = aggregate_curves([a] * 5)
    np.testing.assert_allclose(same.mean_f1, a.f1_values, rtol=0, atol=1e-15)
    assert same.std_f1 == (0.0, 0.0)


def test_aggregate_rejects_mismatched_grids():
    with pytest.raises(ParameterError):
        aggregate_curves([AblationCurve((0, 50), (1.0, 0.5)), AblationCurve((0, 40), (1.0, 0.5))])
    with pytest.raises(ParameterError):
        aggregate_curves([])


def test_area_under_curve():
    assert area_under_curve(AblationCurve((0, 50, 100), (1.0, 0.5, 0.0))) == pytest.approx(0.5)


@pytest.mark.slow
def test_monotone_destruction_over_seeds():
    from tabattr.data import synth_dataset
    from tabattr.model import TrainConfig, train
    grid = (0, 10, 20, 30, 40, 50)
    gaps = []
    for seed in range(20):
        ds = synth_dataset(2000, 10, [0, 1], Rng(1000 + seed))
        model = train(ds, TrainConfig(seed=seed))
        rng = Rng(seed)
        o = ablation_curve(model, ds, oracle_attributions(len(ds.test_idx)), grid, rng, repeats=10)
        c = random_control_curve(model, ds, grid, rng, repeats=10)
        gaps.append(np.subtract(c.f1_values, o.f1_values))
    mean_gap = np.mean(gaps, axis=0)
    assert np.all(mean_gap[1:] >= 0.02)
