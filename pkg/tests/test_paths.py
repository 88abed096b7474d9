import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rbmlab.paths import (NoiseStream, Path, TimeGrid, derive_seed, mean_all, mean_exclude,
                          modulus, sample_brownian, sup_norm)


def test_grid_examples():
    assert np.allclose(TimeGrid(1.0, 4).times, [0, 0.25, 0.5, 0.75, 1.0])
    assert np.allclose(TimeGrid(2.0, 1).times, [0, 2.0])
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 4)


def test_grid_index_rejects_off_grid():
    g = TimeGrid(1.0, 4)
    assert g.index(0.75) == 3
    assert g.index(1.0) == 4
    with pytest.raises(ValueError):
        g.index(0.3)


def test_brownian_drift_dominates():
    g = TimeGrid(1.0, 50)
    W = sample_brownian(g, 3, b=1.0, sigma=1e-12, seed=7)
    assert np.max(np.abs(W.values - g.times)) < 1e-6


def test_brownian_moments():
    g = TimeGrid(1.0, 1)
    W1 = sample_brownian(g, 100_000, 0.0, 1.0, seed=1).values[:, -1]
    assert abs(W1.mean()) < 3 / math.sqrt(1e5)
    W2 = sample_brownian(g, 100_000, 0.0, 2.0, seed=2).values[:, -1]
    assert abs(W2.var() - 4.0) < 0.05 * 4.0


def test_brownian_rejects_bad_sigma():
    with pytest.raises(ValueError):
        sample_brownian(TimeGrid(1.0, 10), 2, 0.0, 0.0, 0)


def test_noise_stream_blocks_equal_full_draw():
    full = NoiseStream(5, range(3)).draw(100)
    s = NoiseStream(5, range(3))
    parts = np.hstack([s.draw(30), s.draw(70)])
    assert np.array_equal(full, parts)


def test_growing_ensemble_keeps_existing_paths():
    g = TimeGrid(1.0, 20)
    small = sample_brownian(g, 4, 0.0, 1.0, 9).values
    big = sample_brownian(g, 10, 0.0, 1.0, 9).values
    assert np.array_equal(small, big[:4])
    tail = sample_brownian(g, 6, 0.0, 1.0, 9, first_particle=4).values
    assert np.array_equal(tail, big[4:])


def test_coarsen_observes_same_path():
    W = sample_brownian(TimeGrid(1.0, 12), 2, 0.3, 1.5, 3)
    C = W.coarsen(4)
    assert C.grid.M == 3
    assert np.array_equal(C.values, W.values[:, ::4])


def test_derive_seed():
    assert derive_seed(11, 0) == 11
    seeds = {derive_seed(11, j) for j in range(1000)}
    assert len(seeds) == 1000


def test_sup_norm_examples():
    g2 = TimeGrid(2.0, 2)
    assert sup_norm(Path(g2, [0, -1, 0.5]), 2.0) == 1
    assert sup_norm(Path(TimeGrid(1.0, 5), np.zeros(6))) == 0
    assert sup_norm(Path(TimeGrid(3.0, 3), [0, 2, -3, 1]), 3.0) == 3


def _modulus_pairs(v, d):
    return max(abs(v[j] - v[k]) for j in range(len(v)) for k in range(len(v)) if abs(j - k) <= d)


def test_modulus_examples():
    g = TimeGrid(1.0, 10)
    assert modulus(Path(g, 2 * g.times), 1.0, 0.5) == pytest.approx(1.0)
    assert modulus(Path(g, np.full(11, 3.0)), 1.0, 0.5) == 0
    f = Path(TimeGrid(3.0, 3), [0, 1, 0, 4])
    assert modulus(f, 3.0, 1.0) == 4 == _modulus_pairs(f.values, 1)


def test_modulus_rejects_delta_beyond_t():
    f = Path(TimeGrid(1.0, 4), [0, 1, 2, 3, 4])
    with pytest.raises(ValueError):
        modulus(f, 0.5, 0.75)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=30), st.integers(1, 29))
def test_modulus_matches_pair_scan(vals, d):
    d = min(d, len(vals) - 1)
    g = TimeGrid(float(len(vals) - 1), len(vals) - 1)
    f = Path(g, vals)
    assert modulus(f, g.T, float(d)) == pytest.approx(_modulus_pairs(vals, d), abs=1e-12)


def test_means():
    assert mean_exclude([1, 2, 3], 0) == 2.5
    assert mean_exclude([4.0, 4.0, 4.0], 1) == 4.0
    assert mean_all([1, 2, 3]) == 2
    with pytest.raises(ValueError):
        mean_exclude([1.0], 0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=20))
def test_mean_identity(v):
    n = len(v)
    for i in range(n):
        assert mean_exclude(v, i) == pytest.approx((n * mean_all(v) - v[i]) / (n - 1),
                                                   abs=1e-9)


def test_path_is_read_only_and_validated():
    p = Path(TimeGrid(1.0, 2), [0, 1, 2])
    with pytest.raises(ValueError):
        p.values[0] = 5
    with pytest.raises(ValueError):
        Path(TimeGrid(1.0, 2), [0, 1])
    with pytest.raises(ValueError):
        Path(TimeGrid(1.0, 2), [0, np.nan, 1])
    assert p.to_csv().splitlines()[0] == "t,value"
