from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ilaclab.eigensolver import eigvals_symmetric
from ilaclab.lattice import (
    BandStructure,
    Boundary,
    BoxSpec,
    DistributionError,
    LatticeError,
    PeriodicDoubleEdgeError,
    PotentialDistribution,
    almost_sure_bands,
    assemble_hamiltonians,
    build_laplacian,
    sample_potential,
)


def test_laplacian_two_sites_dirichlet():
    np.testing.assert_array_equal(build_laplacian(BoxSpec(1, 2)), [[0, 1], [1, 0]])


def test_laplacian_three_sites_periodic():
    lap = build_laplacian(BoxSpec(1, 3, Boundary.PERIODIC))
    np.testing.assert_array_equal(lap, [[0, 1, 1], [1, 0, 1], [1, 1, 0]])


def test_laplacian_square_rows_sum_to_two():
    lap = build_laplacian(BoxSpec(2, 2))
    assert lap.shape == (4, 4)
    np.testing.assert_array_equal(lap.sum(axis=1), 2)


def test_laplacian_rejects_tiny_boxes():
    with pytest.raises(LatticeError):
        build_laplacian(BoxSpec(1, 1))
    with pytest.raises(PeriodicDoubleEdgeError):
        build_laplacian(BoxSpec(2, 2, "periodic"))


@pytest.mark.parametrize("d,L", [(1, 7), (2, 5), (3, 4)])
def test_dirichlet_row_sums_interior(d, L):
    box = BoxSpec(d, L)
    lap = build_laplacian(box)
    assert np.array_equal(lap, lap.T)
    rows = lap.sum(axis=1)
    interior = np.array([all(0 < c < L - 1 for c in box.coords(k)) for k in range(box.n_sites)])
    assert np.all(rows <= 2 * d)
    assert np.all((rows == 2 * d) == interior)


def test_periodic_rows_all_full():
    lap = build_laplacian(BoxSpec(2, 4, "periodic"))
    np.testing.assert_array_equal(lap.sum(axis=1), 4)


def test_site_cap():
    with pytest.raises(LatticeError):
        BoxSpec(3, 30)
    assert BoxSpec(3, 30, max_sites=27000).n_sites == 27000
    with pytest.raises(LatticeError):
        BoxSpec(4, 2)


@given(st.integers(1, 3), st.integers(2, 6), st.data())
def test_index_is_row_major_bijection(d, L, data):
    box = BoxSpec(d, L)
    k = data.draw(st.integers(0, box.n_sites - 1))
    coords = box.coords(k)
    assert box.index(coords) == k
    expected = 0
    for c in coords:
        expected = expected * L + c
    assert expected == k


def test_distribution_validation():
    with pytest.raises(DistributionError):
        PotentialDistribution.uniform(1.0, 0.0)
    with pytest.raises(DistributionError):
        PotentialDistribution.two_interval((0, 1), (0.5, 2))
    with pytest.raises(DistributionError):
        PotentialDistribution("bernoulli", v0=1.0)
    with pytest.raises(DistributionError):
        PotentialDistribution.bernoulli(0, 1, p=1.5)


def test_supports():
    assert PotentialDistribution.uniform(0, 1).support() == [(0, 1)]
    assert PotentialDistribution.bernoulli(2, -1).support() == [(-1, -1), (2, 2)]
    assert PotentialDistribution.bernoulli(3, 3).support() == [(3, 3)]
    assert PotentialDistribution.two_interval((0, 1), (9, 10)).support() == [(0, 1), (9, 10)]


def test_degenerate_bernoulli_is_constant():
    q = sample_potential(PotentialDistribution.bernoulli(0.7, 0.7), BoxSpec(2, 5), 3, 1).values
    assert np.all(q == 0.7)


@given(st.integers(0, 2**64 - 1), st.integers(0, 10**6))
@settings(max_examples=30)
def test_uniform_samples_stay_in_support(seed, index):
    dist = PotentialDistribution.uniform(0.0, 1.0)
    q = sample_potential(dist, BoxSpec(1, 50), seed, index).values
    assert np.all((q >= 0) & (q <= 1))


@pytest.mark.parametrize(
    "dist",
    [
        PotentialDistribution.uniform(-1.5, 2.0),
        PotentialDistribution.bernoulli(0.0, 1.0, p=0.3),
        PotentialDistribution.two_interval((0, 1), (9, 10), p=0.25),
    ],
)
def test_samples_in_support_and_reproducible(dist):
    box = BoxSpec(2, 10)
    a = sample_potential(dist, box, 11, 4)
    b = sample_potential(dist, box, 11, 4)
    assert a.values.tobytes() == b.values.tobytes()
    assert np.all(dist.contains(a.values))
    assert not np.array_equal(a.values, sample_potential(dist, box, 11, 5).values)
    assert not np.array_equal(a.values, sample_potential(dist, box, 12, 4).values)


def test_samples_depend_only_on_site_index_prefix():
    # a bigger box reuses the same per-site stream for the leading sites
    dist = PotentialDistribution.uniform(0, 1)
    small = sample_potential(dist, BoxSpec(1, 10), 5, 2).values
    large = sample_potential(dist, BoxSpec(1, 30), 5, 2).values
    np.testing.assert_array_equal(small, large[:10])


def test_bernoulli_and_mixture_weights():
    box = BoxSpec(1, 20000)
    q = sample_potential(PotentialDistribution.bernoulli(0, 1, p=0.3), box, 1, 0).values
    assert abs(q.mean() - 0.3) < 0.02
    q = sample_potential(PotentialDistribution.two_interval((0, 1), (9, 10), p=0.25), box, 1, 0).values
    assert abs((q <= 1).mean() - 0.25) < 0.02


def test_samples_are_read_only():
    q = sample_potential(PotentialDistribution.uniform(0, 1), BoxSpec(1, 5), 0, 0).values
    with pytest.raises(ValueError):
        q[0] = 3.0


def test_assemble_zero_potential():
    lap = build_laplacian(BoxSpec(1, 4))
    pair = assemble_hamiltonians(lap, np.zeros(4))
    np.testing.assert_array_equal(pair.h_plus, lap)
    np.testing.assert_array_equal(pair.h_minus, lap)


def test_assemble_two_sites():
    pair = assemble_hamiltonians(build_laplacian(BoxSpec(1, 2)), np.array([1.0, 2.0]))
    np.testing.assert_array_equal(pair.h_plus, [[1, 1], [1, 2]])
    np.testing.assert_array_equal(pair.h_minus, [[-1, 1], [1, -2]])


def test_assemble_dimension_mismatch():
    with pytest.raises(ValueError):
        assemble_hamiltonians(build_laplacian(BoxSpec(1, 3)), np.zeros(4))


@given(st.integers(0, 1000))
@settings(max_examples=20)
def test_assembly_identities(index):
    box = BoxSpec(2, 4)
    lap = build_laplacian(box)
    real = sample_potential(PotentialDistribution.uniform(-1, 2), box, 9, index)
    pair = assemble_hamiltonians(lap, real, box)
    assert np.array_equal(pair.h_plus, pair.h_plus.T)
    assert np.array_equal(pair.h_minus, pair.h_minus.T)
    off = ~np.eye(box.n_sites, dtype=bool)
    assert np.array_equal(pair.h_plus[off], pair.h_minus[off])
    np.testing.assert_array_equal(pair.h_plus + pair.h_minus, 2 * lap)
    flipped = assemble_hamiltonians(lap, -real.values)
    np.testing.assert_array_equal(pair.h_minus, flipped.h_plus)


def test_bands_uniform():
    bands = almost_sure_bands(PotentialDistribution.uniform(0, 1), 1, +1)
    assert bands.bands == ((Fraction(-2), Fraction(3)),)
    assert not bands.gap_condition_met


def test_bands_two_interval_gap():
    bands = almost_sure_bands(PotentialDistribution.two_interval((0, 1), (9, 10)), 1, +1)
    assert bands.bands == ((-2, 3), (7, 12))
    assert bands.gap_condition_met


def test_bands_two_interval_overlap_merges():
    bands = almost_sure_bands(PotentialDistribution.two_interval((0, 1), (4, 5)), 1, +1)
    assert bands.bands == ((-2, 7),)
    assert not bands.gap_condition_met


@pytest.mark.parametrize(
    "dist",
    [
        PotentialDistribution.uniform(0.25, 1.5),
        PotentialDistribution.two_interval((0, 1), (9, 10)),
        PotentialDistribution.bernoulli(-3, 8),
    ],
)
@pytest.mark.parametrize("d", [1, 2, 3])
def test_minus_bands_mirror_plus(dist, d):
    plus = almost_sure_bands(dist, d, +1)
    minus = almost_sure_bands(dist, d, -1)
    assert minus.bands == tuple((-hi, -lo) for lo, hi in reversed(plus.bands))
    assert minus.gap_condition_met == plus.gap_condition_met


def test_band_structure_validation():
    with pytest.raises(ValueError):
        BandStructure(((0, 2), (1, 3)))
    with pytest.raises(ValueError):
        BandStructure(((2, 1),))
    with pytest.raises(ValueError):
        BandStructure(())


@pytest.mark.parametrize("d,L", [(1, 60), (2, 8)])
def test_compression_bounds_hold(d, L):
    box = BoxSpec(d, L)
    dist = PotentialDistribution.uniform(0, 1)
    lap = build_laplacian(box)
    for idx in range(5):
        pair = assemble_hamiltonians(lap, sample_potential(dist, box, 0, idx), box)
        ev = eigvals_symmetric(pair.h_plus)
        assert ev[0] >= -2 * d - 1e-9 and ev[-1] <= 2 * d + 1 + 1e-9
        ev = eigvals_symmetric(pair.h_minus)
        assert ev[0] >= -2 * d - 1 - 1e-9 and ev[-1] <= 2 * d + 1e-9


def test_spectrum_fills_bands_for_large_boxes():
    # extreme eigenvalues approach the almost-sure edges from inside
    dist = PotentialDistribution.uniform(0, 1)
    gaps = []
    for L in (50, 400):
        box = BoxSpec(1, L)
        lap = build_laplacian(box)
        lows, highs = [], []
        for idx in range(20):
            ev = eigvals_symmetric(assemble_hamiltonians(lap, sample_potential(dist, box, 1, idx)).h_plus)
            lows.append(ev[0])
            highs.append(ev[-1])
        gaps.append((min(lows) + 2, 3 - max(highs)))
    assert all(g >= 0 for pair in gaps for g in pair)
    assert gaps[1][0] < gaps[0][0] and gaps[1][1] < gaps[0][1]
