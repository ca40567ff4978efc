import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jumptrunc.errors import DomainError, ResourceError
from jumptrunc.noise import (
    NoiseGrid,
    coarsen,
    dump_csv,
    generate,
    generate_batch,
    increment_moment_test,
    pairwise_block_sum,
    path_generator,
    poisson_inversion,
)


def test_zero_intensity_has_no_jumps():
    g = generate(1, 0, 1.0, 10, 0.0)
    assert g.poisson.sum() == 0 and g.poisson.dtype.kind == "i"


def test_deterministic_and_order_independent():
    a = generate(42, 7, 1.0, 8, 0.5, noise_dim=2)
    generate(42, 3, 1.0, 8, 0.5, noise_dim=2)
    b = generate(42, 7, 1.0, 8, 0.5, noise_dim=2)
    assert np.array_equal(a.brownian, b.brownian) and np.array_equal(a.poisson, b.poisson)
    assert a.brownian.shape == (2, 256)
    assert a.seed_material == (42, 7)


def test_streams_differ_between_paths_and_seeds():
    a = generate(42, 0, 1.0, 6, 0.5)
    assert not np.array_equal(a.brownian, generate(42, 1, 1.0, 6, 0.5).brownian)
    assert not np.array_equal(a.brownian, generate(43, 0, 1.0, 6, 0.5).brownian)


def test_batch_matches_single():
    dB, dN = generate_batch(5, [3, 1, 4], 2.0, 5, 1.0)
    for row, i in enumerate([3, 1, 4]):
        g = generate(5, i, 2.0, 5, 1.0)
        assert np.array_equal(dB[row], g.brownian) and np.array_equal(dN[row], g.poisson)


def test_memory_guard():
    with pytest.raises(ResourceError):
        generate(1, 0, 1.0, 27, 0.5)


def test_total_jump_mean():
    # E N(T) = lam T = 0.5; sd of the mean over 1e4 paths is sqrt(0.5/1e4) ~ 0.0071
    totals = [generate(2024, i, 1.0, 10, 0.5).total_jumps for i in range(10_000)]
    assert abs(np.mean(totals) - 0.5) <= 0.03


class TestCoarsen:
    def test_identity_at_fine_level(self):
        g = generate(0, 0, 1.0, 6, 2.0)
        dB, dN = coarsen(g, 6)
        assert np.array_equal(dB, g.brownian) and np.array_equal(dN, g.poisson)

    def test_level_zero_is_total(self):
        g = generate(0, 0, 1.0, 6, 2.0)
        dB, dN = coarsen(g, 0)
        assert dN.tolist() == [g.total_jumps]
        assert dB[0, 0] == pytest.approx(g.brownian.sum(), abs=1e-13)

    def test_integer_block_sums(self):
        g = NoiseGrid(1.0, 2, 1.0, np.zeros((1, 4)), np.array([1, 0, 2, 0]), (0, 0))
        assert coarsen(g, 1)[1].tolist() == [1, 2]

    def test_level_too_fine(self):
        with pytest.raises(DomainError):
            coarsen(generate(0, 0, 1.0, 4, 1.0), 5)

    @settings(max_examples=1000, deadline=None)
    @given(seed=st.integers(0, 2**63), K=st.integers(1, 9), data=st.data())
    def test_associativity(self, seed, K, data):
        k = data.draw(st.integers(1, K))
        g = generate(seed, 0, 1.0, K, 3.0)
        dB_k, dN_k = coarsen(g, k)
        dB_direct, dN_direct = coarsen(g, k - 1)
        assert np.array_equal(dN_k[0::2] + dN_k[1::2], dN_direct)
        np.testing.assert_allclose(dB_k[:, 0::2] + dB_k[:, 1::2], dB_direct, rtol=1e-12, atol=0)
        assert np.all(g.poisson >= 0)


def test_pairwise_block_sum_requires_power_of_two():
    with pytest.raises(DomainError):
        pairwise_block_sum(np.ones(6), 1)


def test_brownian_variance():
    K = 17
    g = generate(11, 0, 1.0, K, 0.0)
    n = g.brownian.size
    var = np.var(g.brownian)
    dt = g.fine_step
    assert abs(var / dt - 1) <= 5 / math.sqrt(2 * n)


class TestIncrementMoments:
    def test_mean_and_second_moment(self):
        rep = increment_moment_test(0.5, 0.01, 10**6, seed=1)
        assert rep.mean_expected == pytest.approx(0.005)
        assert rep.second_expected == pytest.approx(0.005 * 1.005)
        assert rep.passed

    def test_zero_intensity(self):
        rep = increment_moment_test(0.0, 0.01, 10**4)
        assert rep.mean == 0 and rep.second == 0 and rep.passed

    def test_poisson_one(self):
        rep = increment_moment_test(2.0, 0.5, 10**6, seed=3)
        assert rep.mean_expected == 1.0
        assert abs(rep.mean - 1.0) <= 5 * rep.mean_se
        assert rep.passed

    def test_needs_samples(self):
        with pytest.raises(DomainError):
            increment_moment_test(1.0, 0.1, 100)


def test_poisson_inversion_cutoff():
    with pytest.raises(DomainError):
        poisson_inversion(path_generator(0, 0), 11.0, 10)


def test_poisson_inversion_pmf():
    # frequencies vs the Poisson(3) pmf at 5 sigma
    n = 200_000
    counts = poisson_inversion(path_generator(9, 0), 3.0, n)
    for k in range(8):
        p = math.exp(-3) * 3**k / math.factorial(k)
        assert abs(np.mean(counts == k) - p) <= 5 * math.sqrt(p * (1 - p) / n)


def test_dump_csv(tmp_path):
    g = generate(1, 2, 1.0, 3, 4.0, noise_dim=2)
    out = tmp_path / "noise.csv"
    dump_csv(g, out)
    lines = out.read_text().splitlines()
    assert lines[0] == "index,dB0,dB1,dN"
    assert len(lines) == 9
    row = lines[5].split(",")
    assert int(row[0]) == 4 and float(row[1]) == g.brownian[0, 4] and int(row[3]) == g.poisson[4]
