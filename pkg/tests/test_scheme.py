import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jumptrunc.errors import ConfigurationError, DomainError
from jumptrunc.model import SdeProblem, geometric_problem, get_preset, power_policy, state_norm
from jumptrunc.noise import NoiseGrid, generate, generate_batch, pairwise_block_sum
from jumptrunc.scheme import (
    Record,
    SchemeConfig,
    SchemeKind,
    exact_geometric,
    simulate_batch,
    simulate_exact_geometric,
    simulate_path,
    step,
)

zero = lambda x: np.zeros_like(x)


def zero_grid(level, intensity=0.0, horizon=1.0, m=1):
    n = 2**level
    return NoiseGrid(horizon, level, intensity, np.zeros((m, n)), np.zeros(n, dtype=np.int64), (0, 0))


class TestStep:
    def test_zero_coefficients(self):
        x = np.array([1.7, -2.0])
        g0 = lambda x: np.zeros(x.shape + (1,))
        assert np.array_equal(step(x, zero, g0, zero, 0.1, np.array([0.3]), 4), x)

    def test_pure_drift(self):
        f = lambda x: -x
        g0 = lambda x: np.zeros(x.shape + (1,))
        assert step(np.array([1.0]), f, g0, zero, 0.5, np.zeros(1), 0)[0] == 0.5

    def test_jump_count(self):
        g0 = lambda x: np.zeros(x.shape + (1,))
        h = lambda x: np.ones_like(x)
        assert step(np.array([1.0]), zero, g0, h, 0.37, np.zeros(1), 2)[0] == 3.0

    def test_matrix_diffusion(self):
        g = lambda x: np.array([[1.0, 2.0], [0.0, 3.0]]) * x[..., None]
        out = step(np.array([1.0, 2.0]), zero, g, zero, 0.1, np.array([0.5, -1.0]), 0)
        np.testing.assert_allclose(out, [1.0 + 0.5 - 2.0, 2.0 - 6.0])

    def test_non_finite_propagates(self):
        f = lambda x: x**400
        g0 = lambda x: np.zeros(x.shape + (1,))
        assert not np.isfinite(step(np.array([10.0]), f, g0, zero, 0.5, np.zeros(1), 0)).all()

    def test_bad_inputs(self):
        g0 = lambda x: np.zeros(x.shape + (1,))
        with pytest.raises(DomainError):
            step(np.array([1.0]), zero, g0, zero, 0.0, np.zeros(1), 0)
        with pytest.raises(DomainError):
            step(np.array([1.0]), zero, g0, zero, 0.1, np.zeros(1), -1)


class TestSimulatePath:
    def test_example_5_1_zero_noise(self):
        problem, policy = get_preset("example-5.1")
        # T=1, level 2 gives D=1/4; clamp radius (1/4)^(-1/20) > 1
        cfg = SchemeConfig(SchemeKind.TRUNCATED_FULL, 2, policy, Record.FULL_PATH)
        res = simulate_path(problem, cfg, zero_grid(2, problem.intensity))
        assert res.states[1, 0] == 0.75
        x = 1.0
        for j in range(4):
            x = x - min(x, policy.radius(0.25)) ** 5 * 0.25
            assert res.states[j + 1, 0] == pytest.approx(x, rel=1e-15)
        assert res.states.shape == (5, 1) and res.states[0, 0] == 1.0

    def test_plain_em_exponential(self):
        problem = SdeProblem.scalar(lambda x: x, zero, zero, 0.0, 1.0)
        res = simulate_path(problem, SchemeConfig(SchemeKind.PLAIN, 10), zero_grid(10))
        assert res.terminal_state[0] == pytest.approx((1 + 2.0**-10) ** 1024, rel=1e-12)
        assert abs(res.terminal_state[0] / math.e - 1) <= 0.002

    def test_deterministic(self):
        problem, policy = get_preset("example-5.2")
        grid = generate(42, 3, 1.0, 8, problem.intensity)
        cfg = SchemeConfig(SchemeKind.TRUNCATED_PARTIAL, 6, policy, Record.SECOND_MOMENT_SERIES)
        a, b = simulate_path(problem, cfg, grid), simulate_path(problem, cfg, grid)
        assert np.array_equal(a.terminal_state, b.terminal_state)
        assert np.array_equal(a.second_moment, b.second_moment)
        assert a.truncation_hits == b.truncation_hits

    def test_level_mismatch(self):
        problem, policy = get_preset("example-5.1")
        grid = generate(0, 0, 1.0, 4, problem.intensity)
        with pytest.raises(DomainError):
            simulate_path(problem, SchemeConfig(SchemeKind.TRUNCATED_FULL, 5, policy), grid)
        with pytest.raises(DomainError):
            simulate_path(problem, SchemeConfig(SchemeKind.TRUNCATED_FULL, 4, policy), generate(0, 0, 1.0, 4, 2.0))

    def test_config_validation(self):
        _, policy = get_preset("example-5.1")
        with pytest.raises(ConfigurationError):
            SchemeConfig(SchemeKind.TRUNCATED_FULL, 4)
        with pytest.raises(DomainError):
            SchemeConfig(SchemeKind.TRUNCATED_FULL, 0, policy).step_size(1.0)

    def test_plain_em_blows_up(self):
        problem, _ = get_preset("example-5.1")
        grid = NoiseGrid(4.0, 3, problem.intensity, np.zeros((1, 8)), np.array([0, 0, 5, 0, 0, 0, 0, 0]), (0, 0))
        res = simulate_path(problem, SchemeConfig(SchemeKind.PLAIN, 3), grid)
        assert res.blown_up and res.first_bad_index is not None
        assert not np.isfinite(res.terminal_state).all()


class TestTruncationInvariants:
    def _instrumented(self, problem, log):
        def wrap(fn):
            def inner(x):
                log.append(state_norm(np.asarray(x)).max())
                return fn(x)
            return inner

        dec = problem.decomposition
        decomposition = None
        if dec is not None:
            decomposition = (dec.F1, wrap(dec.F), dec.G1, wrap(dec.G))
        return SdeProblem(
            f=wrap(problem.f), g=wrap(problem.g), h=wrap(problem.h), intensity=problem.intensity,
            x0=problem.x0, decomposition=None if dec is None else type(dec)(*decomposition),
        )

    def test_full_mode_never_evaluates_outside_ball(self):
        problem, policy = get_preset("example-5.1")
        calls = []
        inst = self._instrumented(problem, calls)
        level = 3
        dB, dN = generate_batch(1, range(64), 4.0, level, problem.intensity)
        cfg = SchemeConfig(SchemeKind.TRUNCATED_FULL, level, policy)
        res = simulate_batch(inst, cfg, dB * 20, dN, 4.0)
        assert res.truncation_hits.sum() > 0
        assert max(calls) <= policy.radius(0.5) + 1e-12

    def test_partial_mode_never_evaluates_F_G_outside_ball(self):
        problem, policy = get_preset("example-5.3")
        calls = []
        # only F and G are instrumented; F1, G1 and h see unclamped states by design
        dec = self._instrumented(problem, calls).decomposition
        level = 7
        dB, dN = generate_batch(2, range(32), 1.0, level, problem.intensity)
        cfg = SchemeConfig(SchemeKind.TRUNCATED_PARTIAL, level, policy)
        inst = SdeProblem(f=problem.f, g=problem.g, h=problem.h, intensity=problem.intensity,
                          x0=problem.x0, decomposition=dec)
        res = simulate_batch(inst, cfg, dB, dN, 1.0)
        assert res.truncation_hits.sum() > 0 and calls
        assert max(calls) <= policy.radius(2.0**-7) + 1e-12

    def test_full_growth_bound(self):
        problem, policy = get_preset("example-5.1")
        level, T = 6, 4.0
        delta = T * 2.0**-level
        phi = policy.phi(delta)
        dB, dN = generate_batch(7, range(128), T, level, problem.intensity)
        dB = dB * 5
        res = simulate_batch(problem, SchemeConfig(SchemeKind.TRUNCATED_FULL, level, policy, Record.FULL_PATH), dB, dN, T)
        norms = np.abs(res.states[..., 0])
        lhs = norms[:, 1:]
        rhs = norms[:, :-1] + phi * (delta + np.abs(dB[:, 0, :]) + dN)
        assert np.all(lhs <= rhs * (1 + 1e-12))

    def test_partial_with_zero_nonlinear_part_is_plain_em(self):
        problem = geometric_problem(0.05, 0.2, 0.5, 1.0, 1.0)
        policy = power_policy(5, 0.25)
        level = 8
        dB, dN = generate_batch(4, range(40), 1.0, level, 1.0)
        plain = simulate_batch(problem, SchemeConfig(SchemeKind.PLAIN, level), dB * 40, dN * 3, 1.0)
        part = simulate_batch(problem, SchemeConfig(SchemeKind.TRUNCATED_PARTIAL, level, policy), dB * 40, dN * 3, 1.0)
        assert np.array_equal(plain.terminal, part.terminal)

    def test_no_truncation_inside_ball(self):
        problem, policy = get_preset("geometric-jump")
        res = simulate_path(problem, SchemeConfig(SchemeKind.TRUNCATED_FULL, 6, policy), zero_grid(6, problem.intensity))
        assert res.truncation_hits == 0
        assert res.terminal_state[0] == pytest.approx((1 + 0.05 / 64) ** 64, rel=1e-14)


@settings(max_examples=1000, deadline=None)
@given(seed=st.integers(0, 2**32), level=st.integers(1, 6), batch=st.integers(1, 5))
def test_batch_equals_per_path(seed, level, batch):
    problem, policy = get_preset("example-5.2")
    cfg = SchemeConfig(SchemeKind.TRUNCATED_PARTIAL, level, policy)
    idx = list(range(batch))
    dB, dN = generate_batch(seed, idx, 1.0, level, problem.intensity)
    res = simulate_batch(problem, cfg, dB, dN, 1.0)
    for i in idx:
        single = simulate_path(problem, cfg, generate(seed, i, 1.0, level, problem.intensity))
        assert np.array_equal(single.terminal_state, res.terminal[i])


class TestExactGeometric:
    def test_deterministic_exponential(self):
        out = exact_geometric(0.3, 0.0, 0.0, np.array([2.0]), 1.5, 0.7, 4)
        assert out[0] == pytest.approx(2.0 * math.exp(0.45), rel=1e-15)

    def test_pure_jumps(self):
        grid = NoiseGrid(1.0, 2, 1.0, np.zeros((1, 4)), np.array([1, 0, 2, 0]), (0, 0))
        assert simulate_exact_geometric(0.0, 0.0, 1.0, grid, 1.5)[0] == 12.0

    def test_zero_noise(self):
        out = simulate_exact_geometric(0.1, 0.2, -0.1, zero_grid(3, 1.0, horizon=2.0), 3.0)
        assert out[0] == pytest.approx(3.0 * math.exp(0.08 * 2.0), rel=1e-15)

    def test_jump_domain(self):
        with pytest.raises(DomainError):
            exact_geometric(0.0, 0.0, -1.0, np.array([1.0]), 1.0, 0.0, 1)

    def test_uses_total_brownian(self):
        grid = generate(3, 0, 1.0, 7, 1.0)
        total = pairwise_block_sum(grid.brownian, 0)[0, 0]
        expect = 0.5 * math.exp((0.05 - 0.02) + 0.2 * total) * 1.5**grid.total_jumps
        assert simulate_exact_geometric(0.05, 0.2, 0.5, grid, 0.5)[0] == pytest.approx(expect, rel=1e-14)
