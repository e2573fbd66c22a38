import numpy as np
import pytest

from msa_control import (
    ControlDomain,
    ControlProcess,
    LQSpec,
    MSAConfig,
    TimeGrid,
    build_oracle,
    evaluate_cost,
    generate_brownian,
    get_lq,
    lq_embed,
    lq_optimal_control,
    lyapunov_solve,
    prepare_state,
    rate_experiment,
    remainder_experiment,
    sequence_lemma_check,
    simulate_state,
    variational_simulate,
)
from msa_control.hamiltonian import GapProcess

from conftest import scalar_spec


def make_lq(**over):
    base = dict(
        n=1, d=1, k=1, T=1.0, x0=[1.0],
        b1=lambda t: np.array([[0.0]]),
        b2=lambda t: np.array([0.0]),
        G=lambda t: np.array([[0.0]]),
        Gamma=np.array([[1.0]]),
        sigma_u=lambda t, u: np.zeros((u.shape[0], 1, 1)),
        g=lambda t, u: np.zeros(u.shape[0]),
        domain=ControlDomain(np.array([[-1.0], [0.0], [1.0]])),
    )
    base.update(over)
    return LQSpec(**base)


class TestLyapunovSolve:
    def test_zero_data(self):
        lq = make_lq(Gamma=np.array([[0.0]]))
        K, k, c = lyapunov_solve(lq, TimeGrid(T=1.0, depth=4))
        assert np.all(K == 0.0) and np.all(k == 0.0) and np.all(c == 0.0)

    def test_linear_profile(self):
        # G = 1, Gamma = 0, b1 = 0: K(t) = T - t
        lq = make_lq(G=lambda t: np.array([[1.0]]), Gamma=np.array([[0.0]]))
        grid = TimeGrid(T=1.0, depth=4)
        K, _, _ = lyapunov_solve(lq, grid)
        target = 1.0 - grid.times
        assert np.max(np.abs(K[:, 0, 0] - target)) <= 1e-10

    def test_exponential_profile(self):
        # b1 = beta: K(t) = exp(2 beta (T - t))
        beta = 0.7
        lq = make_lq(b1=lambda t: np.array([[beta]]))
        grid = TimeGrid(T=1.0, depth=8)
        K, _, _ = lyapunov_solve(lq, grid)
        target = np.exp(2 * beta * (1.0 - grid.times))
        assert np.max(np.abs(K[:, 0, 0] - target)) <= 1e-8


class TestLQOptimalControl:
    def test_no_diffusion_cost_minimizes_g(self):
        lq = make_lq(g=lambda t, u: (u[:, 0] - 0.4) ** 2)
        grid = TimeGrid(T=1.0, depth=3)
        u_star, _ = lq_optimal_control(lq, grid, lyapunov_solve(lq, grid))
        assert np.all(u_star == 1)  # u = 0 is the closest domain point to 0.4

    def test_quadratic_diffusion_cost(self):
        # sigma_u = u, G = 1, Gamma = 1: K > 0, so u* = 0 and
        # J* = K(0) x0^2 / 2 with K(t) = 1 + (T - t)
        lq = make_lq(
            G=lambda t: np.array([[1.0]]),
            sigma_u=lambda t, u: u[:, :, None],
        )
        grid = TimeGrid(T=1.0, depth=5)
        u_star, J_star = lq_optimal_control(lq, grid, lyapunov_solve(lq, grid))
        assert np.all(u_star == 1)
        assert J_star == pytest.approx(1.0, abs=1e-8)

    def test_registry_mc_cross_check(self):
        lq = get_lq("lq-scalar")
        spec = lq_embed(lq)
        grid = TimeGrid(T=1.0, depth=6)
        M = 10_000
        oracle = build_oracle(lq, grid)
        W = generate_brownian(grid, M, 1, 0)
        u = ControlProcess.deterministic(oracle.u_star, M, spec.domain.size)
        X = simulate_state(spec, grid, W, u)
        J_mc = evaluate_cost(spec, grid, X, u)
        tol = 3.0 * (grid.dt + 1.0 / np.sqrt(M))
        assert abs(J_mc - oracle.J_star) <= tol * abs(oracle.J_star)


class TestRateExperiment:
    def test_optimal_initializer_sits_at_zero(self):
        lq = get_lq("lq-scalar")
        config = MSAConfig(M=1000, depth=5, N_max=5)
        grid = TimeGrid(T=1.0, depth=5)
        oracle = build_oracle(lq, grid)
        u0 = ControlProcess.deterministic(oracle.u_star, 1000, lq.domain.size)
        result = rate_experiment(lq, config, u0)
        assert abs(result.rows[0][1]) <= 1e-10
        assert result.run.termination in ("converged", "exhausted")

    def test_descent_from_worst_constant(self):
        lq = get_lq("lq-scalar")
        result = rate_experiment(lq, MSAConfig(M=2000, depth=6, N_max=6))
        a = [row[1] for row in result.rows]
        assert a[0] > 0
        assert all(y <= x + 1e-12 for x, y in zip(a, a[1:]))
        assert abs(result.J_star_saa - result.J_star_analytic) <= 0.05 * abs(
            result.J_star_analytic
        )


class TestRemainderExperiment:
    def test_lq_expansion_is_exact(self):
        # quadratic value function: the second-order expansion has no remainder
        spec = lq_embed(get_lq("lq-scalar"))
        config = MSAConfig(M=5000, depth=6, N_max=6)
        eps_list = [0.25, 0.125]
        res = remainder_experiment(spec, spec.domain.size - 1, 0.5, eps_list, config)
        for _, R, _ in res.rows:
            assert abs(R) <= 1e-10

    def test_misaligned_interval_rejected(self):
        from msa_control.oracle import _interval_steps

        grid = TimeGrid(T=1.0, depth=3)
        with pytest.raises(ValueError):
            _interval_steps(0.5, 0.3, grid)


class TestVariationalSimulate:
    def test_no_spike_zero_defect(self):
        spec = lq_embed(get_lq("lq-scalar"))
        grid = TimeGrid(T=1.0, depth=4)
        M = 50
        W = generate_brownian(grid, M, 1, 0)
        u = ControlProcess.constant(3, M, grid.steps, spec.domain.size)
        gaps = GapProcess(
            np.zeros((M, grid.steps)),
            np.full((M, grid.steps), 3, dtype=np.int64),
        )
        ens, e = variational_simulate(spec, grid, W, u, gaps, (4, 8))
        assert np.all(ens.X1 == 0.0) and np.all(ens.X2 == 0.0)
        assert e == 0.0

    def test_constant_diffusion_switch_is_brownian(self):
        # sigma(u) = u, b = 0, base u = 0 spiked to u = 1:
        # X1 accumulates exactly the Brownian increments of the interval
        spec = scalar_spec(sigma=lambda t, x, u: u)
        grid = TimeGrid(T=1.0, depth=4)
        M = 20
        W = generate_brownian(grid, M, 1, 1)
        u = ControlProcess.constant(1, M, grid.steps, 3)
        gaps = GapProcess(
            np.zeros((M, grid.steps)),
            np.full((M, grid.steps), 2, dtype=np.int64),
        )
        lo, hi = 4, 8
        ens, e = variational_simulate(spec, grid, W, u, gaps, (lo, hi))
        inc = W.increments[:, :, 0]
        expect = np.zeros((M, grid.steps + 1))
        run = np.cumsum(inc[:, lo:hi], axis=1)
        expect[:, lo + 1 : hi + 1] = run
        expect[:, hi + 1 :] = run[:, -1:]
        np.testing.assert_allclose(ens.X1[:, :, 0], expect, atol=1e-14)

    def test_missing_second_derivatives_rejected(self):
        import dataclasses

        from msa_control import ProblemSpec

        spec = lq_embed(get_lq("lq-scalar"))
        bad_coeffs = dataclasses.replace(spec.coefficients, b_xx=None)
        bad = ProblemSpec(
            n=1, d=1, k=1, T=1.0, x0=[1.0], coefficients=bad_coeffs, domain=spec.domain
        )
        grid = TimeGrid(T=1.0, depth=3)
        W = generate_brownian(grid, 5, 1, 0)
        u = ControlProcess.constant(0, 5, grid.steps, bad.domain.size)
        gaps = GapProcess(np.zeros((5, 8)), np.zeros((5, 8), dtype=np.int64))
        with pytest.raises(ValueError, match="b_xx"):
            variational_simulate(bad, grid, W, u, gaps, (0, 4))


class TestSequenceLemma:
    def test_zero_start(self):
        res = sequence_lemma_check(0.0, 1.0, 1000)
        assert res.ok and res.max_b == 0.0

    def test_moderate_start_bounded_by_one(self):
        res = sequence_lemma_check(0.5, 1.0, 10_000)
        assert res.ok and res.max_b <= 1.0

    def test_one_step_collapse(self):
        # a1 = 1, A = 1: a2 = 1 - 1 = 0 and stays there
        res = sequence_lemma_check(1.0, 1.0, 100)
        assert res.ok and res.final_a == 0.0

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            sequence_lemma_check(-0.1, 1.0, 10)
        with pytest.raises(ValueError):
            sequence_lemma_check(0.1, 0.0, 10)
