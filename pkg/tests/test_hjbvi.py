import dataclasses

import numpy as np
import pytest

from contract_solve import (
    Grid,
    NoConvergence,
    discretize,
    hamiltonian_max,
    howard_solve,
    residual_check,
)

from .helpers import golden_max, grid_argmax


def _joint_hamiltonian(params, x, dw, d2w):
    """Brute-force sup of the Hamiltonian, exploiting (r, a) separability."""
    diffusion = lambda a: 0.5 * (params.sigma * params.dh(a) / params.dphi(a)) ** 2
    _, best_a = grid_argmax(
        lambda a: diffusion(a) * d2w + params.h(a) * dw + params.phi(a), 0.0, 50.0, 200_001)
    _, best_r = grid_argmax(lambda r: -params.u(r) * dw - r, 0.0, 5.0, 200_001)
    return best_a + best_r + params.lam * x * dw


class TestHamiltonianMax:
    def test_nonnegative_slope_kills_rent(self, params):
        _, r, _ = hamiltonian_max(params, 0.5, 0.3, -1.0)
        assert r == 0.0
        _, r, _ = hamiltonian_max(params, 0.5, 0.0, -1.0)
        assert r == 0.0

    def test_rent_closed_form_at_unit_slope(self, params):
        _, r, _ = hamiltonian_max(params, 0.5, -1.0, -1.0)
        assert r == pytest.approx(4.0 ** (-4.0 / 3.0), rel=1e-12)
        r_oracle, _ = golden_max(lambda rr: params.u(rr) - rr, 0.0, 2.0)
        assert r == pytest.approx(r_oracle, abs=1e-8)

    def test_huge_curvature_kills_effort(self, params):
        _, _, a = hamiltonian_max(params, 0.5, -1.0, -1e6)
        assert a == 0.0

    def test_negative_state_rejected(self, params):
        with pytest.raises(ValueError):
            hamiltonian_max(params, -0.1, -1.0, -1.0)

    def test_value_against_grid_search(self, params):
        rng = np.random.default_rng(5)
        for _ in range(12):
            x = rng.uniform(0.0, 1.0)
            dw = rng.uniform(-3.0, 1.0)
            d2w = rng.uniform(-40.0, -0.1)
            val, _, _ = hamiltonian_max(params, x, dw, d2w)
            brute = _joint_hamiltonian(params, x, dw, d2w)
            assert val >= brute - 1e-9
            assert val == pytest.approx(brute, abs=1e-6)


class TestDiscretize:
    def test_zero_everything_is_zero(self, params, grid):
        w = np.zeros(grid.n)
        for i in (1, 700, grid.n - 2):
            assert discretize(params, grid, w, i, 0.0, 0.0) == 0.0

    def test_linear_w_has_no_curvature_term(self, params):
        # dyadic grid so the linear second difference cancels exactly
        g = Grid.make(x_max=1.0, n=2049)
        w = 2.0 - 3.0 * g.x
        r, a = 0.1, 1.5
        for i in (1, 1000, g.n - 2):
            b = params.lam * g.x[i] - float(params.u(r)) + float(params.h(a))
            if b >= 0.0:
                first = (w[i + 1] - w[i]) / g.dx
            else:
                first = (w[i] - w[i - 1]) / g.dx
            expected = b * first + float(params.phi(a)) - r - params.delta * w[i]
            assert discretize(params, g, w, i, r, a) == expected

    def test_boundary_nodes_rejected(self, params, grid):
        w = np.zeros(grid.n)
        for i in (0, grid.n - 1):
            with pytest.raises(ValueError):
                discretize(params, grid, w, i, 0.0, 0.0)

    def test_monotone_in_neighbors(self, params, grid):
        # raising a neighbour value never lowers the operator; raising the
        # node's own value never raises it. This is the M-matrix property
        # that makes the scheme monotone.
        rng = np.random.default_rng(11)
        w = rng.normal(size=grid.n)
        for _ in range(40):
            i = int(rng.integers(1, grid.n - 1))
            r = float(rng.uniform(0.0, 1.0))
            a = float(rng.uniform(0.0, 10.0))
            base = discretize(params, grid, w, i, r, a)
            for j, sign in ((i + 1, 1.0), (i - 1, 1.0), (i, -1.0)):
                bumped = w.copy()
                bumped[j] += 1e-6
                assert sign * (discretize(params, grid, bumped, i, r, a) - base) >= 0.0


class TestHowardSolve:
    def test_boundary_pin(self, sb):
        assert sb.w[0] == 0.0

    def test_stop_region_on_obstacle(self, params, sb):
        x_stop = sb.grid.x[sb.stop]
        w_stop = sb.w[sb.stop]
        assert np.max(np.abs(w_stop + x_stop**4)) <= 1e-9

    def test_value_above_obstacle(self, params, sb):
        assert np.all(sb.w >= -sb.grid.x**4 - 1e-9)

    def test_stop_region_is_upper_interval(self, sb):
        i0 = int(np.argmax(sb.stop[1:])) + 1
        assert sb.grid.x[i0] == sb.b_hat
        assert sb.stop[i0:].all()
        assert not sb.stop[1:i0].any()
        assert 0.0 < sb.b_hat < sb.grid.x_max

    def test_iteration_and_growth_bounds(self, sb):
        assert sb.iterations <= 200
        assert sb.k_growth <= 10.0
        bound = sb.k_growth + sb.grid.x**4
        assert np.all(np.abs(sb.w) <= bound + 1e-12)

    def test_effort_positive_in_continuation(self, sb):
        interior = ~sb.stop
        interior[0] = False
        assert np.all(sb.a_star[interior] > 0.0)

    def test_converged_residual(self, params, grid, sb):
        assert sb.residual <= 1e-8
        assert residual_check(sb, params, grid) <= 1e-8

    def test_rent_matches_closed_form_on_drift_consistent_nodes(self, params, sb):
        # recompute the rent from the converged slopes: r = (U')^{-1}(-1/w')
        # on the upwind side selected by the stored drift sign. Nodes where
        # that recomputation flips the drift sign are genuine pinch points
        # (the maximizer sits at the drift sign change); the stored policy
        # may keep the other branch there, so they are exempt but counted.
        g, w = sb.grid, sb.w
        x = g.x[1:-1]
        r, a = sb.r_star[1:-1], sb.a_star[1:-1]
        cont = ~sb.stop[1:-1]
        b = params.lam * x - params.u(r) + params.h(a)
        dw = np.where(b >= 0.0, (w[2:] - w[1:-1]) / g.dx, (w[1:-1] - w[:-2]) / g.dx)
        neg = dw < 0.0
        r_hat = np.where(neg, params.du_inv(np.where(neg, -1.0 / np.where(neg, dw, -1.0), 1.0)), 0.0)
        b_hat_drift = params.lam * x - params.u(r_hat) + params.h(a)
        sign_consistent = (b >= 0.0) == (b_hat_drift >= 0.0)
        dev = np.abs(r - r_hat) / np.maximum(1.0, np.abs(r_hat))
        assert np.max(dev[cont & sign_consistent]) <= 1e-10
        pinched = cont & (dev > 1e-10)
        assert int(pinched.sum()) <= 2
        assert not np.any(sign_consistent[pinched])

    def test_concave_on_continuation(self, sb):
        g, w = sb.grid, sb.w
        cont = ~sb.stop
        mask = cont[1:-1] & cont[2:] & cont[:-2]
        d2 = (w[2:] - 2.0 * w[1:-1] + w[:-2]) / g.dx**2
        assert np.max(d2[mask]) <= 1e-7 / g.dx**2

    def test_perturbed_value_flags_defect(self, params, grid, sb):
        w = sb.w.copy()
        w[400] += 1e-3  # interior continuation node
        assert residual_check(dataclasses.replace(sb, w=w), params, grid) >= 1e-4
        w = sb.w.copy()
        i = int(np.argmax(sb.stop[1:])) + 5
        w[i] += 1e-3  # stop node pushed off the obstacle
        assert residual_check(dataclasses.replace(sb, w=w), params, grid) >= 1e-4

    def test_no_convergence_raises(self, params):
        g = Grid.make(x_max=1.0, n=201)
        with pytest.raises(NoConvergence) as exc:
            howard_solve(params, g, max_iter=3)
        assert exc.value.iterations == 3
        assert exc.value.residual > 0.0


class TestRobustness:
    def test_noise_ordering(self, sb_for_sigma):
        lo, mid, hi = (sb_for_sigma(s) for s in (1.5, 1.85, 2.2))
        assert np.all(lo.w >= mid.w - 1e-6)
        assert np.all(mid.w >= hi.w - 1e-6)
        assert lo.b_hat > mid.b_hat > hi.b_hat

    def test_boundary_stable_under_refinement(self, params, sb):
        fine = howard_solve(params, Grid.make(x_max=1.0, n=4001))
        assert abs(fine.b_hat - sb.b_hat) <= 2.0 * sb.grid.dx

    def test_boundary_stable_under_domain_change(self, params, sb):
        # same spacing, smaller domain; the free boundary must not move
        clipped = howard_solve(params, Grid.make(x_max=0.8, n=1601))
        assert abs(clipped.b_hat - sb.b_hat) <= 2.0 * sb.grid.dx
