"""Tests for the exponential-moment kernel construction and the jump-factor simulator."""

import numpy as np
import pytest

from multicurve.momentkernel import (
    FeasibilityReport,
    JumpKernel,
    KernelFamily,
    KernelInfeasible,
    MomentTargets,
    default_atom_grid,
    feasibility_check,
    kernel_moment_residual,
    moment_columns,
    simulate_yperp,
    solve_jump_kernel,
)


def exponent_moments(atoms, weights, u):
    """Independent plain-loop oracle for integral (e^{u xi} - 1) K(dxi)."""
    out = []
    for ui in u:
        out.append(sum(w * (np.exp(ui * x) - 1.0) for x, w in zip(atoms, weights)))
    return np.array(out)


@pytest.fixture
def synthetic_targets():
    """Targets synthesized from a known 3-atom kernel, m=3 loadings."""
    atoms = np.array([0.3, 0.9, 2.0])
    weights = np.array([0.5, 0.2, 0.05])
    u = np.array([0.5, 1.0, 1.5])
    p = exponent_moments(atoms, weights, u)
    return MomentTargets(u=u, p=p, mass_cap=100.0), atoms, weights


class TestMomentTargets:
    def test_u_must_increase(self):
        with pytest.raises(ValueError):
            MomentTargets(u=[1.0, 0.5], p=[0.1, 0.1], mass_cap=1.0)

    def test_u_must_be_positive(self):
        with pytest.raises(ValueError):
            MomentTargets(u=[0.0, 0.5], p=[0.1, 0.1], mass_cap=1.0)

    def test_lengths_must_match(self):
        with pytest.raises(ValueError):
            MomentTargets(u=[0.5, 1.0], p=[0.1], mass_cap=1.0)

    def test_cap_and_floor_signs(self):
        with pytest.raises(ValueError):
            MomentTargets(u=[1.0], p=[0.1], mass_cap=0.0)
        with pytest.raises(ValueError):
            MomentTargets(u=[1.0], p=[0.1], mass_cap=1.0, floor=-0.1)


class TestAtomGrid:
    def test_positive_only_without_floor(self):
        tg = MomentTargets(u=[0.5, 1.0], p=[0.01, 0.03], mass_cap=10.0)
        grid = default_atom_grid(tg, size=100)
        assert len(grid) == 100
        assert np.all(grid > 0)
        assert grid[-1] == pytest.approx(5.0 / 0.5)

    def test_negative_side_reaches_floor(self):
        tg = MomentTargets(u=[0.5], p=[0.01], mass_cap=10.0, floor=0.4)
        grid = default_atom_grid(tg, size=100)
        assert np.min(grid) == pytest.approx(-0.4)
        assert np.all(grid >= -0.4)
        assert np.all(grid != 0.0)

    def test_columns_shape(self):
        tg = MomentTargets(u=[0.5, 1.0], p=[0.01, 0.03], mass_cap=10.0)
        grid = default_atom_grid(tg, size=50)
        G = moment_columns(tg, grid)
        assert G.shape == (3, 50)
        # last row is the integrability weight, >= 1 everywhere
        assert np.all(G[-1] >= 1.0)


class TestSolve:
    def test_synthesized_kernel_recovered(self, synthetic_targets):
        tg, atoms, weights = synthetic_targets
        kernel = solve_jump_kernel(tg)
        resid = kernel_moment_residual(kernel)
        assert resid.shape == (4,)
        assert np.max(np.abs(resid)) <= 1e-8
        # oracle recomputation of the exponent moments
        achieved = exponent_moments(kernel.atoms, kernel.weights, tg.u)
        np.testing.assert_allclose(achieved, tg.p, atol=1e-8)

    def test_vertex_atom_counts(self, synthetic_targets):
        tg, _, _ = synthetic_targets
        # m equality rows plus the pinned integrability row: at most m+1 atoms
        k_total = solve_jump_kernel(tg, objective="min-total-mass")
        assert len(k_total.atoms) <= len(tg.u) + 1
        k_extra = solve_jump_kernel(tg, objective="min-g-extra-mass")
        assert len(k_extra.atoms) <= len(tg.u) + 1

    def test_min_extra_mass_is_minimal(self, synthetic_targets):
        tg, _, _ = synthetic_targets
        k_extra = solve_jump_kernel(tg, objective="min-g-extra-mass")
        k_total = solve_jump_kernel(tg, objective="min-total-mass")
        assert k_extra.extra_mass <= k_total.extra_mass + 1e-12
        assert k_total.targets.p_extra == pytest.approx(k_total.extra_mass)

    def test_deterministic(self, synthetic_targets):
        tg, _, _ = synthetic_targets
        a = solve_jump_kernel(tg)
        b = solve_jump_kernel(tg)
        np.testing.assert_array_equal(a.atoms, b.atoms)
        np.testing.assert_array_equal(a.weights, b.weights)

    def test_pinned_extra_mass(self, synthetic_targets):
        tg, _, _ = synthetic_targets
        base = solve_jump_kernel(tg, objective="min-g-extra-mass")
        pinned = MomentTargets(tg.u, tg.p, tg.mass_cap, p_extra=2.0 * base.extra_mass)
        kernel = solve_jump_kernel(pinned)
        assert kernel.extra_mass == pytest.approx(2.0 * base.extra_mass)

    def test_unreachable_pinned_extra_mass(self, synthetic_targets):
        tg, _, _ = synthetic_targets
        base = solve_jump_kernel(tg, objective="min-g-extra-mass")
        pinned = MomentTargets(tg.u, tg.p, tg.mass_cap, p_extra=0.5 * base.extra_mass)
        with pytest.raises(KernelInfeasible):
            solve_jump_kernel(pinned)

    def test_mass_cap_violation(self, synthetic_targets):
        tg, _, _ = synthetic_targets
        capped = MomentTargets(tg.u, tg.p, mass_cap=1e-6)
        with pytest.raises(KernelInfeasible, match="cap"):
            solve_jump_kernel(capped)

    def test_weights_positive_after_pruning(self, synthetic_targets):
        tg, _, _ = synthetic_targets
        kernel = solve_jump_kernel(tg)
        assert np.all(kernel.weights > 1e-14)

    def test_exponent_method_matches_targets(self, synthetic_targets):
        tg, _, _ = synthetic_targets
        kernel = solve_jump_kernel(tg)
        np.testing.assert_allclose(kernel.exponent(tg.u), tg.p, atol=1e-8)
        assert kernel.exponent(float(tg.u[0])) == pytest.approx(tg.p[0], abs=1e-8)


class TestFeasibility:
    def test_negative_target_at_zero_floor_certified(self):
        tg = MomentTargets(u=[0.5], p=[-0.01], mass_cap=10.0, floor=0.0)
        rep = feasibility_check(tg)
        assert isinstance(rep, FeasibilityReport)
        assert not rep.feasible
        z = rep.dual_ray
        assert z is not None
        G = moment_columns(tg, rep.atoms)[:-1]
        # Farkas certificate: z.G <= 0 on every atom but z.p > 0
        assert np.max(z @ G) <= 1e-10
        assert float(z @ tg.p) > 1e-12

    def test_negative_target_with_floor_feasible(self):
        tg = MomentTargets(u=[0.5], p=[-0.01], mass_cap=10.0, floor=0.5)
        rep = feasibility_check(tg)
        assert rep.feasible
        kernel = solve_jump_kernel(tg)
        assert np.min(kernel.atoms) >= -0.5
        assert kernel.exponent(0.5) == pytest.approx(-0.01, abs=1e-8)

    def test_two_moment_cone_boundary(self):
        # g_2/g_1 >= u_2/u_1 pointwise on xi > 0, so p_2 < (u_2/u_1) p_1 is
        # impossible without negative atoms
        u = np.array([0.5, 1.0])
        bad = MomentTargets(u=u, p=[0.01, 0.015], mass_cap=10.0, floor=0.0)
        rep = feasibility_check(bad)
        assert not rep.feasible
        assert rep.dual_ray is not None
        with pytest.raises(KernelInfeasible):
            solve_jump_kernel(bad)

    def test_two_moment_interior_feasible(self):
        u = np.array([0.5, 1.0])
        good = MomentTargets(u=u, p=[0.01, 0.06], mass_cap=10.0, floor=0.0)
        assert feasibility_check(good).feasible
        kernel = solve_jump_kernel(good)
        assert np.max(np.abs(kernel_moment_residual(kernel))) <= 1e-8

    def test_infeasible_raise_carries_certificate(self):
        tg = MomentTargets(u=[0.5], p=[-0.01], mass_cap=10.0)
        with pytest.raises(KernelInfeasible) as exc:
            solve_jump_kernel(tg)
        assert exc.value.certificate is not None


class TestKernelFamily:
    def test_cache_returns_same_object(self):
        fam = KernelFamily([0.5, 1.0], mass_cap=10.0)
        p = np.array([0.004, 0.012])
        k1 = fam.solve_for(0.0, p)
        k2 = fam.solve_for(0.0, p)
        assert k1 is k2

    def test_floor_bucketing_is_conservative(self):
        fam = KernelFamily([0.5], mass_cap=10.0, floor_bucket=1 / 64)
        y = 0.03
        kernel = fam.solve_for(y, np.array([-0.005]))
        assert kernel.targets.floor <= y
        assert np.min(kernel.atoms) >= -y

    def test_solve_requires_p_fn(self):
        fam = KernelFamily([0.5], mass_cap=10.0)
        with pytest.raises(ValueError):
            fam.solve(0.0, 0.0)

    def test_solve_uses_p_fn(self):
        fam = KernelFamily([0.5], mass_cap=10.0, p_fn=lambda t: np.array([0.01 + 0.001 * t]))
        k0 = fam.solve(0.0, 0.0)
        k1 = fam.solve(1.0, 0.0)
        assert k0.exponent(0.5) == pytest.approx(0.010, abs=1e-8)
        assert k1.exponent(0.5) == pytest.approx(0.011, abs=1e-8)


class TestSimulateYperp:
    @pytest.fixture
    def family(self):
        return KernelFamily(
            [0.5, 1.0], mass_cap=10.0, p_fn=lambda t: np.array([0.02, 0.06])
        )

    def test_compensated_exponential_is_martingale(self, family):
        paths = simulate_yperp(family, horizon=1.0, dt=1 / 26, n_paths=3000, seed=17)
        for i, u in enumerate([0.5, 1.0]):
            mart = np.exp(u * paths.values[:, -1] - paths.compensators[:, i, -1])
            err = abs(mart.mean() - 1.0)
            se = mart.std(ddof=1) / np.sqrt(len(mart))
            assert err <= 3.0 * se

    def test_paths_nonnegative_and_nondecreasing(self, family):
        paths = simulate_yperp(family, horizon=1.0, dt=1 / 26, n_paths=500, seed=4)
        assert np.all(paths.values >= 0.0)
        assert np.all(np.diff(paths.values, axis=1) >= -1e-15)

    def test_compensator_matches_targets(self, family):
        # static targets: the compensator integral is p_i * t up to LP residual
        paths = simulate_yperp(family, horizon=1.0, dt=1 / 26, n_paths=50, seed=4)
        np.testing.assert_allclose(paths.compensators[:, 0, -1], 0.02, atol=1e-7)
        np.testing.assert_allclose(paths.compensators[:, 1, -1], 0.06, atol=1e-7)

    def test_deterministic_in_seed(self):
        # high-intensity targets so jumps actually occur at this path count
        fam = KernelFamily([0.5, 1.0], mass_cap=50.0, p_fn=lambda t: np.array([0.8, 2.4]))
        a = simulate_yperp(fam, horizon=0.5, dt=1 / 26, n_paths=40, seed=9)
        b = simulate_yperp(fam, horizon=0.5, dt=1 / 26, n_paths=40, seed=9)
        np.testing.assert_array_equal(a.values, b.values)
        assert a.jump_counts.sum() > 0
        c = simulate_yperp(fam, horizon=0.5, dt=1 / 26, n_paths=40, seed=10)
        assert not np.array_equal(a.values, c.values)

    def test_horizon_must_be_whole_steps(self, family):
        with pytest.raises(ValueError):
            simulate_yperp(family, horizon=0.51, dt=1 / 26, n_paths=10, seed=1)
