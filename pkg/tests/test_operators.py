import dataclasses

import numpy as np
import pytest

from jdimpulse import (
    Grid,
    LevyMeasure,
    ScalarField,
    SearchBox,
    apply_elliptic,
    apply_generator,
    apply_intervention,
    apply_jump,
    build_stencil,
)
from jdimpulse.operators import CoercivityError, candidate_displacements
from jdimpulse.presets import benchmark_1d, isotropic_2d, pure_diffusion_1d

from oracles import brute_force_intervention


@pytest.fixture(scope="module")
def diffusion_setup():
    model, _ = pure_diffusion_1d()  # A = 1, mu_bar = 0, r = 1
    grid = Grid([-6.0], [6.0], (193,))
    return model, grid


def test_elliptic_exact_on_quadratic(diffusion_setup):
    model, grid = diffusion_setup
    st = build_stencil(model, grid, "central")
    x = grid.nodes[:, 0]
    phi = ScalarField(grid, x**2)
    out = apply_elliptic(phi, model, st)
    interior = ~grid.boundary_mask
    assert np.allclose(out.flat[interior], -2.0 + x[interior] ** 2, atol=1e-11)


def test_elliptic_on_constant_gives_r_times_c(diffusion_setup):
    model, grid = diffusion_setup
    st = build_stencil(model, grid)
    phi = ScalarField(grid, np.full(grid.shape, 3.25))
    out = apply_elliptic(phi, model, st)
    assert np.allclose(out.values, 1.0 * 3.25, atol=1e-12)  # boundary rows included


def test_elliptic_drift_first_order_convergence():
    # L phi = -phi'' - 0.5 phi' with r = 0 on sin x: expect sin x - 0.5 cos x
    base, _ = pure_diffusion_1d()
    model = dataclasses.replace(
        base,
        drift=lambda x: np.full_like(np.atleast_2d(x), 0.5),
        discount=1e-300,  # r = 0 is rejected; use a vanishing rate
        c_mu=0.0,
    )
    errs = []
    for shape in (129, 257):
        grid = Grid([-3.0], [3.0], (shape,))
        st = build_stencil(model, grid, "upwind")
        x = grid.nodes[:, 0]
        phi = ScalarField(grid, np.sin(x))
        out = apply_elliptic(phi, model, st)
        interior = ~grid.boundary_mask
        exact = np.sin(x) - 0.5 * np.cos(x)
        errs.append(np.abs(out.flat - exact)[interior].max())
    assert errs[1] < 0.65 * errs[0]  # first-order upwind
    assert errs[0] < 0.05


def test_interior_application_matches_matrix(diffusion_setup):
    model, grid = diffusion_setup
    st = build_stencil(model, grid)
    rng = np.random.default_rng(0)
    phi = ScalarField(grid, rng.normal(size=grid.shape))
    out = apply_elliptic(phi, model, st)
    interior = ~grid.boundary_mask
    assert np.allclose(out.flat[interior], (st.matrix @ phi.flat)[interior], atol=1e-9)


def test_upwind_stencil_is_monotone_m_matrix():
    model, grid = benchmark_1d()  # mu_bar = -1: drift matters
    st = build_stencil(model, grid, "upwind")
    assert st.is_monotone
    assert st.row_sum_deviation < 1e-9


def test_central_stencil_not_monotone_at_high_peclet():
    base, _ = pure_diffusion_1d()
    model = dataclasses.replace(base, drift=lambda x: np.full_like(np.atleast_2d(x), 50.0),
                                c_mu=0.0)
    grid = Grid([-3.0], [3.0], (33,))  # Peclet = 50 * h / (2 A) >> 1
    st = build_stencil(model, grid, "central")
    assert not st.is_monotone
    assert build_stencil(model, grid, "upwind").is_monotone


def test_jump_vanishes_without_jumps(diffusion_setup):
    model, grid = diffusion_setup
    phi = ScalarField(grid, np.sin(grid.nodes[:, 0]))
    out, frac = apply_jump(phi, model)
    assert np.allclose(out.values, 0.0)
    assert frac == 0.0


def test_jump_single_atom_closed_form():
    model, grid = benchmark_1d()
    m2 = dataclasses.replace(model, levy=LevyMeasure.finite_atoms([(1.0, 2.0)]))
    x = grid.nodes[:, 0]
    phi = ScalarField(grid, x**2)
    out, _ = apply_jump(phi, m2)
    inner = (x > -7.0) & (x < 7.0)
    assert np.allclose(out.flat[inner], 2.0 * (2.0 * x[inner] + 1.0), atol=1e-12)


def test_jump_symmetric_density_near_zero_on_linear_field():
    model, grid = benchmark_1d()
    m2 = dataclasses.replace(model, levy=LevyMeasure.exp_tail(1.0, 1.0))
    x = grid.nodes[:, 0]
    # the linear extension represents phi(x) = x exactly off the box, so the
    # symmetric first moment cancels to quadrature accuracy
    phi = ScalarField(grid, x.copy(), extension="linear_extrapolation")
    out, frac = apply_jump(phi, m2)
    from jdimpulse import integrate
    _, est = integrate(m2.levy, lambda z: z)
    assert np.abs(out.values).max() <= est + 1e-9
    assert frac > 0  # wide tails do leave the box
    # the Lipschitz clamp turns the left tail upward instead; at the center
    # that costs exactly 2 integral_8^inf (t - 8) e^-t dt = 2 e^-8
    phi_clamp = ScalarField(grid, x.copy())
    out_c, _ = apply_jump(phi_clamp, m2)
    assert out_c.flat[128] == pytest.approx(2.0 * np.exp(-8.0), rel=5e-3)


def test_generator_is_elliptic_minus_jump():
    model, grid = benchmark_1d()
    st = build_stencil(model, grid)
    rng = np.random.default_rng(3)
    phi = ScalarField(grid, rng.normal(size=grid.shape))
    full = apply_generator(phi, model, st)
    lpart = apply_elliptic(phi, model, st)
    ipart, _ = apply_jump(phi, model)
    assert np.allclose(full.values, lpart.values - ipart.values, atol=1e-12)


def test_generator_on_constant():
    model, grid = benchmark_1d()
    st = build_stencil(model, grid)
    phi = ScalarField(grid, np.full(grid.shape, -2.0))
    out = apply_generator(phi, model, st)
    assert np.allclose(out.values, -2.0 * model.discount, atol=1e-12)


def test_generator_linear_in_field():
    # linear for the linear extension modes (the Lipschitz clamp's measured
    # constant is a max over the field, hence only sublinear)
    model, grid = benchmark_1d()
    st = build_stencil(model, grid)
    rng = np.random.default_rng(17)
    v1, v2 = rng.normal(size=grid.shape), rng.normal(size=grid.shape)
    a, b = 1.7, -0.4
    mk = lambda v: ScalarField(grid, v, extension="linear_extrapolation")
    g1 = apply_generator(mk(v1), model, st)
    g2 = apply_generator(mk(v2), model, st)
    g12 = apply_generator(mk(a * v1 + b * v2), model, st)
    assert np.allclose(g12.values, a * g1.values + b * g2.values, atol=1e-9)


# -- intervention operator ---------------------------------------------------


def test_intervention_on_zero_field():
    model, grid = benchmark_1d()
    zero = ScalarField(grid, np.zeros(grid.shape))
    out, argmin = apply_intervention(zero, model.transaction_cost, SearchBox(16.0))
    h = grid.spacing[0]
    assert np.allclose(out.values, 1.0 + 0.1 * h)
    assert np.allclose(np.abs(argmin), h)


def test_intervention_triangle_inequality_case():
    model, grid = benchmark_1d()
    cost = dataclasses.replace(model.transaction_cost,
                               evaluate=lambda xi: 1.0 + np.linalg.norm(np.atleast_2d(xi), axis=-1))
    x = grid.nodes[:, 0]
    phi = ScalarField(grid, np.abs(x), lipschitz_constant=1.0)
    out, _ = apply_intervention(phi, cost, SearchBox(16.0))
    h = grid.spacing[0]
    inner = np.abs(x) >= h
    assert np.allclose(out.flat[inner], 1.0 + np.abs(x)[inner], atol=1e-12)
    assert abs(out.flat[~inner][0] - (1.0 + 2 * h)) < 1e-12  # at the origin


def test_intervention_matches_brute_force_bitwise_1d():
    model, _ = benchmark_1d()
    grid = Grid([-2.0], [2.0], (33,))
    rng = np.random.default_rng(7)
    phi = ScalarField(grid, rng.normal(size=grid.shape))
    cost = dataclasses.replace(model.transaction_cost,
                               evaluate=lambda xi: 1.0 + np.linalg.norm(np.atleast_2d(xi), axis=-1) ** 2,
                               coercivity_radius=2.0)
    out, argmin = apply_intervention(phi, cost, SearchBox(2.0))
    brute_vals, brute_arg = brute_force_intervention(phi, cost, 2.0)
    assert np.array_equal(out.flat, brute_vals)
    assert np.array_equal(argmin, brute_arg)


def test_intervention_matches_brute_force_bitwise_2d():
    model, _ = isotropic_2d()
    grid = Grid([-1.0, -1.0], [1.0, 1.0], (9, 9))
    rng = np.random.default_rng(11)
    phi = ScalarField(grid, rng.normal(size=grid.shape))
    cost = dataclasses.replace(model.transaction_cost, coercivity_radius=1.0)
    out, argmin = apply_intervention(phi, cost, SearchBox(1.0))
    brute_vals, brute_arg = brute_force_intervention(phi, cost, 1.0)
    assert np.array_equal(out.flat, brute_vals)
    assert np.array_equal(argmin, brute_arg)


def test_intervention_rejects_undersized_search():
    model, grid = benchmark_1d()
    zero = ScalarField(grid, np.zeros(grid.shape))
    with pytest.raises(CoercivityError):
        apply_intervention(zero, model.transaction_cost, SearchBox(4.0))


def test_candidates_sorted_and_nonzero():
    grid = Grid([-1.0], [1.0], (9,))
    cands = candidate_displacements(grid, 0.6)
    norms = np.linalg.norm(cands, axis=1)
    assert np.all(np.diff(norms) >= -1e-12)
    assert np.all(np.any(cands != 0.0, axis=1))
    # ties: -h before +h
    assert cands[0, 0] == -grid.spacing[0]
    assert cands[1, 0] == grid.spacing[0]


def test_intervention_properties_on_random_pairs():
    """Concavity, monotonicity and Lipschitz preservation, exactly."""
    model, _ = benchmark_1d()
    grid = Grid([-3.0], [3.0], (49,))
    cost = dataclasses.replace(model.transaction_cost, coercivity_radius=3.0)
    search = SearchBox(3.0)
    rng = np.random.default_rng(2024)
    for _ in range(25):
        v1 = np.cumsum(rng.uniform(-1, 1, grid.n_nodes)) * grid.spacing[0]
        v2 = np.cumsum(rng.uniform(-1, 1, grid.n_nodes)) * grid.spacing[0]
        f1 = ScalarField(grid, v1)
        f2 = ScalarField(grid, v2)
        s = rng.uniform()
        mix = ScalarField(grid, s * v1 + (1 - s) * v2)
        m_mix, _ = apply_intervention(mix, cost, search)
        m1, _ = apply_intervention(f1, cost, search)
        m2, _ = apply_intervention(f2, cost, search)
        assert np.all(m_mix.values >= s * m1.values + (1 - s) * m2.values - 1e-10)
        lo = ScalarField(grid, np.minimum(v1, v2))
        m_lo, _ = apply_intervention(lo, cost, search)
        assert np.all(m_lo.values <= m1.values + 1e-12)
        assert m1.discrete_lipschitz() <= f1.discrete_lipschitz() + 1e-9
