"""Desk-scale benchmark problems used by the test suite and the scripts.

All models declare exact constants for their closed-form coefficients, so
the a-priori value bounds are sharp and usable as pass thresholds.

====================  ===  ==========================  =========================
name                  dim  jumps                       notes
====================  ===  ==========================  =========================
benchmark_1d          1    atom at +1, rate 1          the oracle benchmark
pure_diffusion_1d     1    none                        obstacle problem only
two_atom_1d           1    atoms +1 / -0.5             mean-reverting drift
exp_density_1d        1    exp tail density            finite activity density
tempered_1d           1    |z|^-1.5 e^-|z| density     infinite activity
state_modulated_1d    1    atom, state-scaled j        nonzero C_j
isotropic_2d          2    one planar atom             two-dimensional
====================  ===  ==========================  =========================
"""

from __future__ import annotations

import numpy as np

from .grids import Grid
from .levy import LevyMeasure, align_marks
from .model import CostB, ModelSpec


def _const_vol(level: float, n: int):
    def sigma(x):
        x = np.asarray(x, dtype=float)
        batch = x.shape[:-1]
        return np.broadcast_to(level * np.eye(n), batch + (n, n)).copy()

    return sigma


def _abs_cost(scale: float = 1.0):
    return lambda x: scale * np.linalg.norm(np.atleast_2d(x), axis=-1)


def _linear_cost_b(k: float, slope: float, radius: float) -> CostB:
    return CostB(
        fixed_floor=k,
        evaluate=lambda xi: k + slope * np.linalg.norm(np.atleast_2d(xi), axis=-1),
        coercivity_radius=radius,
        family={"name": "linear_abs", "fixed": k, "slope": slope},
    )


def _mark_jump():
    def jump(x, z):
        xb, zb = align_marks(x, z)
        return zb.copy()

    return jump


def benchmark_1d() -> tuple[ModelSpec, Grid]:
    """mu = 0, sigma = sqrt(2), one unit jump at rate 1, f = |x|,
    B = 1 + 0.1 |xi|, r = 1 on [-8, 8] with 257 nodes."""
    model = ModelSpec(
        dim_state=1, dim_noise=1, dim_mark=1,
        drift=lambda x: np.zeros_like(np.atleast_2d(x)),
        volatility=_const_vol(np.sqrt(2.0), 1),
        jump=_mark_jump(),
        levy=LevyMeasure.finite_atoms([(1.0, 1.0)]),
        running_cost=_abs_cost(),
        transaction_cost=_linear_cost_b(1.0, 0.1, 16.0),
        discount=1.0,
        c_mu=0.0, c_sigma=0.0, c_f=1.0,
        c_j=lambda z: np.zeros_like(np.asarray(z, dtype=float)),
        ellipticity_floor=1.0,
        family={"name": "benchmark_1d"},
    )
    grid = Grid([-8.0], [8.0], (257,), core_margin=1.6)
    return model, grid


def pure_diffusion_1d() -> tuple[ModelSpec, Grid]:
    model = ModelSpec(
        dim_state=1, dim_noise=1, dim_mark=1,
        drift=lambda x: np.zeros_like(np.atleast_2d(x)),
        volatility=_const_vol(np.sqrt(2.0), 1),
        jump=_mark_jump(),
        levy=LevyMeasure.finite_atoms([]),
        running_cost=_abs_cost(),
        transaction_cost=_linear_cost_b(1.0, 0.2, 14.0),
        discount=1.0,
        c_mu=0.0, c_sigma=0.0, c_f=1.0,
        c_j=lambda z: np.zeros_like(np.asarray(z, dtype=float)),
        ellipticity_floor=1.0,
        family={"name": "pure_diffusion_1d"},
    )
    grid = Grid([-7.0], [7.0], (225,), core_margin=1.4)
    return model, grid


def two_atom_1d() -> tuple[ModelSpec, Grid]:
    """Mean-reverting drift -0.1 x with asymmetric two-atom jumps."""
    model = ModelSpec(
        dim_state=1, dim_noise=1, dim_mark=1,
        drift=lambda x: -0.1 * np.atleast_2d(x),
        volatility=_const_vol(1.0, 1),
        jump=_mark_jump(),
        levy=LevyMeasure.finite_atoms([(1.0, 0.5), (-0.5, 0.7)]),
        running_cost=_abs_cost(),
        transaction_cost=_linear_cost_b(0.8, 0.15, 14.0),
        discount=1.0,
        c_mu=0.1, c_sigma=0.0, c_f=1.0,
        c_j=lambda z: np.zeros_like(np.asarray(z, dtype=float)),
        ellipticity_floor=0.5,
        family={"name": "two_atom_1d"},
    )
    grid = Grid([-7.0], [7.0], (225,), core_margin=1.4)
    return model, grid


def exp_density_1d() -> tuple[ModelSpec, Grid]:
    """Finite-activity density rho(z) = exp(-2|z|) (total mass 1). The tail
    decay keeps the core's off-box quadrature mass under the solver gate."""
    model = ModelSpec(
        dim_state=1, dim_noise=1, dim_mark=1,
        drift=lambda x: np.zeros_like(np.atleast_2d(x)),
        volatility=_const_vol(np.sqrt(2.0), 1),
        jump=_mark_jump(),
        levy=LevyMeasure.exp_tail(c=1.0, a=2.0, z_max=20.0),
        running_cost=_abs_cost(),
        transaction_cost=_linear_cost_b(1.0, 0.1, 16.0),
        discount=1.0,
        c_mu=0.0, c_sigma=0.0, c_f=1.0,
        c_j=lambda z: np.zeros_like(np.asarray(z, dtype=float)),
        ellipticity_floor=1.0,
        family={"name": "exp_density_1d"},
    )
    grid = Grid([-8.0], [8.0], (257,), core_margin=2.5)
    return model, grid


def tempered_1d() -> tuple[ModelSpec, Grid]:
    """Infinite-activity tempered density 0.1 |z|^{-1.5} e^{-|z|}."""
    model = ModelSpec(
        dim_state=1, dim_noise=1, dim_mark=1,
        drift=lambda x: np.zeros_like(np.atleast_2d(x)),
        volatility=_const_vol(1.0, 1),
        jump=_mark_jump(),
        levy=LevyMeasure.tempered_power(c=0.1, alpha=0.5, a=1.0, z_max=30.0),
        running_cost=_abs_cost(),
        transaction_cost=_linear_cost_b(1.0, 0.1, 14.0),
        discount=1.0,
        c_mu=0.0, c_sigma=0.0, c_f=1.0,
        c_j=lambda z: np.zeros_like(np.asarray(z, dtype=float)),
        ellipticity_floor=0.5,
        family={"name": "tempered_1d"},
    )
    grid = Grid([-7.0], [7.0], (225,), core_margin=1.4)
    return model, grid


def state_modulated_1d() -> tuple[ModelSpec, Grid]:
    """Jump amplitude z (1 + 0.3 tanh x): genuinely state-dependent, so the
    jump Lipschitz function C_j(z) = 0.3 |z| is nonzero."""
    kappa = 0.3

    def jump(x, z):
        xb, zb = align_marks(x, z)
        return zb * (1.0 + kappa * np.tanh(xb))

    model = ModelSpec(
        dim_state=1, dim_noise=1, dim_mark=1,
        drift=lambda x: np.zeros_like(np.atleast_2d(x)),
        volatility=_const_vol(np.sqrt(2.0), 1),
        jump=jump,
        levy=LevyMeasure.finite_atoms([(1.0, 0.8)]),
        running_cost=_abs_cost(),
        transaction_cost=_linear_cost_b(1.0, 0.1, 16.0),
        discount=1.0,
        c_mu=0.0, c_sigma=0.0, c_f=1.0,
        c_j=lambda z: kappa * np.abs(np.asarray(z, dtype=float)),
        ellipticity_floor=1.0,
        family={"name": "state_modulated_1d"},
    )
    grid = Grid([-8.0], [8.0], (257,), core_margin=1.6)
    return model, grid


def isotropic_2d() -> tuple[ModelSpec, Grid]:
    """Two-dimensional isotropic diffusion with one planar jump atom."""
    model = ModelSpec(
        dim_state=2, dim_noise=2, dim_mark=2,
        drift=lambda x: np.zeros_like(np.atleast_2d(x)),
        volatility=_const_vol(np.sqrt(2.0), 2),
        jump=_mark_jump(),
        levy=LevyMeasure.finite_atoms([((0.8, -0.4), 0.6)]),
        running_cost=_abs_cost(),
        transaction_cost=_linear_cost_b(1.0, 0.1, 8.0),
        discount=1.0,
        c_mu=0.0, c_sigma=0.0, c_f=1.0,
        c_j=lambda z: np.zeros(np.atleast_2d(z).shape[0]),
        ellipticity_floor=1.0,
        family={"name": "isotropic_2d"},
    )
    grid = Grid([-5.0, -5.0], [5.0, 5.0], (33, 33), core_margin=1.25)
    return model, grid


TEST_MATRIX = {
    "benchmark_1d": benchmark_1d,
    "pure_diffusion_1d": pure_diffusion_1d,
    "two_atom_1d": two_atom_1d,
    "exp_density_1d": exp_density_1d,
    "tempered_1d": tempered_1d,
    "state_modulated_1d": state_modulated_1d,
    "isotropic_2d": isotropic_2d,
}
