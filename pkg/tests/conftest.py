import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from jdimpulse import lipschitz_bound, solve_qvi
from jdimpulse.presets import TEST_MATRIX, benchmark_1d
from jdimpulse.solver import SolverParams

from oracles import value_iteration_qvi_1d


@pytest.fixture(scope="session")
def bench():
    model, grid = benchmark_1d()
    return model, grid


@pytest.fixture(scope="session")
def bench_result(bench):
    model, grid = bench
    return solve_qvi(model, grid)


@pytest.fixture(scope="session")
def bench_result_refined(bench):
    model, grid = bench
    return solve_qvi(model, grid.refine())


@pytest.fixture(scope="session")
def bench_result_deeper(bench):
    """Same solve with the final eps halved once more (stability check)."""
    model, grid = bench
    return solve_qvi(model, grid, SolverParams(eps_levels=45))


@pytest.fixture(scope="session")
def bench_result_central(bench):
    model, grid = bench
    return solve_qvi(model, grid, SolverParams(scheme="central"))


@pytest.fixture(scope="session")
def bench_oracle(bench):
    """Fully independent value-iteration solution on the same discretization."""
    model, grid = bench
    x = grid.axis(0)
    cu = lipschitz_bound(model)
    f_bc = (abs(x[0]) / model.discount, abs(x[-1]) / model.discount)
    u0, _ = value_iteration_qvi_1d(model, grid, bc_values=f_bc, search_radius=16.0,
                                   lip_const=cu, with_intervention=False)
    u, sweeps = value_iteration_qvi_1d(model, grid, bc_values=(u0[0], u0[-1]),
                                       search_radius=16.0, lip_const=cu)
    return u, u0, sweeps


@pytest.fixture(scope="session")
def matrix_results():
    """Converged solves for the whole desk-scale test matrix."""
    out = {}
    for name, maker in TEST_MATRIX.items():
        model, grid = maker()
        out[name] = (model, grid, solve_qvi(model, grid))
    return out


@pytest.fixture(scope="session")
def configs_dir():
    return Path(__file__).parent.parent / "configs"
