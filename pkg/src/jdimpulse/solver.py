"""QVI solver: iterated optimal stopping with penalized obstacle problems.

The equation solved on a truncated box is

    max( L u - I u - f,  u - M u ) = 0,

where M is the intervention operator. The outer loop freezes the nonlocal
pieces: starting from the no-intervention value u0 (direct solve of
(L - I) u = f), each step solves the single-obstacle problem

    max( L v - (f + I u_k),  v - M u_k ) = 0,   v = u0 on the box boundary,

and stops when consecutive iterates agree to tol_outer in sup norm.

Each obstacle problem is solved by penalization: for a decreasing schedule
of eps we solve  L v + beta_eps(v - g_eps) = f_src  by damped Newton, where
g_eps is a box-kernel mollification of the obstacle at radius eps and
beta_eps is a smooth one-sided penalty with

    beta_eps(0) = 0,  beta_eps >= -1,  0 < beta_eps' < 1/omega(eps).

omega(eps) is the measured mollification distance floored at
sqrt(eps * scale). The floor matters: for Lipschitz obstacles the measured
distance shrinks linearly in eps, which would freeze the penalty's slope
scale near 1 and leave an O(1) bias (L v = f + s) wherever the obstacle is
inactive. With the floor the slope scale decays like sqrt(eps), the
negative branch of the penalty vanishes and the positive branch steepens,
so the penalized solutions converge to the discrete obstacle solution.
The schedule therefore runs deep (2^-1 .. 2^-44 times the obstacle scale
by default); obstacle overshoot after the last eps is O(sqrt(eps * scale))
and ends up well below the region-classification tolerance.

Newton's method on the penalized system converges fast: the Jacobian adds
the nonnegative diagonal beta' to the monotone stencil matrix, hence stays
an invertible M-matrix; steps are damped by halving until the residual
decreases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.ndimage import uniform_filter1d

from .grids import Grid, ScalarField
from .model import ModelSpec, lipschitz_bound
from .operators import (
    NonMonotoneStencilError,
    OperatorStencil,
    SearchBox,
    apply_intervention,
    apply_jump,
    build_jump_operator,
    build_stencil,
)


class SolverError(RuntimeError):
    pass


class NewtonError(SolverError):
    def __init__(self, message, history):
        super().__init__(f"{message}; residual history {['%.3e' % h for h in history]}")
        self.history = history


class OuterLoopError(SolverError):
    def __init__(self, message, history):
        super().__init__(f"{message}; iterate distances {['%.3e' % h for h in history]}")
        self.history = history


# -- penalty family ------------------------------------------------------------


@dataclass
class PenaltyFamily:
    """Smooth one-sided penalty beta_eps with slope capped by 1/omega."""

    eps: float
    omega: float
    slope_scale: float

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        s, e = self.slope_scale, self.eps
        neg = s * np.expm1(np.minimum(t, 0.0) / e)
        return np.where(t > 0.0, s * t / e, neg)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        s, e = self.slope_scale, self.eps
        return np.where(t > 0.0, s / e, (s / e) * np.exp(np.minimum(t, 0.0) / e))


def make_penalty(eps: float, omega_of_eps: float) -> PenaltyFamily:
    """Penalty with beta(0) = 0, beta >= -1 and 0 < beta' < 1/omega_of_eps.

    beta(t) = s (exp(t/eps) - 1) for t <= 0 and s t / eps for t > 0, with
    slope scale s = min(1, eps/omega) * (1 - 1e-6). Along a schedule where
    omega(eps) shrinks sublinearly (omega >> eps), s -> 0 and beta tends
    pointwise to 0 on t <= 0 while blowing up on t > 0.
    """
    if eps <= 0 or omega_of_eps <= 0:
        raise ValueError("eps and omega_of_eps must be positive")
    s = min(1.0, eps / omega_of_eps) * (1.0 - 1e-6)
    return PenaltyFamily(eps=float(eps), omega=float(omega_of_eps), slope_scale=s)


def mollify(values: np.ndarray, grid: Grid, radius: float) -> np.ndarray:
    """Separable box-kernel average over nodes within ``radius`` per axis."""
    out = np.asarray(values, dtype=float).copy()
    for k in range(grid.dim):
        w = int(np.floor(radius / grid.spacing[k]))
        if w > 0:
            out = uniform_filter1d(out, size=2 * w + 1, axis=k, mode="nearest")
    return out


# -- parameters and results ------------------------------------------------------


@dataclass
class SolverParams:
    scheme: str = "upwind"
    eps_levels: int = 44
    eps_scale: float | None = None
    newton_tol: float = 1e-10
    newton_max: int = 60
    tol_outer: float | None = None
    tol_region: float | None = None
    max_outer: int = 120
    search_radius: float | None = None
    off_box_threshold: float = 1e-3
    extension: str = "lipschitz_clamp"
    min_nodes: int = 9


@dataclass
class PenaltyLogEntry:
    eps: float
    omega_measured: float
    omega_effective: float
    slope_scale: float
    sup_beta: float
    obstacle_floor: float  # M with L g_eps >= -M on the interior
    newton_iterations: int


@dataclass
class SolveResult:
    """Converged QVI solution and everything the diagnostics need."""

    value: ScalarField                 # u
    intervention_value: ScalarField    # M u
    jump_integral: ScalarField         # I u
    action_mask: np.ndarray            # flat bool, True where intervening
    policy: np.ndarray                 # (n_nodes, dim) minimizing displacement
    residual_hjb: float
    outer_iterations: int
    penalty_log: list
    outer_history: list
    no_action_value: ScalarField       # u0, also the Dirichlet data
    tol_outer: float
    tol_region: float
    search_radius: float
    off_box_fraction_core: float
    source_sup: float                  # max |f + I u| seen by the last obstacle solve
    model: ModelSpec | None = None
    params: SolverParams | None = None

    @property
    def grid(self) -> Grid:
        return self.value.grid

    @property
    def continuation_mask(self) -> np.ndarray:
        return ~self.action_mask

    def region_counts(self) -> tuple[int, int]:
        core = self.grid.core_mask
        return int((self.action_mask & core).sum()), int((~self.action_mask & core).sum())


# -- penalized obstacle problems --------------------------------------------------


def solve_obstacle_penalized(
    stencil: OperatorStencil,
    f_src: ScalarField,
    g_obstacle: ScalarField,
    boundary: ScalarField,
    eps_schedule,
    newton_tol: float = 1e-10,
    *,
    eps_scale: float | None = None,
    newton_max: int = 60,
    v_init: np.ndarray | None = None,
) -> tuple[ScalarField, list]:
    """Solve max(L v - f_src, v - g) = 0, v = boundary on the box edge.

    Walks the strictly decreasing eps schedule, warm-starting each Newton
    solve from the previous solution. Returns the final field and the
    per-eps penalty log (sup norm of beta(v - g_eps), the measured and
    effective moduli, the mollified obstacle's floor constant M).
    """
    eps_schedule = list(eps_schedule)
    if not eps_schedule or any(b >= a for a, b in zip(eps_schedule, eps_schedule[1:])):
        raise ValueError("eps_schedule must be nonempty and strictly decreasing")
    if not stencil.is_monotone:
        raise NonMonotoneStencilError(
            "stencil is not monotone; switch the drift discretization to the upwind scheme"
        )
    grid = f_src.grid
    N = grid.n_nodes
    interior = stencil.interior_mask
    bmask = stencil.boundary_mask
    A = stencil.matrix
    # the collar absorbs any mismatch between the Dirichlet data and the
    # obstacle; the penalty bound is meaningful where the data is compatible
    trusted = grid.core_mask if grid.core_mask.any() else interior

    rhs = f_src.flat.copy()
    rhs[bmask] = boundary.flat[bmask]

    scale = eps_scale if eps_scale is not None else max(float(np.abs(g_obstacle.values).max()), 1e-8)

    if v_init is None:
        v = spla.splu(A.tocsc()).solve(rhs)
    else:
        v = np.asarray(v_init, dtype=float).reshape(-1).copy()
        v[bmask] = rhs[bmask]

    g_flat_true = g_obstacle.flat
    log: list[PenaltyLogEntry] = []

    for eps in eps_schedule:
        g_eps = mollify(g_obstacle.values, grid, eps).reshape(-1)
        omega_meas = float(np.abs(g_eps - g_flat_true).max())
        omega_eff = max(omega_meas, float(np.sqrt(eps * scale)), 1e-300)
        pen = make_penalty(eps, omega_eff)

        def residual(vv):
            out = A @ vv - rhs
            out[interior] += pen.evaluate(vv[interior] - g_eps[interior])
            return out

        F = residual(v)
        fnorm = float(np.abs(F).max())
        tol = newton_tol * max(1.0, float(np.abs(rhs).max()))
        g_scale = max(1.0, float(np.abs(g_eps).max()))
        hist = [fnorm]
        newton_its = 0
        while True:
            dpen = np.zeros(N)
            dpen[interior] = pen.derivative(v[interior] - g_eps[interior])
            # steep penalties amplify the float noise of v - g_eps wherever
            # they are actually steep; below that floor the residual is noise
            noise_floor = float(dpen.max()) * 1e-15 * g_scale
            tol_eff = max(tol, noise_floor)
            if fnorm <= tol_eff:
                break
            if newton_its >= newton_max:
                raise NewtonError(f"Newton stalled at eps={eps:.3e}", hist)
            J = A + sp.diags(dpen)
            delta = spla.splu(J.tocsc()).solve(-F)
            step = 1.0
            accepted = False
            for _ in range(30):
                v_try = v + step * delta
                F_try = residual(v_try)
                fnorm_try = float(np.abs(F_try).max())
                if fnorm_try < fnorm:
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                if fnorm <= 10.0 * tol_eff:
                    break  # parked on the float-noise floor; good enough
                raise NewtonError(f"Newton damping failed at eps={eps:.3e}", hist)
            v, F, fnorm = v_try, F_try, fnorm_try
            hist.append(fnorm)
            newton_its += 1

        sup_beta = float(np.abs(pen.evaluate(v[trusted] - g_eps[trusted])).max())
        lg = (A @ g_eps)[trusted]
        floor_M = max(0.0, -float(lg.min()))
        log.append(PenaltyLogEntry(
            eps=float(eps), omega_measured=omega_meas, omega_effective=omega_eff,
            slope_scale=pen.slope_scale, sup_beta=sup_beta, obstacle_floor=floor_M,
            newton_iterations=newton_its,
        ))

    out = ScalarField(grid, v.reshape(grid.shape), extension=f_src.extension,
                      lipschitz_constant=g_obstacle.lipschitz_constant)
    return out, log


# -- the QVI ----------------------------------------------------------------------


def default_eps_schedule(scale: float, levels: int = 44) -> list:
    return [scale * 0.5**k for k in range(1, levels + 1)]


def solve_qvi(model: ModelSpec, grid: Grid, params: SolverParams | None = None) -> SolveResult:
    """Iterated optimal stopping for max(L u - I u - f, u - M u) = 0.

    The model must satisfy the discount margin assumption (rejected
    upfront otherwise); the grid must be large enough that the core's
    off-box quadrature mass stays under ``params.off_box_threshold``.
    """
    params = params or SolverParams()
    if any(s < params.min_nodes for s in grid.shape):
        raise SolverError(
            f"grid too small: need at least {params.min_nodes} nodes per axis, got {grid.shape}"
        )
    if not np.any(grid.core_mask):
        raise SolverError("grid too small: empty core region")

    c_u = lipschitz_bound(model)  # raises DiscountMarginError if the margin fails
    r = model.discount
    cost = model.transaction_cost

    stencil = build_stencil(model, grid, params.scheme)
    if not stencil.is_monotone:
        raise NonMonotoneStencilError(
            "assembled stencil is not monotone on this grid; "
            "use scheme='upwind' or refine the grid"
        )

    nodes = grid.nodes
    f_vals = np.asarray(model.running_cost(nodes), dtype=float).reshape(-1)
    if not np.all(np.isfinite(f_vals)):
        raise SolverError("running cost evaluated non-finite on the grid")
    f_sup = float(np.abs(f_vals).max())

    tol_outer = params.tol_outer
    if tol_outer is None:
        tol_outer = 1e-6 * max(f_sup, r * cost.fixed_floor) / r
    tol_region = params.tol_region if params.tol_region is not None else 10.0 * tol_outer

    # nonlocal operator in matrix form, extension pinned to the a-priori bound
    A_I, d_ext, off_mass, total_mass = build_jump_operator(model, grid, c_u)
    core = grid.core_mask
    off_core = float((off_mass[core] / total_mass).mean()) if total_mass > 0 else 0.0
    if off_core > params.off_box_threshold:
        raise SolverError(
            f"off-box quadrature mass over the core is {off_core:.3e} "
            f"(> {params.off_box_threshold:.1e}); enlarge the box or the core margin"
        )

    interior = stencil.interior_mask
    bmask = stencil.boundary_mask

    # no-intervention value: (L - I) u0 = f, far-field Dirichlet data f/r
    A_I_int = A_I.tolil()
    A_I_int[np.nonzero(bmask)[0], :] = 0.0
    A_I_int = A_I_int.tocsr()
    A_nl = (stencil.matrix - A_I_int).tocsc()
    rhs0 = f_vals + c_u * d_ext
    rhs0[bmask] = f_vals[bmask] / r
    u0_flat = spla.splu(A_nl).solve(rhs0)
    u0 = ScalarField(grid, u0_flat.reshape(grid.shape), extension=params.extension,
                     lipschitz_constant=c_u)

    bc = u0
    search = SearchBox(params.search_radius if params.search_radius is not None
                       else cost.coercivity_radius)

    u = u0
    eps_scale = params.eps_scale
    schedule = None
    history: list[float] = []
    penalty_log: list = []
    source_sup = f_sup
    converged = False
    for it in range(params.max_outer):
        iu_flat = A_I @ u.flat + c_u * d_ext
        f_src = ScalarField(grid, (f_vals + iu_flat).reshape(grid.shape),
                            extension=params.extension, lipschitz_constant=None)
        g_field, _ = apply_intervention(u, cost, search)
        if schedule is None:
            if eps_scale is None:
                # the penalty reads v - g, so the obstacle's dynamic range
                # (not its absolute level) sets the schedule's scale
                grange = float(g_field.values.max() - g_field.values.min())
                eps_scale = max(0.25 * grange, 1e-8)
            schedule = default_eps_schedule(eps_scale, params.eps_levels)
        v, penalty_log = solve_obstacle_penalized(
            stencil, f_src, g_field, bc, schedule,
            newton_tol=params.newton_tol, eps_scale=eps_scale,
            newton_max=params.newton_max, v_init=u.flat,
        )
        source_sup = float(np.abs(f_src.values).max())
        delta = float(np.abs(v.values - u.values).max())
        history.append(delta)
        u = ScalarField(grid, v.values, extension=params.extension, lipschitz_constant=c_u)
        if delta < tol_outer:
            converged = True
            break
    if not converged:
        raise OuterLoopError("outer iteration did not converge", history)

    mu_field, argmin = apply_intervention(u, cost, search)
    iu_field, _ = apply_jump(u, model)
    gap = u.flat - mu_field.flat
    action = gap >= -tol_region

    res1 = (stencil.matrix @ u.flat - iu_field.flat - f_vals)[core]
    res2 = gap[core]
    residual = float(np.abs(np.maximum(res1, res2)).max()) if core.any() else 0.0

    return SolveResult(
        value=u,
        intervention_value=mu_field,
        jump_integral=iu_field,
        action_mask=action,
        policy=argmin,
        residual_hjb=residual,
        outer_iterations=len(history),
        penalty_log=penalty_log,
        outer_history=history,
        no_action_value=u0,
        tol_outer=tol_outer,
        tol_region=tol_region,
        search_radius=search.radius,
        off_box_fraction_core=off_core,
        source_sup=source_sup,
        model=model,
        params=params,
    )


def extract_policy(result: SolveResult):
    """Impulse policy from a converged solve, with placement verification.

    Every action node's displacement is checked to land K-deep inside the
    continuation region: u(x + xi) <= M u(x + xi) - K + tol_jump with
    tol_jump = 3 h C_u, and strictly below M u - K/2 (the buffer that
    keeps repeated impulses from chaining). Violations are reported on the
    policy, not raised.
    """
    from .simulate import ImpulsePolicy  # local import to avoid a cycle

    model = result.model
    if model is None:
        raise ValueError("result does not carry its model; re-run solve_qvi")
    grid = result.grid
    c_u = lipschitz_bound(model)
    k_floor = model.transaction_cost.fixed_floor
    tol_jump = 3.0 * float(grid.spacing.max()) * max(c_u, 1e-12)

    nodes = grid.nodes
    action_idx = np.nonzero(result.action_mask)[0]
    violations = []
    depth_violations = []
    for i in action_idx:
        y = nodes[i] + result.policy[i]
        uy = float(result.value.evaluate(y))
        muy = float(result.intervention_value.evaluate(y))
        if uy > muy - k_floor + tol_jump:
            violations.append((int(i), tuple(y), uy - (muy - k_floor)))
        if uy >= muy - 0.5 * k_floor:
            depth_violations.append((int(i), tuple(y), uy - (muy - 0.5 * k_floor)))

    return ImpulsePolicy.from_regions(
        grid=grid,
        action_mask=result.action_mask.copy(),
        displacements=result.policy.copy(),
        placement_violations=violations,
        depth_violations=depth_violations,
    )
