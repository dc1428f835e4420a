"""Read-only checks of the structure a converged value function must have.

Continuum regularity claims (Lipschitz bound, obstacle inequality, Holder
continuity of the jump integral, gradient matching across the free
boundary, bounded second derivatives) are recast as statements about
discrete difference quotients and their stability under grid refinement,
which is the only falsifiable desk-scale form. Every check is a pure
function of the solve result; thresholds are reported, never silently
asserted. Each detector also has a fault-injection test in the suite that
it must flag.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt
from scipy.spatial import cKDTree

from .grids import ScalarField
from .model import ModelSpec
from .operators import OperatorStencil, SearchBox, apply_elliptic, apply_intervention, apply_jump


class DiagnosticsError(RuntimeError):
    pass


def check_lipschitz(u: ScalarField, bound: float, tol: float = 0.10) -> tuple[float, bool]:
    """Max adjacent difference quotient over the core against an a-priori bound."""
    grid = u.grid
    core = grid.core_mask.reshape(grid.shape)
    observed = 0.0
    for k in range(grid.dim):
        sl_lo = [slice(None)] * grid.dim
        sl_hi = [slice(None)] * grid.dim
        sl_lo[k] = slice(None, -1)
        sl_hi[k] = slice(1, None)
        both = core[tuple(sl_lo)] & core[tuple(sl_hi)]
        if not both.any():
            continue
        quot = np.abs(np.diff(u.values, axis=k))[both] / grid.spacing[k]
        observed = max(observed, float(quot.max()))
    return observed, observed <= bound * (1.0 + tol)


def check_obstacle(u: ScalarField, intervention_value: ScalarField) -> float:
    """Max of u - M u over the core (feasibility demands this stay <= tol)."""
    core = u.grid.core_mask
    return float((u.flat - intervention_value.flat)[core].max())


def _region_distance(grid, mask_flat) -> np.ndarray:
    """Distance from each node to the nearest node where mask_flat is True."""
    mask = mask_flat.reshape(grid.shape)
    if not mask.any():
        return np.full(grid.n_nodes, np.inf)
    dist = distance_transform_edt(~mask, sampling=grid.spacing)
    return dist.reshape(-1)


def check_iu_holder(
    u: ScalarField,
    model: ModelSpec,
    action_mask: np.ndarray,
    alpha: float,
    margin: float,
    refined: tuple[ScalarField, np.ndarray] | None = None,
    n_long_pairs: int = 1000,
    seed: int = 0,
) -> tuple[float, bool | None]:
    """Empirical Holder quotient of the jump integral on the deep continuation set.

    The set D collects continuation core nodes at distance >= margin from
    the action region and from the box faces. The quotient is maximized
    over all node pairs within 10 h plus ``n_long_pairs`` random far pairs.
    With a half-spacing solve supplied, ``finite`` reports whether the
    quotient is refinement-stable (ratio within [0.5, 2]).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")

    def quotient(field: ScalarField, mask: np.ndarray) -> float:
        grid = field.grid
        act_dist = _region_distance(grid, np.asarray(mask, dtype=bool).reshape(-1))
        pts = grid.nodes
        deep = grid.core_mask & ~np.asarray(mask, dtype=bool).reshape(-1)
        for k in range(grid.dim):
            deep &= pts[:, k] - grid.lo[k] >= margin
            deep &= grid.hi[k] - pts[:, k] >= margin
        deep &= act_dist >= margin
        if not deep.any():
            raise DiagnosticsError(f"continuation core too small at margin {margin}")
        iu, _ = apply_jump(field, model)
        vals = iu.flat[deep]
        coords = pts[deep]
        tree = cKDTree(coords)
        pairs = tree.query_pairs(10.0 * float(grid.spacing.max()), output_type="ndarray")
        rng = np.random.default_rng(seed)
        if len(coords) > 1 and n_long_pairs > 0:
            extra = rng.integers(0, len(coords), size=(n_long_pairs, 2))
            extra = extra[extra[:, 0] != extra[:, 1]]
            pairs = np.vstack([pairs, extra]) if len(pairs) else extra
        if len(pairs) == 0:
            return 0.0
        dv = np.abs(vals[pairs[:, 0]] - vals[pairs[:, 1]])
        dx = np.linalg.norm(coords[pairs[:, 0]] - coords[pairs[:, 1]], axis=1)
        return float((dv / dx**alpha).max())

    q = quotient(u, action_mask)
    finite = None
    if refined is not None:
        q2 = quotient(refined[0], refined[1])
        ratio = q2 / q if q > 0 else (1.0 if q2 == 0 else np.inf)
        finite = bool(0.5 <= ratio <= 2.0)
    return q, finite


@dataclass
class SmoothFitReport:
    boundary_nodes: list
    max_gradient_jump: float
    refinement_rate: float | None
    message: str = ""


def _interface_jumps(u: ScalarField, action_mask: np.ndarray):
    """One-sided slope mismatches across every region-changing grid edge."""
    grid = u.grid
    mask = np.asarray(action_mask, dtype=bool).reshape(grid.shape)
    core = grid.core_mask.reshape(grid.shape)
    v = u.values
    nodes = []
    jumps = []
    for k in range(grid.dim):
        h = grid.spacing[k]
        vm = np.moveaxis(v, k, 0)
        mm = np.moveaxis(mask, k, 0)
        cm = np.moveaxis(core, k, 0)
        # edge between layer i and i+1; need i-1 and i+2 in range
        for i in range(1, vm.shape[0] - 2):
            change = (mm[i] != mm[i + 1]) & cm[i] & cm[i + 1]
            if not np.any(change):
                continue
            left = (vm[i] - vm[i - 1]) / h
            right = (vm[i + 2] - vm[i + 1]) / h
            jump = np.abs(right - left)[change]
            jumps.append(jump)
            where = np.argwhere(change)
            for w in where:
                idx = list(w)
                idx.insert(0, i)
                nodes.append(tuple(int(t) for t in (idx if k == 0 else
                                                    idx[1 : k + 1] + [idx[0]] + idx[k + 1 :])))
    allj = np.concatenate(jumps) if jumps else np.zeros(0)
    return nodes, allj


def check_smooth_fit(
    u: ScalarField,
    action_mask: np.ndarray,
    refined: tuple[ScalarField, np.ndarray] | None = None,
) -> SmoothFitReport:
    """Gradient mismatch across the free boundary, with a refinement rate.

    For a continuously differentiable value function the one-sided slopes
    on either side of a region-changing edge agree up to O(h); the
    mismatch should shrink under h -> h/2 (rate = log2(jump_h / jump_h/2)
    > 0). A genuine gradient kink keeps the mismatch h-independent and
    drives the rate to 0.
    """
    nodes, jumps = _interface_jumps(u, action_mask)
    if jumps.size == 0:
        return SmoothFitReport([], 0.0, None, message="no free boundary in the core")
    jmax = float(jumps.max())
    rate = None
    if refined is not None:
        _, jumps2 = _interface_jumps(refined[0], refined[1])
        if jumps2.size:
            j2 = float(jumps2.max())
            rate = float(np.log2(jmax / j2)) if j2 > 0 else np.inf
    return SmoothFitReport(nodes, jmax, rate)


def check_second_derivative_bound(
    u: ScalarField,
    action_mask: np.ndarray,
    refined: tuple[ScalarField, np.ndarray] | None = None,
) -> tuple[float, bool | None]:
    """Max centered second difference over the continuation core; with a
    half-spacing solve, reports whether it is refinement-stable (< 50% change)."""

    def maxd2(field: ScalarField, mask) -> float:
        grid = field.grid
        keep = (grid.core_mask & ~np.asarray(mask, dtype=bool).reshape(-1)).reshape(grid.shape)
        out = 0.0
        for k in range(grid.dim):
            vm = np.moveaxis(field.values, k, 0)
            km = np.moveaxis(keep, k, 0)
            d2 = np.abs(vm[2:] - 2.0 * vm[1:-1] + vm[:-2]) / grid.spacing[k] ** 2
            sel = km[1:-1] & km[2:] & km[:-2]
            if np.any(sel):
                out = max(out, float(d2[sel].max()))
        return out

    v = maxd2(u, action_mask)
    stable = None
    if refined is not None:
        v2 = maxd2(refined[0], refined[1])
        stable = bool(abs(v2 - v) <= 0.5 * max(v, 1e-300))
    return v, stable


def hjb_residual(result, model: ModelSpec, stencil: OperatorStencil) -> float:
    """Recompute max(L u - I u - f, u - M u) over the core from scratch.

    Uses the nodewise operator applications rather than the solver's
    internal matrices, so a corrupted result cannot hide behind its own
    bookkeeping.
    """
    u = result.value
    grid = u.grid
    lu = apply_elliptic(u, model, stencil)
    iu, _ = apply_jump(u, model)
    mu, _ = apply_intervention(u, model.transaction_cost, SearchBox(result.search_radius))
    f = np.asarray(model.running_cost(grid.nodes), dtype=float).reshape(-1)
    core = grid.core_mask
    res = np.maximum(lu.flat - iu.flat - f, u.flat - mu.flat)
    return float(np.abs(res[core]).max())


@dataclass
class DiagnosticEntry:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""


@dataclass
class DiagnosticsReport:
    entries: list

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def __getitem__(self, name):
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["check", "value", "threshold", "pass", "detail"])
            for e in self.entries:
                w.writerow([e.name, repr(e.value), repr(e.threshold), int(e.passed), e.detail])

    def summary(self) -> str:
        lines = ["diagnostics:"]
        for e in self.entries:
            tag = "pass" if e.passed else "FAIL"
            lines.append(f"  [{tag}] {e.name}: {e.value:.4g} (threshold {e.threshold:.4g}) {e.detail}")
        return "\n".join(lines)


@dataclass
class DiagnosticThresholds:
    lipschitz_tol: float = 0.10
    holder_alphas: tuple = (0.25, 0.5, 0.75)
    holder_margin: float = 1.0
    residual_factor: float = 10.0
    smooth_fit_min_rate: float = 0.5


def run_all(
    result,
    model: ModelSpec,
    stencil: OperatorStencil,
    thresholds: DiagnosticThresholds | None = None,
    refined_result=None,
) -> DiagnosticsReport:
    """Run every diagnostic on a solve result and collect a report.

    Refinement-based checks (smooth fit rate, Holder stability, second
    difference stability) need ``refined_result``, a solve of the same
    model on the half-spacing grid; without it they report their
    single-grid values and pass vacuously.
    """
    from .model import lipschitz_bound

    th = thresholds or DiagnosticThresholds()
    entries = []

    cu = lipschitz_bound(model)
    obs, ok = check_lipschitz(result.value, cu, th.lipschitz_tol)
    entries.append(DiagnosticEntry(
        "lipschitz", obs, cu * (1 + th.lipschitz_tol), ok,
        detail=f"a-priori bound {cu:.4g}"))

    viol = check_obstacle(result.value, result.intervention_value)
    entries.append(DiagnosticEntry(
        "obstacle", viol, result.tol_region, viol <= result.tol_region))

    res = hjb_residual(result, model, stencil)
    res_tol = th.residual_factor * result.tol_outer * max(1.0, result.source_sup)
    entries.append(DiagnosticEntry("hjb_residual", res, res_tol, res <= res_tol))

    refined = None
    if refined_result is not None:
        refined = (refined_result.value, refined_result.action_mask)

    fit = check_smooth_fit(result.value, result.action_mask, refined)
    if fit.message:
        entries.append(DiagnosticEntry("smooth_fit", 0.0, 0.0, True, detail=fit.message))
    elif fit.refinement_rate is None:
        entries.append(DiagnosticEntry(
            "smooth_fit", fit.max_gradient_jump, np.inf, True,
            detail="single grid; rerun with a refined solve for the rate"))
    else:
        entries.append(DiagnosticEntry(
            "smooth_fit", fit.refinement_rate, th.smooth_fit_min_rate,
            fit.refinement_rate >= th.smooth_fit_min_rate,
            detail=f"gradient jump {fit.max_gradient_jump:.4g}"))

    for alpha in th.holder_alphas:
        try:
            q, finite = check_iu_holder(
                result.value, model, result.action_mask, alpha, th.holder_margin, refined)
        except DiagnosticsError as exc:
            entries.append(DiagnosticEntry(f"holder_a{alpha}", np.nan, np.inf, True, detail=str(exc)))
            continue
        ok = finite if finite is not None else np.isfinite(q)
        entries.append(DiagnosticEntry(
            f"holder_a{alpha}", q, np.inf, bool(ok),
            detail="refinement-stable" if finite else "single grid"))

    d2, stable = check_second_derivative_bound(result.value, result.action_mask, refined)
    ok = stable if stable is not None else np.isfinite(d2)
    entries.append(DiagnosticEntry(
        "second_difference", d2, np.inf, bool(ok),
        detail="refinement-stable" if stable else "single grid"))

    return DiagnosticsReport(entries)
