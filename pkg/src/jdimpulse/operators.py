"""Discrete operators on grid fields.

The local part  L phi = -tr(A D^2 phi) - mu_bar . D phi + r phi  with
mu_bar = mu - integral j dnu is realized as a finite-difference stencil
(central second differences, upwind or central drift). The nonlocal part
I phi(x) = integral [phi(x + j(x,z)) - phi(x)] nu(dz)  is a quadrature
against the Levy measure using the field's interpolation/extension rule
for off-grid arguments. The full generator is their difference,
apply_generator = apply_elliptic - apply_jump, so that solving
(L - I) u = f prices the uncontrolled running cost.

The intervention operator  M phi(x) = min over displacements xi of
phi(x + xi) + B(xi)  is minimized over the grid-aligned lattice inside a
search box that must cover the transaction cost's declared coercivity
radius. The zero displacement is excluded (it would cost at least K for
no move). Argmin ties break toward the smallest |xi|, then
lexicographically, so extracted policies are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
import scipy.sparse as sp

from .grids import Grid, ScalarField
from .model import CostB, ModelSpec


class CoercivityError(ValueError):
    """Search box does not cover the declared coercivity radius."""


class NonMonotoneStencilError(ValueError):
    """The assembled linear system is not an M-matrix."""


@dataclass
class SearchBox:
    """Max-norm half-width of the intervention search lattice."""

    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("search radius must be positive")


@dataclass(eq=False)
class OperatorStencil:
    """Sparse realization of L with Dirichlet identity rows on the boundary."""

    grid: Grid
    scheme: str
    matrix: sp.csr_matrix
    is_monotone: bool
    row_sum_deviation: float
    boundary_mask: np.ndarray

    @property
    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask


def _flat_strides(shape) -> np.ndarray:
    strides = np.ones(len(shape), dtype=int)
    for k in reversed(range(len(shape) - 1)):
        strides[k] = strides[k + 1] * shape[k + 1]
    return strides


def build_stencil(model: ModelSpec, grid: Grid, scheme: str = "upwind") -> OperatorStencil:
    """Assemble the sparse matrix for L on the grid.

    scheme 'upwind' differences the drift toward the flow and yields an
    M-matrix (needed by the penalized solver); 'central' is second order
    in the drift but only monotone at small cell Peclet number.
    """
    if scheme not in ("upwind", "central"):
        raise ValueError("scheme must be 'upwind' or 'central'")
    n = grid.dim
    shape = np.asarray(grid.shape)
    strides = _flat_strides(grid.shape)
    N = grid.n_nodes
    nodes = grid.nodes
    h = grid.spacing
    r = model.discount

    A = np.asarray(model.diffusion_matrix(nodes), dtype=float)
    mu_bar = np.atleast_2d(np.asarray(model.effective_drift(nodes), dtype=float))
    if mu_bar.shape != (N, n):
        mu_bar = mu_bar.reshape(N, n)

    boundary = grid.boundary_mask
    interior = np.nonzero(~boundary)[0]

    rows, cols, data = [], [], []
    diag = np.full(N, r, dtype=float)

    for k in range(n):
        akk = A[interior, k, k]
        off = akk / h[k] ** 2
        rows += [interior, interior]
        cols += [interior - strides[k], interior + strides[k]]
        data += [-off, -off]
        diag[interior] += 2.0 * off

        b = mu_bar[interior, k]
        if scheme == "upwind":
            pos = np.maximum(b, 0.0) / h[k]
            neg = np.maximum(-b, 0.0) / h[k]
            rows += [interior, interior]
            cols += [interior + strides[k], interior - strides[k]]
            data += [-pos, -neg]
            diag[interior] += pos + neg
        else:
            rows += [interior, interior]
            cols += [interior + strides[k], interior - strides[k]]
            data += [-b / (2.0 * h[k]), b / (2.0 * h[k])]

        for k2 in range(k + 1, n):
            akl = A[interior, k, k2]
            if np.max(np.abs(akl)) < 1e-14:
                continue
            c = 2.0 * akl / (4.0 * h[k] * h[k2])
            for sk, sl in ((1, 1), (-1, -1)):
                rows.append(interior)
                cols.append(interior + sk * strides[k] + sl * strides[k2])
                data.append(-c)
            for sk, sl in ((1, -1), (-1, 1)):
                rows.append(interior)
                cols.append(interior + sk * strides[k] + sl * strides[k2])
                data.append(c)

    rows.append(np.arange(N))
    cols.append(np.arange(N))
    diag_vals = diag.copy()
    diag_vals[boundary] = 1.0
    data.append(diag_vals)

    mat = sp.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
    )
    mat.sum_duplicates()

    coo = mat.tocoo()
    offd = coo.data[(coo.row != coo.col)]
    scale = max(float(np.abs(coo.data).max()), 1.0)
    monotone = bool(offd.size == 0 or offd.max() <= 1e-12 * scale)
    rs = np.asarray(mat.sum(axis=1)).reshape(-1)
    dev = float(np.max(np.abs(rs[~boundary] - r))) if interior.size else 0.0
    return OperatorStencil(grid, scheme, mat, monotone, dev, boundary)


# -- nodewise applications ----------------------------------------------------


def _axis_derivatives(values: np.ndarray, h: float, axis: int):
    """(first_upwindable, second) differences with one-sided edge fallbacks.

    Returns (forward, backward, central, second): each shaped like values,
    with one-sided formulas filling the two edge slices along the axis.
    """
    v = np.moveaxis(values, axis, 0)
    fwd = np.empty_like(v)
    bwd = np.empty_like(v)
    sec = np.empty_like(v)
    fwd[:-1] = (v[1:] - v[:-1]) / h
    fwd[-1] = (v[-1] - v[-2]) / h
    bwd[1:] = (v[1:] - v[:-1]) / h
    bwd[0] = (v[1] - v[0]) / h
    cen = 0.5 * (fwd + bwd)
    sec[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h**2
    sec[0] = (v[0] - 2.0 * v[1] + v[2]) / h**2
    sec[-1] = (v[-1] - 2.0 * v[-2] + v[-3]) / h**2
    back = lambda a: np.moveaxis(a, 0, axis)
    return back(fwd), back(bwd), back(cen), back(sec)


def apply_elliptic(field: ScalarField, model: ModelSpec, stencil: OperatorStencil) -> ScalarField:
    """Nodewise L phi. Boundary values use first-order one-sided differences
    (flagged through ``stencil.boundary_mask``); interior values match the
    assembled matrix."""
    grid = field.grid
    if stencil.grid is not grid and stencil.grid.shape != grid.shape:
        raise ValueError("field and stencil must share the grid")
    vals = field.values
    nodes = grid.nodes
    A = np.asarray(model.diffusion_matrix(nodes), dtype=float).reshape(grid.n_nodes, grid.dim, grid.dim)
    mu_bar = np.asarray(model.effective_drift(nodes), dtype=float).reshape(grid.n_nodes, grid.dim)
    out = model.discount * vals.astype(float).copy()

    firsts = []
    for k in range(grid.dim):
        fwd, bwd, cen, sec = _axis_derivatives(vals, grid.spacing[k], k)
        akk = A[:, k, k].reshape(grid.shape)
        out -= akk * sec
        b = mu_bar[:, k].reshape(grid.shape)
        if stencil.scheme == "upwind":
            d1 = np.where(b >= 0, fwd, bwd)
        else:
            d1 = cen
        out -= b * d1
        firsts.append(cen)

    for k in range(grid.dim):
        for k2 in range(k + 1, grid.dim):
            akl = A[:, k, k2].reshape(grid.shape)
            if np.max(np.abs(akl)) < 1e-14:
                continue
            _, _, cen_k, _ = _axis_derivatives(vals, grid.spacing[k], k)
            _, _, mixed, _ = _axis_derivatives(cen_k, grid.spacing[k2], k2)
            out -= 2.0 * akl * mixed

    return field.with_values(out)


def _apply_jump_detailed(field: ScalarField, model: ModelSpec):
    """(values, per-node off-box mass, total quadrature mass)."""
    grid = field.grid
    zs, ws = model.levy.quadrature()
    N = grid.n_nodes
    base = field.flat
    acc = np.zeros(N)
    off_mass = np.zeros(N)
    if len(zs) == 0:
        return acc, off_mass, 0.0
    x = grid.nodes
    lo, hi = grid.lo, grid.hi
    for zq, wq in zip(zs, ws):
        y = x + np.asarray(model.jump(x, zq), dtype=float)
        vals = field.evaluate(y)
        acc += wq * (vals - base)
        outside = np.any((y < lo) | (y > hi), axis=-1)
        off_mass += wq * outside
    return acc, off_mass, float(ws.sum())


def apply_jump(field: ScalarField, model: ModelSpec) -> tuple[ScalarField, float]:
    """Nodewise I phi by quadrature against the Levy measure.

    Returns the field and the fraction of quadrature mass (averaged over
    nodes) whose argument x + j(x, z) fell outside the box and was served
    by the extension rule.
    """
    acc, off_mass, total = _apply_jump_detailed(field, model)
    frac = float(off_mass.mean() / total) if total > 0 else 0.0
    return field.with_values(acc.reshape(field.grid.shape)), frac


def apply_generator(field: ScalarField, model: ModelSpec, stencil: OperatorStencil) -> ScalarField:
    """Nodewise (L - I) phi, the discounted generator of the problem."""
    lpart = apply_elliptic(field, model, stencil)
    ipart, _ = apply_jump(field, model)
    return field.with_values(lpart.values - ipart.values)


def build_jump_operator(model: ModelSpec, grid: Grid, lip_const: float):
    """Matrix form of I for fields extended with the Lipschitz clamp.

    I u ~= A_I u + lip_const * d, with A_I collecting the interpolation
    weights of the (clipped) jump destinations minus the identity, and d
    the quadrature-weighted off-box distances. Returns
    (A_I, d, per-node off-box mass, total mass).
    """
    zs, ws = model.levy.quadrature()
    N = grid.n_nodes
    d = np.zeros(N)
    off_mass = np.zeros(N)
    if len(zs) == 0:
        return sp.csr_matrix((N, N)), d, off_mass, 0.0
    x = grid.nodes
    lo, hi, h = grid.lo, grid.hi, grid.spacing
    shape = np.asarray(grid.shape)
    strides = _flat_strides(grid.shape)
    all_rows, all_cols, all_data = [], [], []
    diag = np.zeros(N)
    rng_idx = np.arange(N)
    for zq, wq in zip(zs, ws):
        y = x + np.asarray(model.jump(x, zq), dtype=float)
        clipped = np.clip(y, lo, hi)
        dist = np.linalg.norm(y - clipped, axis=-1)
        outside = dist > 0
        off_mass += wq * outside
        d += wq * dist
        t = np.clip((clipped - lo) / h, 0.0, shape - 1.0)
        i0 = np.clip(np.floor(t).astype(int), 0, shape - 2)
        w = t - i0
        for corner in product((0, 1), repeat=grid.dim):
            weight = np.full(N, wq)
            flat = np.zeros(N, dtype=int)
            for k, c in enumerate(corner):
                weight = weight * (w[:, k] if c else 1.0 - w[:, k])
                flat += (i0[:, k] + c) * strides[k]
            all_rows.append(rng_idx)
            all_cols.append(flat)
            all_data.append(weight)
        diag -= wq
    all_rows.append(rng_idx)
    all_cols.append(rng_idx)
    all_data.append(diag)
    A_I = sp.csr_matrix(
        (np.concatenate(all_data), (np.concatenate(all_rows), np.concatenate(all_cols))),
        shape=(N, N),
    )
    A_I.sum_duplicates()
    return A_I, d, off_mass, float(ws.sum())


# -- intervention operator -----------------------------------------------------


def candidate_displacements(grid: Grid, radius: float) -> np.ndarray:
    """Grid-aligned nonzero displacements inside the max-norm search box,
    sorted by (|xi|, lexicographic) so that argmin ties are deterministic."""
    axes = []
    for k in range(grid.dim):
        m = int(np.floor(radius / grid.spacing[k] + 1e-9))
        axes.append(np.arange(-m, m + 1) * grid.spacing[k])
    mesh = np.meshgrid(*axes, indexing="ij")
    cand = np.stack([m.reshape(-1) for m in mesh], axis=-1)
    cand = cand[np.any(cand != 0.0, axis=1)]
    norms = np.linalg.norm(cand, axis=1)
    order = np.lexsort(tuple(cand[:, k] for k in reversed(range(grid.dim))) + (norms,))
    return cand[order]


def apply_intervention(
    field: ScalarField, cost: CostB, search: SearchBox
) -> tuple[ScalarField, np.ndarray]:
    """M phi(x) = min over lattice displacements xi != 0 of phi(x+xi) + B(xi).

    Returns (the minimized field, the per-node minimizing displacement with
    shape (n_nodes, dim)). The search box must cover the cost's declared
    coercivity radius, otherwise the infimum may live outside the lattice.
    """
    if search.radius < cost.coercivity_radius - 1e-12:
        raise CoercivityError(
            f"search radius {search.radius:.6g} does not cover the declared "
            f"coercivity radius {cost.coercivity_radius:.6g}"
        )
    grid = field.grid
    cand = candidate_displacements(grid, search.radius)
    bvals = np.asarray(cost.evaluate(cand), dtype=float).reshape(-1)
    nodes = grid.nodes
    best = np.full(grid.n_nodes, np.inf)
    best_ix = np.zeros(grid.n_nodes, dtype=int)
    for ci in range(len(cand)):
        vals = field.evaluate(nodes + cand[ci]) + bvals[ci]
        better = vals < best
        if np.any(better):
            best[better] = vals[better]
            best_ix[better] = ci
    mfield = ScalarField(
        grid, best.reshape(grid.shape), extension=field.extension,
        lipschitz_constant=field.lipschitz_constant,
    )
    return mfield, cand[best_ix]
