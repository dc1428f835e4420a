"""Problem instances: coefficients, costs, declared constants, validation.

A :class:`ModelSpec` bundles the controlled dynamics (drift, volatility,
jump amplitude and its Levy measure), the running and transaction costs,
the discount rate, and the *declared* regularity constants the theory is
phrased in. Constants are inputs, not estimates: :func:`validate_assumptions`
checks the callables against them on Halton samples and reports the worst
observed ratio per assumption.

Standing assumptions checked:

* Lipschitz bounds on drift, volatility, jump amplitude (against C_mu,
  C_sigma, C_j) and the state-integrability of the jump amplitude;
* uniform ellipticity of A(x) = sigma sigma^T / 2 above the declared floor;
* Lipschitz bound and nonnegativity of the running cost (against C_f);
* transaction cost: positive fixed floor K, subadditivity up to K,
  coercivity (min over |xi| = R grows with R);
* discount margin: r > 2 C_mu + C_sigma^2 + integral C_j^2 dnu, strictly.

All coefficient callables must accept batched states (shape (..., n)).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .levy import LevyMeasure, integrate


class DiscountMarginError(ValueError):
    """The discount rate does not dominate the coefficient growth."""


@dataclass
class CostB:
    """Transaction cost B with fixed floor K > 0.

    ``coercivity_radius`` declares how far the intervention search must
    reach before B alone exceeds any value level relevant to the problem;
    the intervention operator refuses search boxes smaller than this.
    B is never evaluated at xi = 0 (candidate sets exclude the zero
    displacement).
    """

    fixed_floor: float
    evaluate: Callable[[np.ndarray], np.ndarray]
    coercivity_radius: float
    family: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.fixed_floor <= 0:
            raise ValueError("the fixed transaction floor K must be positive")
        if self.coercivity_radius <= 0:
            raise ValueError("coercivity_radius must be positive")


@dataclass
class ModelSpec:
    """Coefficients, costs and declared constants for one impulse problem."""

    dim_state: int
    dim_noise: int
    dim_mark: int
    drift: Callable[[np.ndarray], np.ndarray]
    volatility: Callable[[np.ndarray], np.ndarray]
    jump: Callable[[np.ndarray, np.ndarray], np.ndarray]
    levy: LevyMeasure
    running_cost: Callable[[np.ndarray], np.ndarray]
    transaction_cost: CostB
    discount: float
    c_mu: float
    c_sigma: float
    c_f: float
    c_j: Callable[[np.ndarray], np.ndarray]
    ellipticity_floor: float
    family: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.discount <= 0:
            raise ValueError("discount rate must be positive")
        if self.ellipticity_floor <= 0:
            raise ValueError("ellipticity floor must be positive")
        if self.levy.dim_mark not in (0, self.dim_mark) and self.levy.n_quad > 0:
            raise ValueError("levy measure mark dimension does not match dim_mark")

    # -- derived coefficient fields -----------------------------------------

    def diffusion_matrix(self, x: np.ndarray) -> np.ndarray:
        """A(x) = sigma sigma^T / 2, batched to (..., n, n)."""
        sig = np.asarray(self.volatility(x), dtype=float)
        return 0.5 * sig @ np.swapaxes(sig, -1, -2)

    def jump_compensator(self, x: np.ndarray) -> np.ndarray:
        """integral j(x, z) nu(dz), batched to (..., n)."""
        x = np.asarray(x, dtype=float)
        xb = np.atleast_2d(x)
        zs, ws = self.levy.quadrature()
        acc = np.zeros_like(xb)
        for zq, wq in zip(zs, ws):
            acc += wq * np.asarray(self.jump(xb, zq), dtype=float)
        return acc[0] if x.ndim == 1 else acc.reshape(x.shape)

    def effective_drift(self, x: np.ndarray) -> np.ndarray:
        """Compensated drift mu(x) - integral j(x, z) nu(dz)."""
        return np.asarray(self.drift(x), dtype=float) - self.jump_compensator(x)

    def cj_certificates(self) -> tuple[float, float]:
        """(integral C_j dnu, integral C_j^2 dnu)."""
        l1, _ = integrate(self.levy, lambda z: self.c_j(z))
        l2, _ = integrate(self.levy, lambda z: np.asarray(self.c_j(z)) ** 2)
        return float(l1), float(l2)


def lipschitz_bound(model: ModelSpec) -> float:
    """A-priori Lipschitz constant of the value function.

    C_u = C_f / (r - [2 C_mu + C_sigma^2 + integral C_j^2 dnu]); the
    denominator must be positive (discount margin assumption), otherwise
    :class:`DiscountMarginError` is raised.
    """
    _, cj2 = model.cj_certificates()
    margin = model.discount - (2.0 * model.c_mu + model.c_sigma**2 + cj2)
    if margin <= 0:
        raise DiscountMarginError(
            "discount margin violated: need r > 2*C_mu + C_sigma**2 + integral(C_j**2 dnu), "
            f"got r = {model.discount:.6g} against {model.discount - margin:.6g}"
        )
    return model.c_f / margin


# -- assumption validation -----------------------------------------------------


@dataclass
class ValidationCheck:
    name: str
    passed: bool
    worst_ratio: float
    witness: tuple | None = None
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list
    sample_count: int
    seed: int
    box: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> ValidationCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def __str__(self) -> str:
        lines = [f"assumption checks ({self.sample_count} samples, seed {self.seed}):"]
        for c in self.checks:
            tag = "pass" if c.passed else "FAIL"
            lines.append(f"  [{tag}] {c.name}: worst ratio {c.worst_ratio:.4g} {c.detail}")
            if not c.passed and c.witness is not None:
                lines.append(f"         witness: {c.witness}")
        return "\n".join(lines)


def _halton(dim: int, count: int, seed: int) -> np.ndarray:
    return qmc.Halton(d=dim, scramble=True, seed=seed).random(count)


def validate_assumptions(
    model: ModelSpec,
    sample_count: int = 10_000,
    seed: int = 0,
    box: tuple | None = None,
    tol: float = 0.05,
) -> ValidationReport:
    """Numerically audit the standing assumptions on Halton samples.

    Difference quotients are taken both between far-apart sample pairs and
    between each sample and a nearby perturbation of it (local pairs catch
    derivative suprema that far pairs average away). A check fails when the
    worst quotient exceeds the declared constant times (1 + tol), or when a
    coefficient evaluates non-finite (reported as a hard failure with the
    offending location).
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    n = model.dim_state
    if box is None:
        box = (-5.0 * np.ones(n), 5.0 * np.ones(n))
    lo, hi = np.asarray(box[0], dtype=float), np.asarray(box[1], dtype=float)
    span = hi - lo

    base = lo + _halton(n, sample_count, seed) * span
    far = lo + _halton(n, sample_count, seed + 1) * span
    dirs = _halton(n, sample_count, seed + 2) - 0.5
    nrm = np.linalg.norm(dirs, axis=1, keepdims=True)
    nrm[nrm == 0] = 1.0
    local = base + (dirs / nrm) * (1e-3 * float(span.max()))

    xs = np.concatenate([base, base])
    ys = np.concatenate([far, local])
    checks: list[ValidationCheck] = []

    def finite_or_fail(name, arr, where):
        bad = ~np.isfinite(np.asarray(arr, dtype=float))
        if np.any(bad):
            i = int(np.argwhere(bad.reshape(bad.shape[0], -1).any(axis=1))[0][0])
            checks.append(ValidationCheck(
                name, False, np.inf, witness=(tuple(where[i]),),
                detail="non-finite evaluation"))
            return False
        return True

    def quotient_check(name, fn, const, vector=True):
        fx, fy = np.asarray(fn(xs), dtype=float), np.asarray(fn(ys), dtype=float)
        if not (finite_or_fail(name, fx, xs) and finite_or_fail(name, fy, ys)):
            return
        diff = fx - fy
        num = np.linalg.norm(diff.reshape(len(xs), -1), axis=1) if vector else np.abs(diff)
        den = np.linalg.norm(xs - ys, axis=1)
        ok = den > 1e-14
        quot = num[ok] / den[ok]
        worst = float(quot.max()) if quot.size else 0.0
        if const == 0.0:
            passed = worst <= 1e-9
            ratio = np.inf if worst > 1e-9 else 0.0
        else:
            ratio = worst / const
            passed = ratio <= 1.0 + tol
        wi = int(np.argmax(quot)) if quot.size else 0
        witness = (tuple(xs[ok][wi]), tuple(ys[ok][wi])) if not passed else None
        checks.append(ValidationCheck(
            name, passed, ratio if const else worst, witness,
            detail=f"max quotient {worst:.4g} vs declared {const:.4g}"))

    quotient_check("lipschitz_drift", model.drift, model.c_mu)
    quotient_check("lipschitz_volatility", model.volatility, model.c_sigma)
    quotient_check("lipschitz_running_cost", model.running_cost, model.c_f, vector=False)

    # running cost sign
    fvals = np.asarray(model.running_cost(base), dtype=float)
    if finite_or_fail("running_cost_nonnegative", fvals, base):
        worst = float(fvals.min())
        checks.append(ValidationCheck(
            "running_cost_nonnegative", worst >= -1e-12, worst,
            witness=None if worst >= -1e-12 else (tuple(base[int(np.argmin(fvals))]),),
            detail=f"min f = {worst:.4g}"))

    # ellipticity floor of A(x)
    A = model.diffusion_matrix(base[: min(sample_count, 2000)])
    if finite_or_fail("ellipticity", A, base):
        eigs = np.linalg.eigvalsh(A)
        worst = float(eigs.min())
        ratio = worst / model.ellipticity_floor
        checks.append(ValidationCheck(
            "ellipticity", ratio >= 1.0 - tol, ratio,
            witness=None if ratio >= 1.0 - tol else (tuple(base[int(np.argmin(eigs.min(axis=-1)))]),),
            detail=f"min eigenvalue {worst:.4g} vs declared floor {model.ellipticity_floor:.4g}"))

    # jump amplitude Lipschitz bound against C_j(z), on mark draws;
    # mix far and local state pairs (local pairs see derivative suprema)
    zs, _ = model.levy.quadrature()
    if len(zs):
        take = zs[:: max(1, len(zs) // 64)]
        half = min(sample_count, 300)
        pair_idx = np.concatenate([np.arange(half), sample_count + np.arange(half)])
        px, py = xs[pair_idx], ys[pair_idx]
        worst_ratio, witness = 0.0, None
        hard_fail = False
        for zq in take:
            jx = np.asarray(model.jump(px, zq), dtype=float)
            jy = np.asarray(model.jump(py, zq), dtype=float)
            if not (np.all(np.isfinite(jx)) and np.all(np.isfinite(jy))):
                checks.append(ValidationCheck(
                    "lipschitz_jump", False, np.inf, witness=(tuple(zq),),
                    detail="non-finite jump evaluation"))
                hard_fail = True
                break
            num = np.linalg.norm(jx - jy, axis=-1)
            den = np.linalg.norm(px - py, axis=1)
            cj = float(np.asarray(model.c_j(zq if model.dim_mark > 1 else zq[0])).reshape(-1)[0])
            ok = den > 1e-14
            quot = num[ok] / den[ok]
            if cj == 0.0:
                if quot.size and quot.max() > 1e-9:
                    worst_ratio, witness = np.inf, (tuple(zq),)
            elif quot.size:
                ratio = float(quot.max()) / cj
                if ratio > worst_ratio:
                    worst_ratio = ratio
                    witness = (tuple(px[ok][int(np.argmax(quot))]), tuple(zq))
        if not hard_fail:
            passed = worst_ratio <= 1.0 + tol
            checks.append(ValidationCheck(
                "lipschitz_jump", passed, worst_ratio,
                witness=None if passed else witness,
                detail="|j(x,z)-j(y,z)| <= C_j(z) |x-y| on sampled triples"))

    # transaction cost: floor, subadditivity, coercivity
    B = model.transaction_cost
    R = B.coercivity_radius
    xi = (_halton(n, min(sample_count, 4000), seed + 3) - 0.5) * 2.0 * R
    xi = xi[np.linalg.norm(xi, axis=1) > 1e-9]
    bvals = np.asarray(B.evaluate(xi), dtype=float)
    if finite_or_fail("transaction_floor", bvals, xi):
        bmin = float(bvals.min())
        ok = bmin >= B.fixed_floor * (1.0 - tol) - 1e-12
        checks.append(ValidationCheck(
            "transaction_floor", ok, bmin / B.fixed_floor,
            witness=None if ok else (tuple(xi[int(np.argmin(bvals))]),),
            detail=f"sampled min B = {bmin:.4g} vs K = {B.fixed_floor:.4g}"))

        half = len(xi) // 2
        x1, x2 = xi[:half], xi[half : 2 * half]
        lhs = np.asarray(B.evaluate(x1)) + np.asarray(B.evaluate(x2))
        rhs = np.asarray(B.evaluate(x1 + x2)) + B.fixed_floor
        gap = float((lhs - rhs).min())
        ok = gap >= -tol * B.fixed_floor
        wi = int(np.argmin(lhs - rhs))
        checks.append(ValidationCheck(
            "transaction_subadditive", ok, gap,
            witness=None if ok else (tuple(x1[wi]), tuple(x2[wi])),
            detail=f"min of B(a)+B(b)-B(a+b)-K = {gap:.4g}"))

        radii = R * np.array([0.25, 0.5, 1.0, 2.0])
        ring_dirs = _halton(n, 256, seed + 4) - 0.5
        ring_dirs /= np.linalg.norm(ring_dirs, axis=1, keepdims=True)
        ring_mins = [float(np.min(B.evaluate(r * ring_dirs))) for r in radii]
        grows = all(b2 > b1 - 1e-9 for b1, b2 in zip(ring_mins, ring_mins[1:]))
        checks.append(ValidationCheck(
            "transaction_coercive", grows, ring_mins[-1] - ring_mins[0],
            detail=f"min B over |xi|=R for R={list(radii)}: {[round(v, 4) for v in ring_mins]}"))

    # discount margin (strict)
    try:
        cu = lipschitz_bound(model)
        _, cj2 = model.cj_certificates()
        margin = model.discount - (2 * model.c_mu + model.c_sigma**2 + cj2)
        checks.append(ValidationCheck(
            "discount_margin", True, margin,
            detail=f"r - (2*C_mu + C_sigma**2 + integral(C_j**2 dnu)) = {margin:.4g}; "
                   f"value Lipschitz bound {cu:.4g}"))
    except DiscountMarginError as exc:
        checks.append(ValidationCheck("discount_margin", False, -np.inf, detail=str(exc)))

    return ValidationReport(checks, sample_count, seed, (tuple(lo), tuple(hi)))
