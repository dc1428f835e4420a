"""Config files: one TOML (or JSON) document drives every CLI subcommand.

Sections: [model], [levy], [grid], [solver], [simulate], [diagnostics].
Coefficients come from named built-in families with numeric parameters;
arbitrary callables are available through the library API only. Declared
constants are derived from the family parameters (they are exact for every
built-in) and may be overridden in [model.constants].

Built-in families
-----------------
drift:            zero | constant {value} | affine {slope, offset}
volatility:       constant {value | matrix}
jump:             mark | scaled_mark {scale} | state_modulated {kappa}
running_cost:     abs {scale, center} | huber {scale, width, center}
transaction_cost: linear_abs {fixed, slope, coercivity_radius}
                  | root_abs {fixed, slope, coercivity_radius}
levy:             finite_atoms {atoms = [[mark, intensity], ...]}
                  | exp_tail {c, a} | tempered_power {c, alpha, a}
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .diagnostics import DiagnosticThresholds
from .grids import Grid
from .levy import LevyMeasure, align_marks
from .model import CostB, ModelSpec
from .solver import SolverParams


class ConfigError(ValueError):
    pass


@dataclass
class SimulateConfig:
    n_paths: int = 100_000
    dt: float = 0.005
    horizon: float | None = None     # defaults to 40 / r
    delta_cut: float = 0.05
    seed: int = 7
    x0: list = field(default_factory=lambda: [0.0])


@dataclass
class Config:
    model: ModelSpec
    grid: Grid
    solver: SolverParams
    simulate: SimulateConfig
    diagnostics: DiagnosticThresholds
    raw: dict
    sha256: str
    path: str

    def reproducibility_stanza(self, extra: dict | None = None) -> str:
        lines = [
            "-- reproducibility --",
            f"config: {self.path}",
            f"config_sha256: {self.sha256}",
            f"grid: lo={[float(v) for v in self.grid.lo]} hi={[float(v) for v in self.grid.hi]} "
            f"shape={list(self.grid.shape)} core_margin={self.grid.core_margin}",
            f"solver: scheme={self.solver.scheme} eps_levels={self.solver.eps_levels} "
            f"newton_tol={self.solver.newton_tol} tol_outer={self.solver.tol_outer} "
            f"tol_region={self.solver.tol_region}",
            f"simulate: seed={self.simulate.seed} n_paths={self.simulate.n_paths} "
            f"dt={self.simulate.dt} horizon={self.simulate.horizon} "
            f"delta_cut={self.simulate.delta_cut}",
        ]
        for k, v in (extra or {}).items():
            lines.append(f"{k}: {v}")
        return "\n".join(lines) + "\n"


def _need(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"missing '{key}' in [{where}]")
    return section[key]


def _build_drift(spec: dict, n: int):
    fam = spec.get("family", "zero")
    if fam == "zero":
        return (lambda x: np.zeros_like(np.atleast_2d(np.asarray(x, dtype=float)))), 0.0
    if fam == "constant":
        b = np.broadcast_to(np.asarray(spec.get("value", 0.0), dtype=float), (n,))
        return (lambda x: np.broadcast_to(b, np.atleast_2d(x).shape).copy()), 0.0
    if fam == "affine":
        a = np.asarray(spec.get("slope", 0.0), dtype=float)
        A = np.diag(np.broadcast_to(a, (n,))) if a.ndim < 2 else a
        b = np.broadcast_to(np.asarray(spec.get("offset", 0.0), dtype=float), (n,))
        cmu = float(np.linalg.norm(A, 2))
        return (lambda x: np.atleast_2d(x) @ A.T + b), cmu
    raise ConfigError(f"unknown drift family {fam!r}")


def _build_volatility(spec: dict, n: int, m: int):
    fam = spec.get("family", "constant")
    if fam != "constant":
        raise ConfigError(f"unknown volatility family {fam!r}")
    if "matrix" in spec:
        sig = np.asarray(spec["matrix"], dtype=float).reshape(n, m)
    else:
        sig = float(_need(spec, "value", "model.volatility")) * np.eye(n, m)
    lam = float(np.linalg.eigvalsh(0.5 * sig @ sig.T).min())
    if lam <= 0:
        raise ConfigError("volatility must be uniformly elliptic (sigma sigma^T positive definite)")

    def vol(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.broadcast_to(sig, x.shape[:-1] + (n, m)).copy()

    return vol, 0.0, lam


def _zero_cj(z):
    z = np.asarray(z, dtype=float)
    return 0.0 if z.ndim == 0 else np.zeros(z.shape[0])


def _build_jump(spec: dict, n: int, l: int):
    fam = spec.get("family", "mark")

    if fam == "mark":
        if l != n:
            raise ConfigError("jump family 'mark' needs dim_mark == dim_state")
        return (lambda x, z: align_marks(x, z)[1].copy()), _zero_cj
    if fam == "scaled_mark":
        c = float(spec.get("scale", 1.0))
        return (lambda x, z: c * align_marks(x, z)[1]), _zero_cj
    if fam == "state_modulated":
        if n != 1 or l != 1:
            raise ConfigError("jump family 'state_modulated' is one-dimensional")
        kappa = float(spec.get("kappa", 0.3))

        def jmp(x, z):
            xb, zb = align_marks(x, z)
            return zb * (1.0 + kappa * np.tanh(xb))

        return jmp, (lambda z: abs(kappa) * np.abs(np.asarray(z, dtype=float)))
    raise ConfigError(f"unknown jump family {fam!r}")


def _build_running_cost(spec: dict, n: int):
    fam = spec.get("family", "abs")
    scale = float(spec.get("scale", 1.0))
    center = np.broadcast_to(np.asarray(spec.get("center", 0.0), dtype=float), (n,))
    if fam == "abs":
        return (lambda x: scale * np.linalg.norm(np.atleast_2d(x) - center, axis=-1)), scale
    if fam == "huber":
        width = float(spec.get("width", 1.0))

        def f(x):
            d = np.linalg.norm(np.atleast_2d(x) - center, axis=-1)
            return scale * np.where(d <= width, 0.5 * d**2 / width, d - 0.5 * width)

        return f, scale
    raise ConfigError(f"unknown running_cost family {fam!r}")


def _build_transaction(spec: dict):
    fam = spec.get("family", "linear_abs")
    k = float(_need(spec, "fixed", "model.transaction_cost"))
    slope = float(spec.get("slope", 0.0))
    radius = float(_need(spec, "coercivity_radius", "model.transaction_cost"))
    if fam == "linear_abs":
        ev = lambda xi: k + slope * np.linalg.norm(np.atleast_2d(xi), axis=-1)
    elif fam == "root_abs":
        ev = lambda xi: k + slope * np.sqrt(np.linalg.norm(np.atleast_2d(xi), axis=-1))
    else:
        raise ConfigError(f"unknown transaction_cost family {fam!r}")
    return CostB(fixed_floor=k, evaluate=ev, coercivity_radius=radius,
                 family={"name": fam, "fixed": k, "slope": slope})


def _build_levy(spec: dict) -> LevyMeasure:
    kind = spec.get("kind", "finite_atoms")
    if kind == "finite_atoms":
        atoms = [(row[0], float(row[1])) for row in spec.get("atoms", [])]
        return LevyMeasure.finite_atoms(atoms)
    if kind == "density":
        fam = _need(spec, "family", "levy")
        kw = {}
        for key in ("z_min", "z_max", "cells"):
            if key in spec:
                kw[key] = spec[key]
        if fam == "exp_tail":
            return LevyMeasure.exp_tail(c=float(spec.get("c", 1.0)), a=float(spec.get("a", 1.0)), **kw)
        if fam == "tempered_power":
            return LevyMeasure.tempered_power(
                c=float(spec.get("c", 0.1)), alpha=float(spec.get("alpha", 0.5)),
                a=float(spec.get("a", 1.0)), **kw)
        raise ConfigError(f"unknown density family {fam!r}")
    raise ConfigError(f"unknown levy kind {kind!r}")


def load_config(path) -> Config:
    """Parse a config file into model, grid, solver and simulation settings."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    data = p.read_bytes()
    sha = hashlib.sha256(data).hexdigest()
    try:
        if p.suffix == ".json":
            raw = json.loads(data.decode())
        else:
            raw = tomllib.loads(data.decode())
    except Exception as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from None

    for section in ("model", "grid"):
        if section not in raw:
            raise ConfigError(f"missing [{section}] section")

    msec = raw["model"]
    n = int(msec.get("dim_state", 1))
    m = int(msec.get("dim_noise", n))
    l = int(msec.get("dim_mark", n))
    drift, cmu = _build_drift(msec.get("drift", {}), n)
    vol, csig, lam = _build_volatility(_need(msec, "volatility", "model"), n, m)
    jump, cj = _build_jump(msec.get("jump", {}), n, l)
    f, cf = _build_running_cost(msec.get("running_cost", {}), n)
    cost = _build_transaction(_need(msec, "transaction_cost", "model"))
    levy = _build_levy(raw.get("levy", {"kind": "finite_atoms", "atoms": []}))

    consts = msec.get("constants", {})
    model = ModelSpec(
        dim_state=n, dim_noise=m, dim_mark=l,
        drift=drift, volatility=vol, jump=jump, levy=levy,
        running_cost=f, transaction_cost=cost,
        discount=float(_need(msec, "discount", "model")),
        c_mu=float(consts.get("c_mu", cmu)),
        c_sigma=float(consts.get("c_sigma", csig)),
        c_f=float(consts.get("c_f", cf)),
        c_j=cj,
        ellipticity_floor=float(msec.get("ellipticity_floor", lam)),
        family={"name": msec.get("name", p.stem)},
    )

    gsec = raw["grid"]
    grid = Grid(
        np.asarray(_need(gsec, "lo", "grid"), dtype=float),
        np.asarray(_need(gsec, "hi", "grid"), dtype=float),
        tuple(int(s) for s in np.atleast_1d(_need(gsec, "shape", "grid"))),
        core_margin=float(gsec.get("core_margin", 0.0)),
    )

    ssec = raw.get("solver", {})
    solver = SolverParams(
        scheme=ssec.get("scheme", "upwind"),
        eps_levels=int(ssec.get("eps_levels", 44)),
        newton_tol=float(ssec.get("newton_tol", 1e-10)),
        tol_outer=ssec.get("tol_outer"),
        tol_region=ssec.get("tol_region"),
        max_outer=int(ssec.get("max_outer", 120)),
        search_radius=ssec.get("search_radius"),
        off_box_threshold=float(ssec.get("off_box_threshold", 1e-3)),
    )

    sim = raw.get("simulate", {})
    simulate = SimulateConfig(
        n_paths=int(sim.get("n_paths", 100_000)),
        dt=float(sim.get("dt", 0.005)),
        horizon=sim.get("horizon"),
        delta_cut=float(sim.get("delta_cut", 0.05)),
        seed=int(sim.get("seed", 7)),
        x0=list(np.atleast_1d(sim.get("x0", [0.0] * n))),
    )
    if simulate.horizon is None:
        simulate.horizon = 40.0 / model.discount

    dsec = raw.get("diagnostics", {})
    diagnostics = DiagnosticThresholds(
        lipschitz_tol=float(dsec.get("lipschitz_tol", 0.10)),
        holder_alphas=tuple(dsec.get("holder_alphas", (0.25, 0.5, 0.75))),
        holder_margin=float(dsec.get("holder_margin", 1.0)),
        residual_factor=float(dsec.get("residual_factor", 10.0)),
        smooth_fit_min_rate=float(dsec.get("smooth_fit_min_rate", 0.5)),
    )
    return Config(model, grid, solver, simulate, diagnostics, raw, sha, str(p))
