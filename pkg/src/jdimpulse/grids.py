"""Rectangular grids and grid-sampled scalar fields.

A :class:`ScalarField` knows how to evaluate itself anywhere in R^n:
multilinear interpolation inside the box plus a declared extension rule
outside it. The extension rule is the numerical stand-in for functions
that really live on all of R^n:

``lipschitz_clamp``
    value at the projected boundary point plus ``L * dist``, where ``L``
    is the field's Lipschitz constant (explicit, or measured from the
    nodal values). Default, and the right choice for value functions
    that keep growing off the box.
``clamp``
    value at the projected boundary point (conservative variant).
``linear_extrapolation``
    multilinear extrapolation of the outermost cell.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from functools import cached_property
from itertools import product

import numpy as np

EXTENSIONS = ("lipschitz_clamp", "clamp", "linear_extrapolation")


@dataclass(frozen=True, eq=False)
class Grid:
    """Axis-aligned box [lo_i, hi_i] sampled on a regular lattice.

    ``core_margin`` is the width (in state units) of the boundary collar
    that diagnostics exclude. The collar is still solved for; it is just
    not trusted when residuals and regularity quotients are reported.
    """

    lo: np.ndarray
    hi: np.ndarray
    shape: tuple[int, ...]
    core_margin: float = 0.0

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float)).copy()
        shape = tuple(int(s) for s in np.atleast_1d(self.shape))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "shape", shape)
        if lo.shape != hi.shape or len(shape) != lo.size:
            raise ValueError("lo, hi and shape must agree in dimension")
        if np.any(hi <= lo):
            raise ValueError("need hi > lo on every axis")
        if any(s < 3 for s in shape):
            raise ValueError("need at least 3 nodes per axis")
        if self.core_margin < 0 or 2.0 * self.core_margin >= float(np.min(hi - lo)):
            raise ValueError("core_margin must be nonnegative and leave a nonempty core")

    @property
    def dim(self) -> int:
        return self.lo.size

    @cached_property
    def spacing(self) -> np.ndarray:
        return (self.hi - self.lo) / (np.asarray(self.shape, dtype=float) - 1.0)

    def axis(self, k: int) -> np.ndarray:
        return self.lo[k] + np.arange(self.shape[k]) * self.spacing[k]

    @cached_property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def nodes(self) -> np.ndarray:
        """All node coordinates, shape (n_nodes, dim), C order."""
        mesh = np.meshgrid(*[self.axis(k) for k in range(self.dim)], indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        """Flat mask of the outermost node layer (Dirichlet layer)."""
        mask = np.zeros(self.shape, dtype=bool)
        for k in range(self.dim):
            sl = [slice(None)] * self.dim
            sl[k] = 0
            mask[tuple(sl)] = True
            sl[k] = -1
            mask[tuple(sl)] = True
        return mask.reshape(-1)

    @cached_property
    def core_mask(self) -> np.ndarray:
        """Flat mask of nodes at distance >= core_margin from every face."""
        pts = self.nodes
        ok = np.ones(self.n_nodes, dtype=bool)
        for k in range(self.dim):
            ok &= pts[:, k] - self.lo[k] >= self.core_margin - 1e-12
            ok &= self.hi[k] - pts[:, k] >= self.core_margin - 1e-12
        # never trust the Dirichlet layer even at zero margin
        ok &= ~self.boundary_mask
        return ok

    def refine(self) -> "Grid":
        """Same box with doubled resolution (2N-1 nodes per axis)."""
        return Grid(self.lo, self.hi, tuple(2 * s - 1 for s in self.shape), self.core_margin)

    def nearest_index(self, points: np.ndarray) -> np.ndarray:
        """Flat index of the nearest node for each point, shape (...,)."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        idx = np.rint((pts - self.lo) / self.spacing).astype(int)
        idx = np.clip(idx, 0, np.asarray(self.shape) - 1)
        flat = np.zeros(len(pts), dtype=int)
        stride = 1
        for k in reversed(range(self.dim)):
            flat += idx[:, k] * stride
            stride *= self.shape[k]
        return flat


@dataclass
class ScalarField:
    """Nodal values on a grid together with an off-grid evaluation rule.

    ``lipschitz_constant`` may be pinned explicitly (solvers pin it to the
    model's a-priori bound); otherwise the measured nodal constant is used.
    """

    grid: Grid
    values: np.ndarray
    extension: str = "lipschitz_clamp"
    lipschitz_constant: float | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            vals = vals.reshape(self.grid.shape)
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        if self.extension not in EXTENSIONS:
            raise ValueError(f"unknown extension rule {self.extension!r}")
        self.values = vals

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return replace(self, values=np.asarray(values, dtype=float).reshape(self.grid.shape))

    def discrete_lipschitz(self) -> float:
        """Max difference quotient between adjacent nodes, over all axes."""
        out = 0.0
        for k in range(self.grid.dim):
            d = np.abs(np.diff(self.values, axis=k))
            if d.size:
                out = max(out, float(d.max()) / self.grid.spacing[k])
        return out

    @property
    def lip(self) -> float:
        if self.lipschitz_constant is not None:
            return float(self.lipschitz_constant)
        return self.discrete_lipschitz()

    def evaluate(self, points) -> np.ndarray | float:
        """Multilinear interpolation with the declared extension rule.

        Accepts a single point ``(dim,)``, a batch ``(..., dim)`` or, for
        one-dimensional grids, bare coordinate arrays.
        """
        pts = np.asarray(points, dtype=float)
        scalar_in = False
        if self.grid.dim == 1:
            if pts.ndim == 0:
                pts = pts.reshape(1, 1)
                scalar_in = True
            elif pts.shape[-1] != 1:
                pts = pts[..., None]
        if pts.ndim == 1:
            scalar_in = True
            pts = pts[None, :]
        lead_shape = pts.shape[:-1]
        flat = pts.reshape(-1, self.grid.dim)

        lo, h = self.grid.lo, self.grid.spacing
        nmax = np.asarray(self.grid.shape, dtype=float) - 1.0
        t_raw = (flat - lo) / h
        if self.extension == "linear_extrapolation":
            t = t_raw
        else:
            t = np.clip(t_raw, 0.0, nmax)
        i0 = np.floor(t).astype(int)
        i0 = np.clip(i0, 0, np.asarray(self.grid.shape) - 2)
        w = t - i0

        acc = np.zeros(len(flat))
        for corner in product((0, 1), repeat=self.grid.dim):
            weight = np.ones(len(flat))
            idx = []
            for k, c in enumerate(corner):
                weight = weight * (w[:, k] if c else 1.0 - w[:, k])
                idx.append(i0[:, k] + c)
            acc += weight * self.values[tuple(idx)]

        if self.extension == "lipschitz_clamp":
            clipped = np.clip(flat, lo, self.grid.hi)
            dist = np.linalg.norm(flat - clipped, axis=-1)
            if np.any(dist > 0):
                acc = acc + self.lip * dist

        out = acc.reshape(lead_shape)
        return float(out.reshape(())) if scalar_in else out

    # -- lossless CSV round trip ------------------------------------------

    def to_csv(self, path) -> None:
        g = self.grid
        lipstr = "none" if self.lipschitz_constant is None else repr(float(self.lipschitz_constant))
        header = (
            "# jdimpulse-field dim={d} lo={lo} hi={hi} shape={sh} "
            "core_margin={cm!r} extension={ext} lipschitz={lip}\n"
        ).format(
            d=g.dim,
            lo=",".join(repr(float(v)) for v in g.lo),
            hi=",".join(repr(float(v)) for v in g.hi),
            sh=",".join(str(s) for s in g.shape),
            cm=float(g.core_margin),
            ext=self.extension,
            lip=lipstr,
        )
        cols = [f"x{k}" for k in range(g.dim)] + ["value"]
        lines = [header, ",".join(cols) + "\n"]
        vals = self.flat
        for i, x in enumerate(g.nodes):
            lines.append(",".join(repr(float(c)) for c in x) + "," + repr(float(vals[i])) + "\n")
        with open(path, "w") as fh:
            fh.writelines(lines)

    @classmethod
    def from_csv(cls, path) -> "ScalarField":
        with open(path) as fh:
            header = fh.readline().strip()
            fh.readline()  # column names
            body = fh.read().strip()
        m = re.match(
            r"# jdimpulse-field dim=(\d+) lo=(\S+) hi=(\S+) shape=(\S+) "
            r"core_margin=(\S+) extension=(\S+) lipschitz=(\S+)",
            header,
        )
        if m is None:
            raise ValueError(f"{path}: not a jdimpulse field file")
        dim = int(m.group(1))
        lo = np.array([float(v) for v in m.group(2).split(",")])
        hi = np.array([float(v) for v in m.group(3).split(",")])
        shape = tuple(int(v) for v in m.group(4).split(","))
        grid = Grid(lo, hi, shape, core_margin=float(m.group(5)))
        lipstr = m.group(7)
        lip = None if lipstr == "none" else float(lipstr)
        rows = body.splitlines() if body else []
        if len(rows) != grid.n_nodes:
            raise ValueError(f"{path}: expected {grid.n_nodes} rows, found {len(rows)}")
        vals = np.empty(grid.n_nodes)
        for i, row in enumerate(rows):
            vals[i] = float(row.split(",")[dim])
        return cls(grid, vals.reshape(shape), extension=m.group(6), lipschitz_constant=lip)
