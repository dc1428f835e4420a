"""Monte Carlo simulation of the jump diffusion and policy cost estimation.

Stepping is Euler-Maruyama with the jump part split at a cutoff: jumps with
|z| >= cutoff arrive as a compound Poisson stream sampled from the (possibly
atomized) big part of the measure, while the compensated small-jump part is
absorbed into the drift through the split's correction term. Subtracting the
big part's mean displacement rate realizes the compensation of the driving
martingale measure; the truncation bias rate is bounded by
integral_{|z|<cutoff} |j(x,z)| nu(dz) and reported.

Running cost accumulates with the state frozen at the left endpoint of each
step and the discount factor integrated exactly over the step,
f(X_k) * (e^{-r t_k} - e^{-r t_{k+1}}) / r, so constant-cost sanity checks
come out exact up to the horizon truncation.

Jump maps must broadcast over paired batches: ``jump(x, z)`` with x of shape
(M, n) accepts either one mark (l,) or per-row marks (M, l).

Reproducibility: single-path simulators draw from one Philox stream keyed by
the seed. The batch estimator processes paths in fixed-size chunks, each
chunk drawing from a Philox stream keyed by (seed, chunk index), so results
are bit-reproducible for a given seed and chunks can run in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .grids import Grid
from .levy import _gauss_cells, small_jump_split
from .model import ModelSpec

CHUNK = 8192
BLOWUP_GUARD = 1e8
MAX_SIM_ATOMS = 128


class PolicyLoopError(RuntimeError):
    """A policy mapped a state back into the action region."""


@dataclass
class ImpulsePolicy:
    """When and how to intervene.

    ``region`` policies carry a grid, a flat action mask and per-node
    displacements; off-node states are classified by their nearest node.
    ``schedule`` policies are (trigger, displacement) rules evaluated on
    the current state. ``never`` is the do-nothing policy.
    """

    kind: str
    grid: Grid | None = None
    action_mask: np.ndarray | None = None
    displacements: np.ndarray | None = None
    rules: list = field(default_factory=list)
    placement_violations: list = field(default_factory=list)
    depth_violations: list = field(default_factory=list)

    @classmethod
    def never(cls) -> "ImpulsePolicy":
        return cls(kind="never")

    @classmethod
    def from_regions(cls, grid, action_mask, displacements,
                     placement_violations=None, depth_violations=None) -> "ImpulsePolicy":
        return cls(
            kind="region",
            grid=grid,
            action_mask=np.asarray(action_mask, dtype=bool).reshape(-1),
            displacements=np.asarray(displacements, dtype=float),
            placement_violations=placement_violations or [],
            depth_violations=depth_violations or [],
        )

    @classmethod
    def threshold(cls, radius: float, target) -> "ImpulsePolicy":
        """Jump to ``target`` whenever |x| >= radius (a deliberately simple,
        typically suboptimal rule used for cross-validation)."""
        target = np.atleast_1d(np.asarray(target, dtype=float))

        def trigger(x):
            return np.linalg.norm(np.atleast_2d(x), axis=-1) >= radius

        def displacement(x):
            return target - np.atleast_2d(x)

        return cls(kind="schedule", rules=[(trigger, displacement)])

    def impulse_batch(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(act mask, displacements) for a batch of states (M, n)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        m, n = x.shape
        if self.kind == "never":
            return np.zeros(m, dtype=bool), np.zeros((m, n))
        if self.kind == "region":
            idx = self.grid.nearest_index(x)
            act = self.action_mask[idx]
            xi = np.zeros((m, n))
            xi[act] = self.displacements[idx[act]]
            return act, xi
        act = np.zeros(m, dtype=bool)
        xi = np.zeros((m, n))
        for trigger, displacement in self.rules:
            hit = np.asarray(trigger(x), dtype=bool) & ~act
            if np.any(hit):
                xi[hit] = np.atleast_2d(displacement(x[hit]))
                act |= hit
        return act, xi

    def impulse_at(self, x: np.ndarray):
        act, xi = self.impulse_batch(np.atleast_2d(x))
        return xi[0] if act[0] else None


@dataclass
class PathRecord:
    """One simulated trajectory with enough detail to replay its cost."""

    times: np.ndarray
    states: np.ndarray                      # (n_steps+1, n), post-impulse states
    brownian_increments: np.ndarray         # (n_steps, m)
    jump_events: list                       # (step index, mark, displacement)
    impulses: list                          # (time, displacement, undiscounted cost)
    running_cost: float
    impulse_cost: float
    discount: float
    truncation_bias: float

    @property
    def total_cost(self) -> float:
        return self.running_cost + self.impulse_cost

    def replay_cost(self, model: ModelSpec) -> float:
        """Recompute the discounted cost from the stored trajectory."""
        r = model.discount
        t = self.times
        w = (np.exp(-r * t[:-1]) - np.exp(-r * t[1:])) / r
        f = np.asarray(model.running_cost(self.states[:-1]), dtype=float).reshape(-1)
        total = float(np.dot(w, f))
        for when, xi, _ in self.impulses:
            total += float(np.exp(-r * when) * np.asarray(
                model.transaction_cost.evaluate(np.atleast_2d(xi))).reshape(-1)[0])
        return total

    def to_csv(self, path) -> None:
        """One row per event: sampled states, jumps and impulses."""
        n = self.states.shape[1]
        cols = ["kind", "time"] + [f"x{k}" for k in range(n)] + ["detail"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for t, x in zip(self.times, self.states):
                fh.write("state," + repr(float(t)) + ","
                         + ",".join(repr(float(c)) for c in x) + ",\n")
            for k, mark, disp in self.jump_events:
                fh.write("jump," + repr(float(self.times[k + 1])) + ","
                         + ",".join(repr(float(c)) for c in np.atleast_1d(disp))
                         + "," + "mark=" + repr(list(np.atleast_1d(mark))) + "\n")
            for when, xi, paid in self.impulses:
                fh.write("impulse," + repr(float(when)) + ","
                         + ",".join(repr(float(c)) for c in np.atleast_1d(xi))
                         + "," + "cost=" + repr(float(paid)) + "\n")


class CostEstimate(NamedTuple):
    j_hat: float
    ci_halfwidth: float
    truncation_bias: float
    n_paths: int
    impulses_per_path: float
    landing_violations: int


@dataclass
class JumpSampler:
    """Big-jump compound Poisson sampler plus small-jump drift correction."""

    marks: np.ndarray          # (Q, l)
    intensities: np.ndarray    # (Q,)
    rate: float
    probs: np.ndarray
    correction: object         # callable x -> drift correction
    bias_bound: object         # callable x -> truncation bias rate

    def compensator(self, model: ModelSpec, x: np.ndarray) -> np.ndarray:
        """integral over the big part of j(x, z) nu(dz), batched (M, n)."""
        x = np.atleast_2d(x)
        out = np.zeros_like(x)
        for zq, lq in zip(self.marks, self.intensities):
            out += lq * np.asarray(model.jump(x, zq), dtype=float).reshape(x.shape)
        return out


def build_jump_sampler(model: ModelSpec, cutoff: float) -> JumpSampler:
    """Split the measure at the cutoff and atomize the big part for sampling.

    Density measures whose big part carries more than MAX_SIM_ATOMS
    quadrature atoms are re-quadratured on a coarse geometric rule from the
    cutoff outward; the compound Poisson stream then samples few atoms per
    event while the compensation stays consistent.
    """
    measure = model.levy
    big, correction, bias_bound = small_jump_split(measure, cutoff, jump=model.jump)
    marks, lams = big.quadrature()
    if measure.kind == "density" and big.n_quad > MAX_SIM_ATOMS:
        edges = cutoff * (measure.z_max / cutoff) ** (np.arange(33) / 32)
        zs, ws = _gauss_cells(edges, npts=2)
        zs = np.concatenate([-zs[::-1], zs])
        ws = np.concatenate([ws[::-1], ws]) * np.asarray(measure.density(zs), dtype=float)
        marks, lams = zs[:, None], ws
    rate = float(lams.sum())
    probs = lams / rate if rate > 0 else lams
    return JumpSampler(marks, lams, rate, probs, correction, bias_bound)


def _rng_for(seed, *extra) -> np.random.Generator:
    key = (int(seed),) + tuple(int(e) for e in extra)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def _discount_weights(r: float, times: np.ndarray) -> np.ndarray:
    return (np.exp(-r * times[:-1]) - np.exp(-r * times[1:])) / r


def _simulate_single(model, policy, x0, horizon, dt, delta_cut, seed) -> PathRecord:
    if dt <= 0 or horizon <= 0:
        raise ValueError("horizon and dt must be positive")
    rng = _rng_for(seed)
    n, m, r = model.dim_state, model.dim_noise, model.discount
    sampler = build_jump_sampler(model, delta_cut)

    n_steps = int(round(horizon / dt))
    times = np.arange(n_steps + 1) * dt
    dweights = _discount_weights(r, times)
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    states = np.empty((n_steps + 1, n))
    states[0] = x
    dws = np.empty((n_steps, m))
    jump_events, impulses = [], []
    running = 0.0
    impulse_cost = 0.0
    bias_rate = sampler.bias_bound(x)

    sqdt = np.sqrt(dt)
    for k in range(n_steps):
        running += dweights[k] * float(np.asarray(model.running_cost(x[None, :])).reshape(-1)[0])
        dw = rng.normal(size=m) * sqdt
        dws[k] = dw
        drift = np.asarray(model.drift(x[None, :]), dtype=float).reshape(n)
        drift = drift + np.asarray(sampler.correction(x[None, :])).reshape(n)
        if sampler.rate > 0:
            drift = drift - sampler.compensator(model, x[None, :]).reshape(n)
        sig = np.asarray(model.volatility(x[None, :]), dtype=float).reshape(n, m)
        x_new = x + drift * dt + sig @ dw
        if sampler.rate > 0:
            for _ in range(rng.poisson(sampler.rate * dt)):
                zi = rng.choice(len(sampler.marks), p=sampler.probs)
                disp = np.asarray(model.jump(x[None, :], sampler.marks[zi])).reshape(n)
                x_new = x_new + disp
                jump_events.append((k, sampler.marks[zi].copy(), disp))
        x = x_new
        if np.linalg.norm(x) > BLOWUP_GUARD:
            raise RuntimeError(f"state blew up at step {k}")
        if policy is not None:
            xi = policy.impulse_at(x)
            if xi is not None:
                t_now = times[k + 1]
                paid = float(np.asarray(model.transaction_cost.evaluate(xi[None, :])).reshape(-1)[0])
                impulse_cost += np.exp(-r * t_now) * paid
                x = x + xi
                impulses.append((float(t_now), xi.copy(), paid))
                if policy.impulse_at(x) is not None:
                    raise PolicyLoopError(
                        "impulse landed in the action region; a valid policy must map "
                        "states into the continuation region"
                    )
        states[k + 1] = x

    fsup = float(np.max(np.abs(model.running_cost(states))))
    trunc = fsup / r * float(np.exp(-r * horizon))
    return PathRecord(
        times=times, states=states, brownian_increments=dws,
        jump_events=jump_events, impulses=impulses,
        running_cost=running, impulse_cost=impulse_cost,
        discount=r, truncation_bias=trunc + bias_rate / max(r, 1e-12),
    )


def simulate_uncontrolled(model, x0, horizon, dt, delta_cut, seed) -> PathRecord:
    """Euler-Maruyama path of the uncontrolled dynamics (deterministic in seed)."""
    return _simulate_single(model, None, x0, horizon, dt, delta_cut, seed)


def simulate_controlled(model, policy, x0, horizon, dt, delta_cut, seed) -> PathRecord:
    """Controlled path: after each Euler step the policy may apply one impulse,
    paying e^{-rt} B(xi); the post-impulse state must leave the action region."""
    return _simulate_single(model, policy, x0, horizon, dt, delta_cut, seed)


def _batch_paths(model, policy, x0, n_paths, horizon, dt, delta_cut, seed,
                 coupled_from=None, collect_terminal=False):
    """Vectorized path engine: cost estimates or coupled-pair distances."""
    n, m, r = model.dim_state, model.dim_noise, model.discount
    sampler = build_jump_sampler(model, delta_cut)
    n_steps = int(round(horizon / dt))
    times = np.arange(n_steps + 1) * dt
    dweights = _discount_weights(r, times)
    sqdt = np.sqrt(dt)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    coupled = coupled_from is not None
    if coupled:
        x0b = np.atleast_1d(np.asarray(coupled_from, dtype=float))

    costs = np.empty(n_paths)
    diff_sum = np.zeros(n_steps + 1)
    n_impulses = 0
    landing_violations = 0
    fmax = 0.0
    terminal = np.empty((n_paths, n)) if collect_terminal else None

    def drift_at(X):
        d = np.asarray(model.drift(X), dtype=float).reshape(len(X), n)
        d = d + np.asarray(sampler.correction(X)).reshape(len(X), n)
        if sampler.rate > 0:
            d = d - sampler.compensator(model, X)
        return d

    for c0 in range(0, n_paths, CHUNK):
        mc = min(CHUNK, n_paths - c0)
        rng = _rng_for(seed, c0 // CHUNK)
        X = np.tile(x0, (mc, 1))
        X2 = np.tile(x0b, (mc, 1)) if coupled else None
        cost = np.zeros(mc)
        if coupled:
            diff_sum[0] += float(np.linalg.norm(X - X2, axis=1).sum())
        for k in range(n_steps):
            fk = np.asarray(model.running_cost(X), dtype=float).reshape(mc)
            cost += dweights[k] * fk
            fm = float(fk.max())
            fmax = fm if fm > fmax else fmax
            dW = rng.normal(size=(mc, m)) * sqdt
            sig = np.asarray(model.volatility(X), dtype=float).reshape(mc, n, m)
            Xn = X + drift_at(X) * dt + np.einsum("pij,pj->pi", sig, dW)
            if coupled:
                sig2 = np.asarray(model.volatility(X2), dtype=float).reshape(mc, n, m)
                X2n = X2 + drift_at(X2) * dt + np.einsum("pij,pj->pi", sig2, dW)
            if sampler.rate > 0:
                counts = rng.poisson(sampler.rate * dt, size=mc)
                while counts.max() > 0:
                    sel = np.nonzero(counts > 0)[0]
                    zi = rng.choice(len(sampler.marks), size=len(sel), p=sampler.probs)
                    zsel = sampler.marks[zi]
                    Xn[sel] += np.asarray(model.jump(X[sel], zsel), dtype=float).reshape(len(sel), n)
                    if coupled:
                        X2n[sel] += np.asarray(model.jump(X2[sel], zsel), dtype=float).reshape(len(sel), n)
                    counts[sel] -= 1
            X = Xn
            if coupled:
                X2 = X2n
            if policy is not None:
                act, xi = policy.impulse_batch(X)
                if np.any(act):
                    paid = np.asarray(model.transaction_cost.evaluate(xi[act]), dtype=float).reshape(-1)
                    cost[act] += np.exp(-r * times[k + 1]) * paid
                    X[act] += xi[act]
                    n_impulses += int(act.sum())
                    act2, _ = policy.impulse_batch(X[act])
                    landing_violations += int(act2.sum())
                    if np.any(act2):
                        raise PolicyLoopError(
                            "impulse landed in the action region; a valid policy must "
                            "map states into the continuation region"
                        )
            if coupled:
                diff_sum[k + 1] += float(np.linalg.norm(X - X2, axis=1).sum())
        costs[c0 : c0 + mc] = cost
        if collect_terminal:
            terminal[c0 : c0 + mc] = X

    out = {
        "costs": costs,
        "fmax": fmax,
        "n_impulses": n_impulses,
        "landing_violations": landing_violations,
    }
    if coupled:
        out["mean_diff"] = diff_sum / n_paths
        out["times"] = times
    if collect_terminal:
        out["terminal"] = terminal
    return out


def sample_terminal_states(model, x0, n_paths, horizon, dt, delta_cut, seed) -> np.ndarray:
    """Terminal states X(T) of uncontrolled paths, shape (n_paths, n)."""
    res = _batch_paths(model, None, x0, n_paths, horizon, dt, delta_cut, seed,
                       collect_terminal=True)
    return res["terminal"]


def estimate_cost(model, policy, x0, n_paths, horizon, dt, delta_cut, seed) -> CostEstimate:
    """Sample mean of the discounted policy cost with a 95% normal CI.

    The truncation bias bound uses the largest running cost actually seen
    along the paths: f_max e^{-r T} / r.
    """
    if n_paths < 2:
        raise ValueError("need n_paths >= 2 for a confidence interval")
    policy = policy or ImpulsePolicy.never()
    res = _batch_paths(model, policy, x0, n_paths, horizon, dt, delta_cut, seed)
    costs = res["costs"]
    j_hat = float(costs.mean())
    ci = 1.96 * float(costs.std(ddof=1)) / float(np.sqrt(n_paths))
    bias = res["fmax"] / model.discount * float(np.exp(-model.discount * horizon))
    return CostEstimate(j_hat, ci, bias, n_paths, res["n_impulses"] / n_paths,
                        res["landing_violations"])


def paired_lipschitz_probe(model, x1, x2, n_paths, horizon, dt, seed,
                           delta_cut: float = 0.05) -> float:
    """Coupled-path growth check for the mean-distance estimate.

    Simulates pairs from x1 and x2 with common noise and jump marks and
    returns max over step times of  E|X1(t) - X2(t)| / (e^{C t} |x1 - x2|)
    with C = 2 C_mu + C_sigma^2 + integral C_j^2 dnu. Values near or below
    1 are consistent with the a-priori growth bound.
    """
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if np.allclose(x1, x2):
        raise ValueError("x1 and x2 must differ")
    _, cj2 = model.cj_certificates()
    growth = 2.0 * model.c_mu + model.c_sigma**2 + cj2
    res = _batch_paths(model, None, x1, n_paths, horizon, dt, delta_cut, seed,
                       coupled_from=x2)
    base = float(np.linalg.norm(x1 - x2))
    ratios = res["mean_diff"] / (np.exp(growth * res["times"]) * base)
    return float(ratios.max())
