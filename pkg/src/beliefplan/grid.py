"""Grid-based value approximation.

A grid is a finite set of beliefs; a grid value function assigns each point a
value and extends it to the whole simplex through a convex rule — nearest
neighbor, Gaussian kernel weights, or the sawtooth interpolation that passes
through one interior point and the simplex corners. Fixing the interpolation
weights of every reachable posterior turns the update into a finite MDP.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from .bounds import solve_fomdp
from .exact import lookahead_action
from .model import OBS_FLOOR, Pomdp, belief_update, obs_prob
from .pwlc import LpFailureError

__all__ = [
    "Grid",
    "GridValueFn",
    "GridMissingExtremesError",
    "SawtoothResult",
    "nn_eval",
    "kernel_eval",
    "sawtooth_eval",
    "rule_weights",
    "best_interp_lp",
    "grid_backup",
    "interpolation_table",
    "to_grid_mdp",
    "solve_sawtooth",
    "adaptive_expand",
    "save_grid_fn",
    "load_grid_fn",
]

_POINT_TOL = 1e-12  # two points closer than this (L-inf) are the same point
_EXTREME_TOL = 1e-9
_CHUNK = 256  # batch-eval block size; bounds the (chunk x grid) temporaries

RULES = ("nn", "kernel", "sawtooth")


class GridMissingExtremesError(ValueError):
    """Interpolation rules need every simplex corner on the grid."""


@dataclass
class Grid:
    """Finite belief set; rows of `points` are beliefs."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("points must be a nonempty 2-D array of beliefs")
        if pts.min() < -1e-9 or np.abs(pts.sum(axis=1) - 1.0).max() > 1e-9:
            raise ValueError("grid rows must be probability vectors")
        for j in range(pts.shape[0]):
            close = np.abs(pts[j + 1:] - pts[j]).max(axis=1) <= _POINT_TOL
            if close.any():
                k = j + 1 + int(np.argmax(close))
                raise ValueError(f"duplicate grid points at indices {j} and {k}")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @classmethod
    def extremes(cls, n_states: int) -> "Grid":
        return cls(np.eye(n_states))

    @property
    def num_points(self) -> int:
        return self.points.shape[0]

    @property
    def num_states(self) -> int:
        return self.points.shape[1]

    @cached_property
    def extreme_indices(self) -> np.ndarray | None:
        """extreme_indices[s] = grid index of e_s, or None if any is missing."""
        idx = np.empty(self.num_states, dtype=int)
        eye = np.eye(self.num_states)
        for s in range(self.num_states):
            d = np.abs(self.points - eye[s]).max(axis=1)
            j = int(np.argmin(d))
            if d[j] > _EXTREME_TOL:
                return None
            idx[s] = j
        return idx

    @property
    def has_extremes(self) -> bool:
        return self.extreme_indices is not None

    def with_points(self, extra: np.ndarray) -> "Grid":
        return Grid(np.vstack([self.points, np.atleast_2d(extra)]))


@dataclass
class GridValueFn:
    grid: Grid
    values: np.ndarray
    rule: str = "sawtooth"
    sigma: float = 0.25

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValueError(f"unknown rule {self.rule!r}; expected one of {RULES}")
        v = np.ascontiguousarray(self.values, dtype=float)
        if v.shape != (self.grid.num_points,) or not np.isfinite(v).all():
            raise ValueError("values must be finite, one per grid point")
        if self.rule == "kernel" and not self.sigma > 0:
            raise ValueError("kernel rule needs sigma > 0")
        if self.rule == "sawtooth" and not self.grid.has_extremes:
            raise GridMissingExtremesError(
                "sawtooth interpolation needs all simplex corners on the grid"
            )
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def eval(self, b: np.ndarray) -> float:
        if self.rule == "nn":
            return nn_eval(self, b)
        if self.rule == "kernel":
            return kernel_eval(self, b)
        return sawtooth_eval(self, b)

    def eval_many(self, beliefs: np.ndarray) -> np.ndarray:
        """Vectorized eval over rows of beliefs; matches eval pointwise."""
        beliefs = np.atleast_2d(np.asarray(beliefs, dtype=float))
        if self.rule == "nn":
            out = np.empty(beliefs.shape[0])
            for lo in range(0, beliefs.shape[0], _CHUNK):
                chunk = beliefs[lo : lo + _CHUNK]
                d2 = ((chunk[:, None, :] - self.grid.points[None]) ** 2).sum(axis=2)
                out[lo : lo + _CHUNK] = self.values[d2.argmin(axis=1)]
            return out
        if self.rule == "kernel":
            out = np.empty(beliefs.shape[0])
            for lo in range(0, beliefs.shape[0], _CHUNK):
                chunk = beliefs[lo : lo + _CHUNK]
                d2 = ((chunk[:, None, :] - self.grid.points[None]) ** 2).sum(axis=2)
                w = np.exp(-d2 / (2.0 * self.sigma**2))
                out[lo : lo + _CHUNK] = (w @ self.values) / w.sum(axis=1)
            return out
        return _sawtooth_eval_many(self, beliefs)


def _exact_hit(g: GridValueFn, b: np.ndarray) -> int | None:
    d = np.abs(g.grid.points - b).max(axis=1)
    j = int(np.argmin(d))
    return j if d[j] <= _POINT_TOL else None


def nn_eval(g: GridValueFn, b: np.ndarray) -> float:
    d2 = ((g.grid.points - b) ** 2).sum(axis=1)
    return float(g.values[int(np.argmin(d2))])


def kernel_eval(g: GridValueFn, b: np.ndarray) -> float:
    w = np.exp(-((g.grid.points - b) ** 2).sum(axis=1) / (2.0 * g.sigma**2))
    return float(w @ g.values / w.sum())


def _sawtooth_candidates(g: GridValueFn, b: np.ndarray):
    """(candidate values, interior indices, interpolation coefficients, base).

    Candidate 0 is the pure-corner interpolation; the rest pass through one
    interior point each with the largest feasible weight on it.
    """
    ext = g.grid.extreme_indices
    ve = g.values[ext]
    base = float(b @ ve)
    interior = np.setdiff1d(np.arange(g.grid.num_points), ext)
    if interior.size == 0:
        return np.array([base]), interior, np.empty(0), base
    pts = g.grid.points[interior]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(pts > _POINT_TOL, b[None, :] / pts, np.inf)
    c = ratios.min(axis=1)
    interior_base = pts @ ve
    cand = base + c * (g.values[interior] - interior_base)
    return np.concatenate([[base], cand]), interior, c, base


def sawtooth_eval(g: GridValueFn, b: np.ndarray) -> float:
    j = _exact_hit(g, b)
    if j is not None:
        return float(g.values[j])
    cand, _, _, _ = _sawtooth_candidates(g, b)
    return float(cand.min())


def _sawtooth_eval_many(g: GridValueFn, beliefs: np.ndarray) -> np.ndarray:
    ext = g.grid.extreme_indices
    ve = g.values[ext]
    interior = np.setdiff1d(np.arange(g.grid.num_points), ext)
    pts = g.grid.points[interior]
    gain = g.values[interior] - pts @ ve
    out = np.empty(beliefs.shape[0])
    for lo in range(0, beliefs.shape[0], _CHUNK):
        chunk = beliefs[lo : lo + _CHUNK]
        base = chunk @ ve
        best = base.copy()
        if interior.size:
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(
                    pts[None] > _POINT_TOL,
                    chunk[:, None, :] / pts[None],
                    np.inf,
                ).min(axis=2)
            best = np.minimum(best, (base[:, None] + ratios * gain[None]).min(axis=1))
        # grid-point queries return the stored value exactly
        d = np.abs(chunk[:, None, :] - g.grid.points[None]).max(axis=2)
        hit = d.min(axis=1) <= _POINT_TOL
        best[hit] = g.values[d.argmin(axis=1)[hit]]
        out[lo : lo + _CHUNK] = best
    return out


def rule_weights(g: GridValueFn, b: np.ndarray) -> np.ndarray:
    """Convex weights lambda with lambda @ values == eval(b)."""
    n = g.grid.num_points
    lam = np.zeros(n)
    if g.rule == "nn":
        d2 = ((g.grid.points - b) ** 2).sum(axis=1)
        lam[int(np.argmin(d2))] = 1.0
        return lam
    if g.rule == "kernel":
        w = np.exp(-((g.grid.points - b) ** 2).sum(axis=1) / (2.0 * g.sigma**2))
        return w / w.sum()
    j = _exact_hit(g, b)
    if j is not None:
        lam[j] = 1.0
        return lam
    cand, interior, c, _ = _sawtooth_candidates(g, b)
    ext = g.grid.extreme_indices
    k = int(np.argmin(cand))
    if k == 0:
        np.add.at(lam, ext, b)
        return lam
    ji = interior[k - 1]
    ck = c[k - 1]
    lam[ji] = ck
    np.add.at(lam, ext, b - ck * g.grid.points[ji])
    return lam


def best_interp_lp(grid: Grid, values: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    """Tightest convex interpolation: minimize lambda @ values subject to the
    weights reproducing b. The corner points keep it feasible."""
    values = np.asarray(values, dtype=float)
    n = grid.num_points
    a_eq = np.vstack([grid.points.T, np.ones((1, n))])
    b_eq = np.concatenate([b, [1.0]])
    res = linprog(values, A_eq=a_eq, b_eq=b_eq, bounds=[(0, None)] * n, method="highs-ds")
    if not res.success:
        raise LpFailureError(
            f"interpolation LP failed ({res.message}); is every corner on the grid?"
        )
    return float(res.fun), res.x


def grid_backup(m: Pomdp, g: GridValueFn) -> np.ndarray:
    """One value update at every grid point under the function's own rule."""
    pts = g.grid.points
    out = np.empty(g.grid.num_points)
    for j, b in enumerate(pts):
        best = -np.inf
        for a in range(m.num_actions):
            total = float(b @ m.step_reward[a])
            probs = obs_prob(m, b, a)
            for o in np.flatnonzero(probs > OBS_FLOOR):
                total += m.discount * probs[o] * g.eval(belief_update(m, b, a, o))
            best = max(best, total)
        out[j] = best
    return out


def interpolation_table(m: Pomdp, g: GridValueFn) -> np.ndarray:
    """Fixed convex weights of every reachable posterior, (j, a, o, k).

    Rows for impossible observations are left all-zero; they never enter the
    induced transition matrix.
    """
    n = g.grid.num_points
    lam = np.zeros((n, m.num_actions, m.num_obs, n))
    for j, b in enumerate(g.grid.points):
        for a in range(m.num_actions):
            probs = obs_prob(m, b, a)
            for o in np.flatnonzero(probs > OBS_FLOOR):
                lam[j, a, o] = rule_weights(g, belief_update(m, b, a, o))
    return lam


def to_grid_mdp(m: Pomdp, grid: Grid, lam: np.ndarray) -> Pomdp:
    """Collapse the belief process onto the grid: grid points become states,
    fixed weights route each (action, observation) posterior back to points.
    Returned as a degenerate single-observation process so the MDP solvers
    apply directly."""
    n = grid.num_points
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (n, m.num_actions, m.num_obs, n):
        raise ValueError(
            f"lambda table must have shape {(n, m.num_actions, m.num_obs, n)}, got {lam.shape}"
        )
    if lam.min() < -1e-9:
        raise ValueError("lambda weights must be nonnegative")
    row_sums = lam.sum(axis=3)
    ok = (np.abs(row_sums - 1.0) <= 1e-9) | (np.abs(row_sums) <= 1e-9)
    if not ok.all():
        raise ValueError("lambda rows must sum to 1 (or be all-zero when unreachable)")

    trans = np.zeros((m.num_actions, n, n))
    reward = np.zeros((m.num_actions, n, n))
    for a in range(m.num_actions):
        for j, b in enumerate(grid.points):
            probs = obs_prob(m, b, a)
            trans[a, j] = probs @ lam[j, a]
            reward[a, j, :] = b @ m.step_reward[a]
    obs = np.ones((m.num_actions, n, 1))
    return Pomdp(trans=trans, obs=obs, reward=reward, discount=m.discount)


@dataclass
class SawtoothResult:
    fn: GridValueFn
    rounds: int
    converged: bool


def solve_sawtooth(
    m: Pomdp,
    grid: Grid,
    eps: float = 1e-6,
    max_rounds: int = 50,
    vals0: np.ndarray | None = None,
) -> SawtoothResult:
    """Alternate between freezing the minimizing interpolations and solving
    the induced finite MDP, warm-starting each solve from the last values.

    Seeded with the per-action fully observable bound so iterates start above
    the target and tighten downwards; vals0 overrides the seed (useful when a
    freshly grown grid already carries near-converged values).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if vals0 is not None:
        vals = np.asarray(vals0, dtype=float).copy()
        if vals.shape != (grid.num_points,):
            raise ValueError(f"vals0 must have shape ({grid.num_points},)")
    else:
        q = solve_fomdp(m, eps=min(eps, 1e-9))
        vals = (grid.points @ q.q).max(axis=1)
    inner_tol = max(eps * (1.0 - m.discount), 1e-15)
    converged = False
    rounds = 0
    for _ in range(max_rounds):
        gf = GridValueFn(grid, vals, rule="sawtooth")
        mdp = to_grid_mdp(m, grid, interpolation_table(m, gf))
        v = vals.copy()
        while True:
            v_next = (mdp.step_reward + mdp.discount * (mdp.trans @ v)).max(axis=0)
            step = np.abs(v_next - v).max()
            v = v_next
            if step <= inner_tol:
                break
        rounds += 1
        change = np.abs(v - vals).max()
        vals = v
        if change <= eps:
            converged = True
            break
    return SawtoothResult(
        fn=GridValueFn(grid, vals, rule="sawtooth"), rounds=rounds, converged=converged
    )


def adaptive_expand(
    m: Pomdp, g: GridValueFn, rng: np.random.Generator, max_steps: int = 1000
) -> np.ndarray:
    """Grow the grid by simulation: from each corner, follow the rule-greedy
    action with sampled observations until the belief leaves the known set;
    that belief is the new point. Corners whose walk never escapes within
    max_steps are skipped with a warning."""
    known = [g.grid.points]
    added = []
    for s in range(m.num_states):
        b = np.zeros(m.num_states)
        b[s] = 1.0
        found = None
        for _ in range(max_steps):
            a, _ = lookahead_action(m, g.eval, b)
            probs = np.clip(obs_prob(m, b, a), 0.0, None)
            o = int(rng.choice(m.num_obs, p=probs / probs.sum()))
            b = belief_update(m, b, a, o)
            dists = [np.abs(pts - b).max(axis=1).min() for pts in known if len(pts)]
            if min(dists) > _POINT_TOL:
                found = b
                break
        if found is None:
            warnings.warn(
                f"no novel belief reached from corner {s} within {max_steps} steps",
                stacklevel=2,
            )
        else:
            added.append(found)
            known.append(found[None, :])
    if not added:
        return np.empty((0, m.num_states))
    return np.vstack(added)


def save_grid_fn(g: GridValueFn, path) -> None:
    doc = {
        "points": g.grid.points.tolist(),
        "values": g.values.tolist(),
        "rule": g.rule,
        "sigma": g.sigma,
    }
    Path(path).write_text(json.dumps(doc))


def load_grid_fn(path) -> GridValueFn:
    doc = json.loads(Path(path).read_text())
    return GridValueFn(
        Grid(np.array(doc["points"], dtype=float)),
        np.array(doc["values"], dtype=float),
        rule=doc["rule"],
        sigma=doc.get("sigma", 0.25),
    )
