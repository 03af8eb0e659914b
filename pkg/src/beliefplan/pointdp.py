"""Single-point vector backups and the lower bounds built from them.

Backing up one belief produces one tagged vector — the piece of the full
one-step update that is optimal at that point. Doing this over a grid gives a
cheap set-valued update that under-cuts the full update everywhere; folding
the vectors into a growing set instead gives a stable, anytime lower bound.
Two heuristics pick the points: value-ordered simplex corners, and reversed
greedy simulation traces started from them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exact import blind_lower_bound, lookahead_action
from .fsm import FsmController, UnevaluatedControllerError
from .grid import Grid
from .model import Pomdp, belief_update, obs_prob
from .pwlc import DOMINATION_TOL, DUPLICATE_TOL, AlphaVector, PwlcFn, prune

__all__ = [
    "LowerBoundFn",
    "fsm_lower_bound",
    "point_backup",
    "gl_update",
    "gl_iterate",
    "incremental_update",
    "order_extremes",
    "simulate_point_sequence",
]

MAX_LOWER_BOUND_VECTORS = 10_000


@dataclass
class LowerBoundFn:
    """A PWLC set maintained as a lower bound.

    fsm_seeded certifies the starting set came from an evaluated controller
    (so the bound really is below the target and stays there under point
    additions); capped marks an anytime result cut short by the vector cap.
    """

    fn: PwlcFn
    fsm_seeded: bool = False
    capped: bool = False


def fsm_lower_bound(m: Pomdp, c: FsmController) -> LowerBoundFn:
    """Seed a lower bound from an evaluated controller's value rows."""
    if c.values is None:
        raise UnevaluatedControllerError("controller must be evaluated first")
    vecs = [
        AlphaVector(row.copy(), action=int(c.output[x]))
        for x, row in enumerate(c.values)
    ]
    return LowerBoundFn(PwlcFn(vecs), fsm_seeded=True)


def point_backup(m: Pomdp, f: PwlcFn, b: np.ndarray) -> AlphaVector:
    """The one-step-update vector that is optimal at b.

    Per action, each observation independently picks the piece of f that wins
    under the predicted weight b @ W[a, o]; the per-action vectors compete by
    their value at b. Ties go to the lowest action/piece index.
    """
    mat = f.matrix
    best: AlphaVector | None = None
    best_val = -np.inf
    for a in range(m.num_actions):
        vec = m.step_reward[a].copy()
        wit = []
        for o in range(m.num_obs):
            w = b @ m.trans_obs[a, o]
            i = int(np.argmax(mat @ w))
            wit.append(i)
            vec += m.discount * (m.trans_obs[a, o] @ mat[i])
        val = float(vec @ b)
        if best is None or val > best_val:
            best = AlphaVector(vec, action=a, witnesses=tuple(wit))
            best_val = val
    return best


def gl_update(m: Pomdp, f: PwlcFn, grid: Grid) -> PwlcFn:
    """Back up every grid point against f; duplicates collapse, so the result
    has at most one vector per point. Not merged with f — on its own this
    update runs below the full one everywhere and is not a contraction."""
    out: list[AlphaVector] = []
    for b in grid.points:
        alpha = point_backup(m, f, b)
        if not any(
            np.abs(alpha.coeffs - u.coeffs).max() <= DUPLICATE_TOL for u in out
        ):
            out.append(alpha)
    return PwlcFn(out)


def gl_iterate(m: Pomdp, grid: Grid, f0: PwlcFn | None = None, cycles: int = 1) -> PwlcFn:
    """Repeated grid-restricted updates, each replacing the whole set.

    Convergence is not guaranteed for discounted problems — the update is not
    a contraction. Prefer incremental_update when a stable bound matters.
    """
    f = blind_lower_bound(m) if f0 is None else f0
    for _ in range(cycles):
        f = gl_update(m, f, grid)
    return f


def incremental_update(
    m: Pomdp,
    lb: LowerBoundFn,
    points,
    max_vectors: int = MAX_LOWER_BOUND_VECTORS,
    batch: bool = False,
    full_prune: bool = False,
) -> LowerBoundFn:
    """Union point backups into the set, one point at a time.

    Sequential by default: later points are backed up against the already
    grown set. batch=True computes every backup against the incoming set
    instead. A new vector is admitted only when no current vector already
    covers it pointwise (within the domination tolerance); afterwards old
    vectors pointwise-covered by an admitted one are dropped, so evaluation
    never decreases anywhere. full_prune=True additionally runs the LP-based
    redundancy filter over the result — smaller sets, same values up to the
    tolerance, at the cost of one LP per survivor.

    Hitting max_vectors stops the pass early and flags the (still valid,
    still improved) result as capped.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    current = list(lb.fn.vectors)
    added: list[AlphaVector] = []
    capped = False
    for b in points:
        f = lb.fn if batch else PwlcFn(current)
        alpha = point_backup(m, f, b)
        covered = any(
            (alpha.coeffs <= u.coeffs + DOMINATION_TOL).all() for u in current
        )
        if covered:
            continue
        if len(current) + 1 > max_vectors:
            capped = True
            break
        current.append(alpha)
        added.append(alpha)

    if added:
        kept = []
        for u in lb.fn.vectors:
            if any((u.coeffs <= v.coeffs).all() for v in added):
                continue
            kept.append(u)
        current = kept + added
    fn = PwlcFn(current)
    if full_prune:
        fn = prune(fn, tol=DOMINATION_TOL)
    return LowerBoundFn(fn, fsm_seeded=lb.fsm_seeded, capped=capped or lb.capped)


def order_extremes(m: Pomdp, f: PwlcFn) -> np.ndarray:
    """Simplex corners ordered for updating: breadth-first from the state with
    the highest per-state estimate, over the symmetrized positive-transition
    graph. Ties and unreachable states fall back to index order. Rows of the
    returned array are the corner beliefs."""
    n = m.num_states
    per_state = f.matrix.max(axis=0)
    start = int(np.argmax(per_state))
    linked = (m.trans > 1e-12).any(axis=0)
    linked = linked | linked.T
    dist = np.full(n, np.inf)
    dist[start] = 0.0
    frontier = [start]
    d = 0
    while frontier:
        d += 1
        nxt = []
        for s in frontier:
            for t in np.flatnonzero(linked[s]):
                if dist[t] == np.inf:
                    dist[t] = d
                    nxt.append(int(t))
        frontier = nxt
    order = sorted(range(n), key=lambda s: (dist[s], s))
    return np.eye(n)[order]


def simulate_point_sequence(
    m: Pomdp, b0: np.ndarray, f: PwlcFn, length: int, rng: np.random.Generator
) -> np.ndarray:
    """Greedy-lookahead walk from b0 with sampled observations; the visited
    beliefs come back most-recent-first, ready to be updated in that order so
    improvements propagate back toward the start point."""
    if length < 1:
        raise ValueError("length must be at least 1")
    b = np.asarray(b0, dtype=float).copy()
    visited = [b.copy()]
    for _ in range(length - 1):
        a, _ = lookahead_action(m, f.value, b)
        probs = np.clip(obs_prob(m, b, a), 0.0, None)
        o = int(rng.choice(m.num_obs, p=probs / probs.sum()))
        b = belief_update(m, b, a, o)
        visited.append(b.copy())
    return np.vstack(visited[::-1])
