"""Closed-form bound approximations of the exact backup.

Upper bounds (fully-observable relaxations of increasing tightness):
state value, per-action state value, informed per-action value with the
observation kept, and its partitioned refinement. Lower bound: the
observation-blind relaxation. All of them trade the per-belief max inside
the exact backup for a coarser max, so each is linear-algebra cheap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .exact import ValueIterationResult, blind_lower_bound
from .model import Pomdp
from .pwlc import DOMINATION_TOL, AlphaVector, PwlcFn, prune, pwlc_norm

__all__ = [
    "QTable",
    "FibTable",
    "solve_fomdp",
    "mdp_backup",
    "qmdp_backup",
    "fib_backup",
    "fib_fixed_point",
    "fib_aux_state_count",
    "partitioned_fib_backup",
    "umdp_backup",
    "umdp_iterate",
    "mdp_value",
    "save_qtable",
    "load_qtable",
    "save_fib_table",
    "load_fib_table",
]

_FOLD_TOL = 1e-12


@dataclass
class QTable:
    """Action values of the fully observable relaxation, q[s, a]."""

    q: np.ndarray

    def __post_init__(self):
        q = np.ascontiguousarray(self.q, dtype=float)
        if q.ndim != 2:
            raise ValueError(f"q must be 2-D (states x actions), got {q.shape}")
        if not np.isfinite(q).all():
            raise ValueError("q contains non-finite entries")
        q.flags.writeable = False
        object.__setattr__(self, "q", q)

    @cached_property
    def v(self) -> np.ndarray:
        """Per-state optimal value, max over the action axis."""
        v = self.q.max(axis=1)
        v.flags.writeable = False
        return v

    def mdp_fn(self) -> PwlcFn:
        return PwlcFn([AlphaVector(self.v.copy())])

    def qmdp_fn(self) -> PwlcFn:
        return PwlcFn(
            [AlphaVector(self.q[:, a].copy(), action=a) for a in range(self.q.shape[1])]
        )


@dataclass
class FibTable:
    """One linear function per action, alpha[a, s]."""

    alpha: np.ndarray

    def __post_init__(self):
        a = np.ascontiguousarray(self.alpha, dtype=float)
        if a.ndim != 2:
            raise ValueError(f"alpha must be 2-D (actions x states), got {a.shape}")
        if not np.isfinite(a).all():
            raise ValueError("alpha contains non-finite entries")
        a.flags.writeable = False
        object.__setattr__(self, "alpha", a)

    def as_fn(self) -> PwlcFn:
        return PwlcFn(
            [AlphaVector(row.copy(), action=a) for a, row in enumerate(self.alpha)]
        )


def solve_fomdp(m: Pomdp, eps: float = 1e-9) -> QTable:
    """Value-iterate the underlying MDP until the sup-norm step falls to eps."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    v = np.zeros(m.num_states)
    while True:
        q = m.step_reward + m.discount * (m.trans @ v)  # (A, S)
        v_next = q.max(axis=0)
        step = np.abs(v_next - v).max()
        v = v_next
        if step <= eps:
            return QTable(q.T)


def mdp_backup(m: Pomdp, f: PwlcFn) -> PwlcFn:
    """Fully observable relaxation: one vector, best action chosen per state."""
    g = f.matrix.max(axis=0)
    alpha = (m.step_reward + m.discount * (m.trans @ g)).max(axis=0)
    return PwlcFn([AlphaVector(alpha)])


def qmdp_backup(m: Pomdp, f: PwlcFn) -> PwlcFn:
    """Per-action relaxation: the action is committed now, the state becomes
    visible afterwards. |A| tagged vectors, no pruning."""
    g = f.matrix.max(axis=0)
    rows = m.step_reward + m.discount * (m.trans @ g)
    return PwlcFn([AlphaVector(rows[a].copy(), action=a) for a in range(m.num_actions)])


def fib_backup(m: Pomdp, f: PwlcFn) -> PwlcFn:
    """Informed relaxation: keeps the observation in the update but lets every
    state pick its own predecessor vector. |A| tagged vectors."""
    mat = f.matrix
    out = np.array(m.step_reward)
    for a in range(m.num_actions):
        for o in range(m.num_obs):
            # (n, S): candidate i's contribution at each origin state
            contrib = mat @ m.trans_obs[a, o].T
            out[a] += m.discount * contrib.max(axis=0)
    return PwlcFn([AlphaVector(out[a], action=a) for a in range(m.num_actions)])


def fib_aux_state_count(m: Pomdp) -> int:
    """Size of the equivalent fully observable process behind fib_fixed_point."""
    return m.num_states * m.num_actions * m.num_obs


def fib_fixed_point(m: Pomdp, eps: float = 1e-9) -> FibTable:
    """Solve the informed relaxation directly via its equivalent MDP.

    The auxiliary value u(s, a, o) — the best continuation after taking a at s
    and seeing o — satisfies a fully observable fixed-point equation over
    |S||A||O| states. Iterated to sup-norm step eps, then folded back into one
    linear function per action.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    u = np.zeros((m.num_actions, m.num_obs, m.num_states))
    while True:
        c = (m.step_reward + m.discount * u.sum(axis=1)).T  # (S', A')
        u_next = np.einsum("aost,tb->aosb", m.trans_obs, c).max(axis=3)
        step = np.abs(u_next - u).max()
        u = u_next
        if step <= eps:
            break
    return FibTable(m.step_reward + m.discount * u.sum(axis=1))


def _check_partition(partition: Sequence[Sequence[int]], n_states: int) -> list[np.ndarray]:
    seen = np.zeros(n_states, dtype=bool)
    blocks = []
    for block in partition:
        idx = np.asarray(sorted(block), dtype=int)
        if idx.size == 0 or idx.min() < 0 or idx.max() >= n_states:
            raise ValueError(f"partition block {list(block)} out of range")
        if seen[idx].any():
            raise ValueError("partition blocks overlap")
        seen[idx] = True
        blocks.append(idx)
    if not seen.all():
        missing = np.flatnonzero(~seen).tolist()
        raise ValueError(f"partition misses states {missing}")
    return blocks


def partitioned_fib_backup(
    m: Pomdp,
    f: PwlcFn,
    partition: Sequence[Sequence[int]],
    tol: float = DOMINATION_TOL,
) -> PwlcFn:
    """Partitioned informed relaxation: origin states in the same block must
    agree on a predecessor vector per observation; blocks choose independently.

    Singleton blocks reproduce fib_backup; the single-block partition
    reproduces the exact backup. Built as a cross-sum over (observation,
    block) slots with interleaved pruning.
    """
    blocks = _check_partition(partition, m.num_states)
    mat = f.matrix
    all_vectors: list[AlphaVector] = []
    for a in range(m.num_actions):
        current = [AlphaVector(m.step_reward[a].copy(), action=a)]
        for o in range(m.num_obs):
            contrib = m.discount * (mat @ m.trans_obs[a, o].T)  # (n, S)
            for idx in blocks:
                masked = np.zeros_like(contrib)
                masked[:, idx] = contrib[:, idx]
                slot = prune(
                    PwlcFn([AlphaVector(row) for row in masked]), tol=_FOLD_TOL
                )
                combined = [
                    AlphaVector(base.coeffs + add.coeffs, action=a)
                    for base in current
                    for add in slot.vectors
                ]
                current = prune(PwlcFn(combined), tol=_FOLD_TOL).vectors
        all_vectors.extend(current)
    return prune(PwlcFn(all_vectors), tol=tol)


def umdp_backup(
    m: Pomdp, f: PwlcFn, tol: float = DOMINATION_TOL, prune_result: bool = True
) -> PwlcFn:
    """Observation-blind relaxation (lower bound): the update ignores what
    will be seen, so each (action, predecessor) pair yields one candidate."""
    mat = f.matrix
    vectors = [
        AlphaVector(m.step_reward[a] + m.discount * (m.trans[a] @ mat[i]), action=a)
        for a in range(m.num_actions)
        for i in range(mat.shape[0])
    ]
    fn = PwlcFn(vectors)
    return prune(fn, tol=tol) if prune_result else fn


def umdp_iterate(
    m: Pomdp,
    f0: PwlcFn | None = None,
    eps: float = 1e-6,
    max_iters: int = 100,
    tol: float = DOMINATION_TOL,
) -> ValueIterationResult:
    """Anytime iteration of the observation-blind backup from a lower bound.

    Set growth is linear per step but the horizon problem itself has no
    finite solution in general, so this stops at max_iters and reports
    `capped` when the tolerance was not reached.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    current = f0 if f0 is not None else blind_lower_bound(m)
    err = np.inf
    iters = 0
    for _ in range(max_iters):
        nxt = umdp_backup(m, current, tol=tol)
        iters += 1
        err = pwlc_norm(nxt, current)
        current = nxt
        if err <= eps:
            break
    return ValueIterationResult(
        fn=current, bellman_error=float(err), iters=iters, capped=err > eps
    )


def mdp_value(q: QTable, b: np.ndarray, mode: str = "qmdp") -> float:
    """Belief value under a solved relaxation table."""
    if mode == "mdp":
        return float(b @ q.v)
    if mode == "qmdp":
        return float((b @ q.q).max())
    raise ValueError(f"unknown mode {mode!r}; expected 'mdp' or 'qmdp'")


def save_qtable(q: QTable, path) -> None:
    Path(path).write_text(json.dumps({"q": q.q.tolist()}))


def load_qtable(path) -> QTable:
    return QTable(np.array(json.loads(Path(path).read_text())["q"], dtype=float))


def save_fib_table(t: FibTable, path) -> None:
    Path(path).write_text(json.dumps({"alpha": t.alpha.tolist()}))


def load_fib_table(path) -> FibTable:
    return FibTable(np.array(json.loads(Path(path).read_text())["alpha"], dtype=float))
