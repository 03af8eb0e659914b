"""Exact dynamic programming over PWLC value functions.

The backup operator maps a vector set to the next one by building, per
action, the cross-sum of per-observation transformed candidates (one choice
of predecessor vector per observation), pruning after every fold so the
intermediate sets stay near their useful size. The output equals what full
enumeration followed by a single prune would produce, at a fraction of the
LP work.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .model import OBS_FLOOR, Pomdp, expected_reward, obs_prob
from .pwlc import (
    DOMINATION_TOL,
    AlphaVector,
    PwlcFn,
    eval_pwlc,
    prune,
    pwlc_norm,
)

__all__ = [
    "BackupCapExceeded",
    "MissingActionTagError",
    "DanglingWitnessError",
    "PolicyGraph",
    "ValueIterationResult",
    "blind_lower_bound",
    "exact_backup",
    "value_iteration",
    "lookahead_action",
    "direct_action",
    "extract_policy_graph",
    "save_policy_graph",
    "load_policy_graph",
]

# pruning threshold used inside cross-sum folds; much tighter than the
# user-facing tolerance so interleaving cannot accumulate visible error
_FOLD_TOL = 1e-12


class BackupCapExceeded(RuntimeError):
    """Candidate materialization would exceed the configured cap."""


class MissingActionTagError(ValueError):
    """Direct control requires every vector to carry an action tag."""


class DanglingWitnessError(ValueError):
    """A witness index points outside the predecessor vector set."""


def blind_lower_bound(m: Pomdp) -> PwlcFn:
    """Single constant vector min_{s,a} rho(s,a)/(1-gamma): a guaranteed
    lower bound on the optimal value (every step earns at least the worst
    one-step reward). Tagged with the maximin action so direct control stays
    well-defined."""
    floor = m.step_reward.min() / (1.0 - m.discount)
    a = int(np.argmax(m.step_reward.min(axis=1)))
    vec = AlphaVector(np.full(m.num_states, floor), action=a)
    return PwlcFn([vec])


def _guard(count: int, cap: int) -> None:
    if count > cap:
        raise BackupCapExceeded(
            f"backup would materialize {count} candidate vectors (cap {cap}); "
            "raise max_candidates or shrink the input set"
        )


def exact_backup(
    m: Pomdp,
    f: PwlcFn,
    tol: float = DOMINATION_TOL,
    max_candidates: int = 1_000_000,
) -> PwlcFn:
    """One full Bellman backup of a PWLC function.

    Every output vector is rho(., a) + gamma * sum_o (joint-weight transform of
    the chosen predecessor for o), carries its generating action, and records
    the per-observation predecessor indices as witnesses.
    """
    gam = m.discount
    mat = f.matrix
    _guard(m.num_obs * mat.shape[0], max_candidates)
    all_vectors: list[AlphaVector] = []
    for a in range(m.num_actions):
        # transformed predecessor candidates per observation: (n, S) each
        slots = []
        for o in range(m.num_obs):
            cand = PwlcFn(
                [
                    AlphaVector(gam * (m.trans_obs[a, o] @ mat[i]), witnesses=(i,))
                    for i in range(mat.shape[0])
                ]
            )
            slots.append(prune(cand, tol=_FOLD_TOL))

        current = [AlphaVector(m.step_reward[a].copy(), action=a, witnesses=())]
        for slot in slots:
            _guard(len(current) * len(slot), max_candidates)
            combined = [
                AlphaVector(
                    base.coeffs + add.coeffs,
                    action=a,
                    witnesses=base.witnesses + add.witnesses,
                )
                for base in current
                for add in slot.vectors
            ]
            current = prune(PwlcFn(combined), tol=_FOLD_TOL).vectors
        all_vectors.extend(current)
        _guard(len(all_vectors), max_candidates)
    return prune(PwlcFn(all_vectors), tol=tol)


@dataclass
class ValueIterationResult:
    fn: PwlcFn
    bellman_error: float
    iters: int
    capped: bool = False
    history: list[PwlcFn] | None = None


def value_iteration(
    m: Pomdp,
    f0: PwlcFn | None = None,
    eps: float = 1e-6,
    max_iters: int = 1000,
    tol: float = DOMINATION_TOL,
    max_candidates: int = 1_000_000,
    keep_history: bool = False,
) -> ValueIterationResult:
    """Iterate exact backups until the sup-norm Bellman error drops to eps.

    Starting from the default blind lower bound the iterates are monotone
    nondecreasing. If a backup trips the candidate cap, the last completed
    iterate is returned with `capped` set.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    current = f0 if f0 is not None else blind_lower_bound(m)
    history = [current] if keep_history else None
    err = np.inf
    iters = 0
    capped = False
    for _ in range(max_iters):
        try:
            nxt = exact_backup(m, current, tol=tol, max_candidates=max_candidates)
        except BackupCapExceeded:
            capped = True
            break
        iters += 1
        err = pwlc_norm(nxt, current)
        current = nxt
        if keep_history:
            history.append(current)
        if err <= eps:
            break
    return ValueIterationResult(
        fn=current,
        bellman_error=float(err),
        iters=iters,
        capped=capped,
        history=history,
    )


def lookahead_action(
    m: Pomdp, vfun: Callable[[np.ndarray], float], b: np.ndarray
) -> tuple[int, float]:
    """Greedy one-step expansion against any belief-value callable.

    Observations with probability at or below the impossibility floor
    contribute nothing. Ties resolve to the lowest action id.
    """
    q = np.empty(m.num_actions)
    for a in range(m.num_actions):
        total = expected_reward(m, b, a)
        probs = obs_prob(m, b, a)
        pred = b @ m.trans[a]
        for o in np.flatnonzero(probs > OBS_FLOOR):
            nxt = m.obs[a, :, o] * pred
            nxt /= probs[o]
            total += m.discount * probs[o] * vfun(nxt)
        q[a] = total
    a = int(np.argmax(q))
    return a, float(q[a])


def direct_action(f: PwlcFn, b: np.ndarray) -> int:
    """Action tag of the winning vector at b (reactive control)."""
    _, idx = eval_pwlc(f, b)
    action = f.vectors[idx].action
    if action is None:
        raise MissingActionTagError(f"vector {idx} carries no action tag")
    return int(action)


# ---------------------------------------------------------------------------
# policy graphs
# ---------------------------------------------------------------------------

@dataclass
class PolicyGraph:
    """Finite-state plan distilled from a value-iteration history.

    Node i executes actions[i]; after observing o control moves to
    edges[i][o]. Stage boundaries are kept for inspection; when the cycle is
    closed, earliest-stage nodes loop on themselves so the graph runs forever.
    """

    actions: list[int | None]
    edges: list[list[int | None]]
    stage_of: list[int]
    coeffs: np.ndarray  # (num_nodes, S) vectors backing the greedy start rule
    cycle_closed: bool = True
    start_rule: str = "greedy"

    @property
    def num_nodes(self) -> int:
        return len(self.actions)

    def start_node(self, b: np.ndarray) -> int:
        """Greedy start: best final-stage vector at the seeding belief."""
        last = max(self.stage_of)
        ids = [i for i in range(self.num_nodes) if self.stage_of[i] == last]
        vals = self.coeffs[ids] @ b
        return ids[int(np.argmax(vals))]

    def step(self, node: int, o: int) -> int | None:
        return self.edges[node][o]


def extract_policy_graph(
    history: Sequence[PwlcFn], n_obs: int, close_cycle: bool = True
) -> PolicyGraph:
    """Turn a witness-carrying value-iteration history into a policy graph.

    history[0] is the initial function; later stages' witnesses index into
    the previous stage. Control starts at the newest stage and flows toward
    stage 0, whose nodes self-loop when close_cycle is set.
    """
    if not history:
        raise ValueError("empty history")
    offsets = []
    total = 0
    for fn in history:
        offsets.append(total)
        total += len(fn)
    actions: list[int | None] = []
    edges: list[list[int | None]] = []
    stage_of: list[int] = []
    for stage, fn in enumerate(history):
        for vi, vec in enumerate(fn.vectors):
            node = offsets[stage] + vi
            actions.append(vec.action)
            stage_of.append(stage)
            if stage == 0:
                edges.append([node] * n_obs if close_cycle else [None] * n_obs)
                continue
            if vec.witnesses is None or len(vec.witnesses) != n_obs:
                raise DanglingWitnessError(
                    f"stage {stage} vector {vi} lacks per-observation witnesses"
                )
            prev_size = len(history[stage - 1])
            row = []
            for w in vec.witnesses:
                if not 0 <= w < prev_size:
                    raise DanglingWitnessError(
                        f"stage {stage} vector {vi} references predecessor {w} "
                        f"of {prev_size}"
                    )
                row.append(offsets[stage - 1] + w)
            edges.append(row)
    coeffs = np.vstack([fn.matrix for fn in history])
    return PolicyGraph(
        actions=actions,
        edges=edges,
        stage_of=stage_of,
        coeffs=coeffs,
        cycle_closed=close_cycle,
    )


def save_policy_graph(g: PolicyGraph, path) -> None:
    doc = {
        "start_rule": g.start_rule,
        "cycle_closed": g.cycle_closed,
        "nodes": [
            {
                "id": i,
                "action": g.actions[i],
                "stage": g.stage_of[i],
                "edges": g.edges[i],
                "coeffs": g.coeffs[i].tolist(),
            }
            for i in range(g.num_nodes)
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_policy_graph(path) -> PolicyGraph:
    doc = json.loads(Path(path).read_text())
    nodes = doc["nodes"]
    return PolicyGraph(
        actions=[n["action"] for n in nodes],
        edges=[list(n["edges"]) for n in nodes],
        stage_of=[n["stage"] for n in nodes],
        coeffs=np.array([n["coeffs"] for n in nodes], dtype=float),
        cycle_closed=doc.get("cycle_closed", True),
        start_rule=doc.get("start_rule", "greedy"),
    )
