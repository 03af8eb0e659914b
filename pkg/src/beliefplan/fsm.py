"""Finite-state machine controllers.

A controller is a memory automaton: memory state x emits action output[x],
then jumps to transition[x, o] on observation o. Its long-run value is the
solution of one linear system over the joint (memory, world-state) space;
improvement grafts the vectors of an exact backup onto the machine as new
memory states.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .exact import exact_backup, lookahead_action
from .model import Pomdp, belief_update
from .pwlc import DOMINATION_TOL, AlphaVector, PwlcFn

__all__ = [
    "FsmController",
    "UnevaluatedControllerError",
    "HansenResult",
    "evaluate_fsm",
    "fsm_value",
    "fsm_step",
    "h_fsm_update",
    "make_one_action_fsm",
    "hansen_improve",
    "hansen_loop",
    "controller_policy",
    "save_fsm",
    "load_fsm",
]

_DEDUP_TOL = 1e-12


class UnevaluatedControllerError(ValueError):
    """Operation needs a controller with its value table attached."""


@dataclass
class FsmController:
    """Moore machine over observations: output[x] is the action, transition[x, o]
    the successor memory state. `values[x, s]` is filled in by evaluate_fsm."""

    output: np.ndarray
    transition: np.ndarray
    values: np.ndarray | None = None
    name: str | None = None

    def __post_init__(self):
        out = np.ascontiguousarray(self.output, dtype=int)
        tr = np.ascontiguousarray(self.transition, dtype=int)
        if out.ndim != 1 or out.size == 0:
            raise ValueError("output must be a nonempty 1-D action array")
        if (out < 0).any():
            raise ValueError("output contains negative action ids")
        if tr.ndim != 2 or tr.shape[0] != out.size:
            raise ValueError(
                f"transition must be (|M|, |O|); got {tr.shape} for |M|={out.size}"
            )
        if tr.min() < 0 or tr.max() >= out.size:
            raise ValueError("transition targets outside the memory set")
        out.flags.writeable = False
        tr.flags.writeable = False
        object.__setattr__(self, "output", out)
        object.__setattr__(self, "transition", tr)
        if self.values is not None:
            v = np.ascontiguousarray(self.values, dtype=float)
            if v.ndim != 2 or v.shape[0] != out.size or not np.isfinite(v).all():
                raise ValueError("values must be a finite (|M|, |S|) table")
            v.flags.writeable = False
            object.__setattr__(self, "values", v)

    @property
    def num_memory(self) -> int:
        return self.output.size

    @property
    def evaluated(self) -> bool:
        return self.values is not None


def make_one_action_fsm(action: int, n_obs: int, name: str | None = None) -> FsmController:
    """Single memory state emitting `action` forever; every observation self-loops."""
    if action < 0:
        raise ValueError("action must be nonnegative")
    return FsmController(
        output=np.array([action]),
        transition=np.zeros((1, n_obs), dtype=int),
        name=name,
    )


def fsm_step(c: FsmController, x: int, o: int) -> int:
    return int(c.transition[x, o])


def _check_compatible(m: Pomdp, c: FsmController) -> None:
    if c.output.max() >= m.num_actions:
        raise ValueError("controller emits actions the process does not have")
    if c.transition.shape[1] != m.num_obs:
        raise ValueError(
            f"controller expects {c.transition.shape[1]} observations, "
            f"process has {m.num_obs}"
        )


def evaluate_fsm(m: Pomdp, c: FsmController, dense_limit: int = 5000) -> FsmController:
    """Solve the controller's value table V[x, s] exactly.

    The joint process over (memory, state) pairs is a Markov chain, so the
    table solves a |M||S| linear system — dense LU up to dense_limit unknowns,
    matrix-free fixed-point iteration above (the map is a gamma-contraction).
    """
    _check_compatible(m, c)
    nm, ns = c.num_memory, m.num_states
    n = nm * ns
    r = np.vstack([m.step_reward[c.output[x]] for x in range(nm)])  # (M, S)
    if n <= dense_limit:
        p = np.zeros((n, n))
        for x in range(nm):
            a = c.output[x]
            for o in range(m.num_obs):
                tgt = c.transition[x, o]
                p[x * ns:(x + 1) * ns, tgt * ns:(tgt + 1) * ns] += m.trans_obs[a, o]
        v = np.linalg.solve(np.eye(n) - m.discount * p, r.ravel()).reshape(nm, ns)
    else:
        v = np.zeros((nm, ns))
        while True:
            v_next = np.empty_like(v)
            for x in range(nm):
                a = c.output[x]
                acc = r[x].copy()
                for o in range(m.num_obs):
                    acc += m.discount * (m.trans_obs[a, o] @ v[c.transition[x, o]])
                v_next[x] = acc
            step = np.abs(v_next - v).max()
            v = v_next
            if step <= 1e-12 * max(1.0, np.abs(v).max()):
                break
    return replace(c, values=v)


def fsm_value(c: FsmController, b: np.ndarray) -> tuple[float, int]:
    """Greedy start: value and memory state of the best row at b."""
    if c.values is None:
        raise UnevaluatedControllerError("evaluate the controller first")
    vals = c.values @ b
    x = int(np.argmax(vals))
    return float(vals[x]), x


def h_fsm_update(m: Pomdp, c: FsmController, f: PwlcFn) -> PwlcFn:
    """Fixed-strategy backup: one new vector per memory state, successors
    chosen by the machine rather than maximized."""
    _check_compatible(m, c)
    if len(f) != c.num_memory:
        raise ValueError(
            f"need one vector per memory state: {len(f)} given, "
            f"{c.num_memory} memory states"
        )
    mat = f.matrix
    out = []
    for x in range(c.num_memory):
        a = c.output[x]
        acc = m.step_reward[a].copy()
        for o in range(m.num_obs):
            acc += m.discount * (m.trans_obs[a, o] @ mat[c.transition[x, o]])
        out.append(AlphaVector(acc, action=int(a), witnesses=tuple(int(t) for t in c.transition[x])))
    return PwlcFn(out)


def hansen_improve(m: Pomdp, c: FsmController, tol: float = DOMINATION_TOL) -> FsmController:
    """One improvement round: back up the induced value vectors exactly, add
    the resulting vectors as memory states, drop old states a new vector
    pointwise dominates (rewiring their inbound edges), and re-evaluate.

    Value never decreases at any belief.
    """
    if c.values is None:
        raise UnevaluatedControllerError("evaluate the controller first")
    backed = exact_backup(m, PwlcFn.from_matrix(c.values), tol=tol)

    added: list = []
    for vec in backed.vectors:
        rows = [c.values[x] for x in range(c.num_memory)] + [v.coeffs for v in added]
        if any(np.abs(vec.coeffs - row).max() <= _DEDUP_TOL for row in rows):
            continue
        added.append(vec)
    if not added:
        return c

    # old state -> index of the first added vector that pointwise dominates it
    dominator: dict[int, int] = {}
    for x in range(c.num_memory):
        for j, vec in enumerate(added):
            if (vec.coeffs >= c.values[x] - _DEDUP_TOL).all():
                dominator[x] = j
                break

    kept = [x for x in range(c.num_memory) if x not in dominator]
    old_to_final = {x: i for i, x in enumerate(kept)}
    for x, j in dominator.items():
        old_to_final[x] = len(kept) + j

    output = [int(c.output[x]) for x in kept] + [int(v.action) for v in added]
    transition = [
        [old_to_final[int(t)] for t in c.transition[x]] for x in kept
    ] + [[old_to_final[int(w)] for w in v.witnesses] for v in added]
    c2 = FsmController(
        output=np.array(output), transition=np.array(transition), name=c.name
    )
    return evaluate_fsm(m, c2)


@dataclass
class HansenResult:
    controller: FsmController
    rounds: int
    gains: list[float] = field(default_factory=list)
    stopped_by: str = "rounds"


def hansen_loop(
    m: Pomdp,
    c: FsmController,
    rounds: int,
    eps: float = 1e-6,
    max_states: int = 500,
) -> HansenResult:
    """Repeat hansen_improve until the best-value gain at every state extreme
    drops below eps, the machine outgrows max_states, or rounds run out.

    The stopping rule is ours, not inherent to the construction; the cap
    halts iteration after a growth round rather than truncating the machine.
    """
    if c.values is None:
        c = evaluate_fsm(m, c)
    gains: list[float] = []
    stopped = "rounds"
    for _ in range(rounds):
        c2 = hansen_improve(m, c)
        gain = float((c2.values.max(axis=0) - c.values.max(axis=0)).max())
        gains.append(gain)
        c = c2
        if gain < eps:
            stopped = "converged"
            break
        if c.num_memory > max_states:
            stopped = "state_cap"
            break
    return HansenResult(controller=c, rounds=len(gains), gains=gains, stopped_by=stopped)


# ---------------------------------------------------------------------------
# execution modes
# ---------------------------------------------------------------------------

class _FsmPolicy:
    """Pure machine execution: pick the start by value, then never look back."""

    mode = "fsm"

    def __init__(self, m: Pomdp, c: FsmController):
        self.c = c
        self.belief_updates = 0
        self.dot_ops = 0
        self.x = 0

    def reset(self, b: np.ndarray) -> int:
        self.dot_ops += self.c.num_memory
        _, self.x = fsm_value(self.c, b)
        return int(self.c.output[self.x])

    def step(self, o: int) -> int:
        self.x = int(self.c.transition[self.x, o])
        return int(self.c.output[self.x])


class _DrPolicy:
    """Track the belief and re-select the best memory state every step."""

    mode = "dr"

    def __init__(self, m: Pomdp, c: FsmController):
        self.m = m
        self.c = c
        self.belief_updates = 0
        self.dot_ops = 0
        self.b = None
        self.last_action = None

    def _choose(self) -> int:
        self.dot_ops += self.c.num_memory
        _, x = fsm_value(self.c, self.b)
        self.last_action = int(self.c.output[x])
        return self.last_action

    def reset(self, b: np.ndarray) -> int:
        self.b = np.asarray(b, dtype=float)
        return self._choose()

    def step(self, o: int) -> int:
        self.b = belief_update(self.m, self.b, self.last_action, o)
        self.belief_updates += 1
        self.dot_ops += self.m.num_states
        return self._choose()


class _LaPolicy:
    """Track the belief and run a one-step expansion of the machine's value."""

    mode = "la"

    def __init__(self, m: Pomdp, c: FsmController):
        self.m = m
        self.c = c
        self.belief_updates = 0
        self.dot_ops = 0
        self.b = None
        self.last_action = None

    def _vfun(self, b: np.ndarray) -> float:
        return float((self.c.values @ b).max())

    def _choose(self) -> int:
        m = self.m
        # expansion touches every (action, observation) successor belief
        self.dot_ops += m.num_actions * (
            1 + m.num_obs * (m.num_states + self.c.num_memory)
        )
        a, _ = lookahead_action(m, self._vfun, self.b)
        self.last_action = a
        return a

    def reset(self, b: np.ndarray) -> int:
        self.b = np.asarray(b, dtype=float)
        return self._choose()

    def step(self, o: int) -> int:
        self.b = belief_update(self.m, self.b, self.last_action, o)
        self.belief_updates += 1
        return self._choose()


def controller_policy(m: Pomdp, c: FsmController, mode: str = "fsm"):
    """Policy adapter for the simulation harness: reset(b0) -> first action,
    step(o) -> next action."""
    if c.values is None:
        raise UnevaluatedControllerError("evaluate the controller first")
    _check_compatible(m, c)
    try:
        cls = {"fsm": _FsmPolicy, "dr": _DrPolicy, "la": _LaPolicy}[mode]
    except KeyError:
        raise ValueError(f"unknown mode {mode!r}; expected fsm, dr, or la") from None
    return cls(m, c)


def save_fsm(c: FsmController, path) -> None:
    doc = {
        "name": c.name,
        "states": [
            {"action": int(c.output[x]), "next": [int(t) for t in c.transition[x]]}
            for x in range(c.num_memory)
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_fsm(path) -> FsmController:
    doc = json.loads(Path(path).read_text())
    states = doc["states"]
    return FsmController(
        output=np.array([st["action"] for st in states]),
        transition=np.array([st["next"] for st in states]),
        name=doc.get("name"),
    )
