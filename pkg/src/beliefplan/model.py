"""POMDP model core.

A finite partially observable Markov decision process is held as three dense
tables plus a discount factor:

    trans[a, s, s']   probability of landing in s' after action a in state s
    obs[a, s', o]     probability of reading o after action a lands in s'
    reward[a, s, s']  immediate reward for the (s, a, s') transition

The observation table conditions on the *landing* state, so the joint
transition-observation weight factors as

    P(s', o | s, a) = obs[a, s', o] * trans[a, s, s'].

Belief vectors (probability distributions over states) are plain 1-D numpy
arrays; they are the sufficient statistic for the process, and every planner
in this package works on them.

The module also ships two model generators: ``random_pomdp`` for test
instances and ``build_maze20`` for the 20-room navigation benchmark used by
the harness (4x5 grid, noisy moves, two wall sensors, a target room that pays
150 when the robot declares it by moving).
"""

from __future__ import annotations

import json
import warnings
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

__all__ = [
    "Pomdp",
    "MazeSpec",
    "ModelFormatError",
    "ImpossibleObservationError",
    "PROB_TOL",
    "OBS_FLOOR",
    "belief_update",
    "obs_prob",
    "expected_reward",
    "sample_belief_uniform",
    "random_pomdp",
    "default_maze_spec",
    "build_maze20",
    "load_model",
    "save_model",
    "parse_model",
    "dump_model",
    "load_maze_spec",
    "save_maze_spec",
    "MAZE_MOVE_N",
    "MAZE_MOVE_S",
    "MAZE_MOVE_E",
    "MAZE_MOVE_W",
    "MAZE_SENSE_NS",
    "MAZE_SENSE_EW",
]

# row-stochasticity tolerance for validation
PROB_TOL = 1e-9
# observation probabilities at or below this are treated as impossible branches
OBS_FLOOR = 1e-12


class ModelFormatError(ValueError):
    """Raised for malformed or non-stochastic model files/tables."""


class ImpossibleObservationError(ValueError):
    """Raised when conditioning a belief on an observation of probability ~0."""


@dataclass
class Pomdp:
    """Finite POMDP. Immutable after construction; safe to share across threads."""

    trans: np.ndarray
    obs: np.ndarray
    reward: np.ndarray
    discount: float
    state_names: tuple[str, ...] | None = None
    action_names: tuple[str, ...] | None = None
    obs_names: tuple[str, ...] | None = None
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        self.trans = np.ascontiguousarray(self.trans, dtype=float)
        self.obs = np.ascontiguousarray(self.obs, dtype=float)
        self.reward = np.ascontiguousarray(self.reward, dtype=float)
        self.discount = float(self.discount)
        _validate(self)
        for arr in (self.trans, self.obs, self.reward):
            arr.flags.writeable = False

    # --- sizes -------------------------------------------------------------
    @property
    def num_actions(self) -> int:
        return self.trans.shape[0]

    @property
    def num_states(self) -> int:
        return self.trans.shape[1]

    @property
    def num_obs(self) -> int:
        return self.obs.shape[2]

    # --- derived tables ----------------------------------------------------
    @cached_property
    def step_reward(self) -> np.ndarray:
        """Expected one-step reward table, shape (A, S): row a holds rho(., a)."""
        r = np.einsum("ast,ast->as", self.reward, self.trans)
        r.flags.writeable = False
        return r

    @cached_property
    def trans_obs(self) -> np.ndarray:
        """Joint weight table, shape (A, O, S, S'):
        trans_obs[a, o, s, s'] = P(s', o | s, a)."""
        w = np.einsum("ast,ato->aost", self.trans, self.obs)
        w = np.ascontiguousarray(w)
        w.flags.writeable = False
        return w


def _validate(m: Pomdp) -> None:
    a, s = m.trans.shape[0], m.trans.shape[1]
    if m.trans.shape != (a, s, s):
        raise ModelFormatError(f"transition table has shape {m.trans.shape}, want (A,S,S)")
    if m.obs.shape[:2] != (a, s) or m.obs.ndim != 3:
        raise ModelFormatError(f"observation table has shape {m.obs.shape}, want (A,S,O)")
    if m.reward.shape != (a, s, s):
        raise ModelFormatError(f"reward table has shape {m.reward.shape}, want (A,S,S)")
    if not (0.0 <= m.discount < 1.0):
        raise ModelFormatError(f"discount {m.discount} outside [0, 1)")
    if not np.isfinite(m.reward).all():
        raise ModelFormatError("reward table contains non-finite entries")
    for name, table in (("transition", m.trans), ("observation", m.obs)):
        if (table < -PROB_TOL).any() or (table > 1 + PROB_TOL).any():
            raise ModelFormatError(f"{name} table has entries outside [0, 1]")
        sums = table.sum(axis=2)
        bad = np.argwhere(np.abs(sums - 1.0) > PROB_TOL)
        if bad.size:
            ai, si = bad[0]
            raise ModelFormatError(
                f"{name} row for action {ai}, state {si} sums to {sums[ai, si]!r}, not 1"
            )
    for names, n, what in (
        (m.state_names, s, "state"),
        (m.action_names, a, "action"),
        (m.obs_names, m.obs.shape[2], "observation"),
    ):
        if names is not None and len(names) != n:
            raise ModelFormatError(f"{what} name list has length {len(names)}, want {n}")


# ---------------------------------------------------------------------------
# belief arithmetic
# ---------------------------------------------------------------------------

def obs_prob(m: Pomdp, b: np.ndarray, a: int) -> np.ndarray:
    """Distribution over observations after acting: P(o | b, a), shape (O,)."""
    return (b @ m.trans[a]) @ m.obs[a]


def belief_update(m: Pomdp, b: np.ndarray, a: int, o: int) -> np.ndarray:
    """Bayes posterior over landing states given action a and observation o.

    Raises ImpossibleObservationError when P(o | b, a) <= OBS_FLOOR; callers
    must not branch on observations the model cannot emit.
    """
    unnorm = m.obs[a, :, o] * (b @ m.trans[a])
    z = unnorm.sum()
    if z <= OBS_FLOOR:
        raise ImpossibleObservationError(
            f"observation {o} has probability {z!r} under action {a}"
        )
    return unnorm / z


def expected_reward(m: Pomdp, b: np.ndarray, a: int) -> float:
    """Expected one-step reward of acting from belief b."""
    return float(b @ m.step_reward[a])


def sample_belief_uniform(rng: np.random.Generator, n: int, size: int | None = None):
    """Uniform samples from the (n-1)-simplex (symmetric Dirichlet, unit
    concentration). Returns shape (n,) or (size, n)."""
    if n < 1:
        raise ValueError("need at least one state")
    if size is None:
        return rng.dirichlet(np.ones(n))
    return rng.dirichlet(np.ones(n), size=size)


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def random_pomdp(
    rng: np.random.Generator,
    sizes: tuple[int, int, int],
    discount: float,
    sparsity: float = 0.0,
) -> Pomdp:
    """Random test instance: Dirichlet rows, sparsified by zeroing entries
    below `sparsity` and renormalizing (the row max always survives);
    rewards uniform on [0, 1]."""
    ns, na, no = sizes

    def rows(shape, width):
        flat = rng.dirichlet(np.ones(width), size=int(np.prod(shape[:-1])))
        if sparsity > 0.0:
            keep = flat >= sparsity
            keep[np.arange(flat.shape[0]), flat.argmax(axis=1)] = True
            flat = np.where(keep, flat, 0.0)
            flat /= flat.sum(axis=1, keepdims=True)
        return flat.reshape(shape)

    trans = rows((na, ns, ns), ns)
    obs = rows((na, ns, no), no)
    reward = rng.uniform(0.0, 1.0, size=(na, ns, ns))
    return Pomdp(trans=trans, obs=obs, reward=reward, discount=discount)


# ---------------------------------------------------------------------------
# Maze20 benchmark builder
# ---------------------------------------------------------------------------

MAZE_MOVE_N, MAZE_MOVE_S, MAZE_MOVE_E, MAZE_MOVE_W = 0, 1, 2, 3
MAZE_SENSE_NS, MAZE_SENSE_EW = 4, 5

_DIRS = {"N": (-1, 0), "S": (1, 0), "E": (0, 1), "W": (0, -1)}
_OPPOSITE = {"N": "S", "S": "N", "E": "W", "W": "E"}
# lateral slip directions for each intended move
_LATERAL = {"N": ("E", "W"), "S": ("E", "W"), "E": ("N", "S"), "W": ("N", "S")}
_MOVE_DIR = {MAZE_MOVE_N: "N", MAZE_MOVE_S: "S", MAZE_MOVE_E: "E", MAZE_MOVE_W: "W"}

# Default 4x5 layout. Interior walls are written once, as (row, col, side);
# the matching wall on the neighbouring room is implied. Outer boundary walls
# are implicit. Rooms are numbered row-major; the map looks like:
#
#     +---+---+---+---+---+
#     | 0   1 | 2   3   4 |
#     +   +---+   +---+   +
#     | 5 | 6   7 | 8 | 9 |
#     +   +---+   +   +   +
#     |10  11  12  13 |14 |
#     +---+   +---+   +---+
#     |15  16 |17  18  19 |
#     +---+---+---+---+---+
#
# Room 8 (the dead-end pocket at row 1, col 3) is the target.
_DEFAULT_WALLS = (
    (0, 1, "E"),
    (0, 1, "S"),
    (0, 3, "S"),
    (1, 0, "E"),
    (1, 2, "E"),
    (1, 3, "E"),
    (1, 1, "S"),
    (2, 3, "E"),
    (2, 0, "S"),
    (2, 2, "S"),
    (2, 4, "S"),
    (3, 1, "E"),
)


@dataclass(frozen=True)
class MazeSpec:
    """Geometry and noise parameters for the navigation benchmark."""

    rows: int = 4
    cols: int = 5
    walls: tuple[tuple[int, int, str], ...] = _DEFAULT_WALLS
    target: tuple[int, int] = (1, 3)
    move_noise: float = 0.3          # total slip mass, split over the two laterals
    sensor_two_wall: float = 0.75    # accuracy when both sensed sides are walls
    sensor_one_wall: float = 0.8
    sensor_no_wall: float = 0.89
    move_reward: float = 4.0
    sense_reward: float = 2.0
    target_reward: float = 150.0
    discount: float = 0.9

    @property
    def num_rooms(self) -> int:
        return self.rows * self.cols

    @property
    def target_index(self) -> int:
        return self.target[0] * self.cols + self.target[1]

    def room_index(self, r: int, c: int) -> int:
        return r * self.cols + c


def default_maze_spec() -> MazeSpec:
    return MazeSpec()


def _wall_set(spec: MazeSpec) -> set[tuple[int, int, str]]:
    walls: set[tuple[int, int, str]] = set()
    for r, c, side in spec.walls:
        side = side.upper()
        if side not in _DIRS:
            raise ModelFormatError(f"unknown wall side {side!r} at room ({r},{c})")
        if not (0 <= r < spec.rows and 0 <= c < spec.cols):
            raise ModelFormatError(f"wall ({r},{c},{side}) outside the grid")
        dr, dc = _DIRS[side]
        r2, c2 = r + dr, c + dc
        if not (0 <= r2 < spec.rows and 0 <= c2 < spec.cols):
            raise ModelFormatError(
                f"wall ({r},{c},{side}) duplicates the outer boundary"
            )
        walls.add((r, c, side))
        walls.add((r2, c2, _OPPOSITE[side]))
    return walls


def _blocked(spec: MazeSpec, walls, r: int, c: int, side: str) -> bool:
    dr, dc = _DIRS[side]
    r2, c2 = r + dr, c + dc
    if not (0 <= r2 < spec.rows and 0 <= c2 < spec.cols):
        return True
    return (r, c, side) in walls


def build_maze20(spec: MazeSpec | None = None) -> Pomdp:
    """Build the 20-room navigation POMDP from a MazeSpec.

    Actions: four noisy moves (intended direction with probability
    1 - move_noise, each lateral direction with move_noise/2; a blocked
    direction keeps the robot in place) and two sensing actions that read the
    wall configuration of the current room. Moving pays move_reward unless the
    robot bumped (stayed put); sensing always pays sense_reward; any move from
    the target room declares it — the robot collects target_reward and
    restarts uniformly at random.

    Observations 0-3 are the (north, south) reading pairs of sense-NS,
    observations 4-7 the (east, west) pairs of sense-EW; within each block the
    pair (first, second) is encoded as 2*first + second with wall=1. Move
    actions deterministically emit observation 0, the null reading.
    """
    spec = spec or default_maze_spec()
    n = spec.num_rooms
    walls = _wall_set(spec)
    if not (0 <= spec.target[0] < spec.rows and 0 <= spec.target[1] < spec.cols):
        raise ModelFormatError(f"target room {spec.target} outside the grid")
    target = spec.target_index

    trans = np.zeros((6, n, n))
    reward = np.zeros((6, n, n))
    obs = np.zeros((6, n, 8))

    slip = spec.move_noise / 2.0
    main = 1.0 - spec.move_noise

    for a, side in _MOVE_DIR.items():
        for r in range(spec.rows):
            for c in range(spec.cols):
                s = spec.room_index(r, c)
                if s == target:
                    trans[a, s, :] = 1.0 / n
                    reward[a, s, :] = spec.target_reward
                    continue
                for d, p in ((side, main),) + tuple(
                    (lat, slip) for lat in _LATERAL[side]
                ):
                    if _blocked(spec, walls, r, c, d):
                        trans[a, s, s] += p  # bump: stay, no move reward
                    else:
                        dr, dc = _DIRS[d]
                        s2 = spec.room_index(r + dr, c + dc)
                        trans[a, s, s2] += p
                        reward[a, s, s2] = spec.move_reward
        obs[a, :, 0] = 1.0  # null reading

    acc_by_walls = {
        0: spec.sensor_no_wall,
        1: spec.sensor_one_wall,
        2: spec.sensor_two_wall,
    }
    for a, (base, pair) in ((MAZE_SENSE_NS, (0, ("N", "S"))),
                            (MAZE_SENSE_EW, (4, ("E", "W")))):
        trans[a] = np.eye(n)
        reward[a] = spec.sense_reward
        for r in range(spec.rows):
            for c in range(spec.cols):
                s = spec.room_index(r, c)
                first = int(_blocked(spec, walls, r, c, pair[0]))
                second = int(_blocked(spec, walls, r, c, pair[1]))
                correct = base + 2 * first + second
                acc = acc_by_walls[first + second]
                for code in range(4):
                    o = base + code
                    obs[a, s, o] = acc if o == correct else (1.0 - acc) / 3.0

    _warn_if_target_unreachable(spec, walls)

    state_names = tuple(
        f"r{r}c{c}" for r in range(spec.rows) for c in range(spec.cols)
    )
    action_names = (
        "move-north", "move-south", "move-east", "move-west",
        "sense-ns", "sense-ew",
    )
    obs_names = (
        "ns:open-open", "ns:open-wall", "ns:wall-open", "ns:wall-wall",
        "ew:open-open", "ew:open-wall", "ew:wall-open", "ew:wall-wall",
    )
    return Pomdp(
        trans=trans,
        obs=obs,
        reward=reward,
        discount=spec.discount,
        state_names=state_names,
        action_names=action_names,
        obs_names=obs_names,
        meta={
            "kind": "maze20",
            "target_state": target,
            "move_reward": spec.move_reward,
            "sense_reward": spec.sense_reward,
            "target_reward": spec.target_reward,
        },
    )


def _warn_if_target_unreachable(spec: MazeSpec, walls) -> None:
    # undirected connectivity of the open-move graph, from the target outward
    seen = {spec.target}
    queue = deque([spec.target])
    while queue:
        r, c = queue.popleft()
        for side, (dr, dc) in _DIRS.items():
            if not _blocked(spec, walls, r, c, side) and (r + dr, c + dc) not in seen:
                seen.add((r + dr, c + dc))
                queue.append((r + dr, c + dc))
    if len(seen) != spec.num_rooms:
        missing = sorted(
            spec.room_index(r, c)
            for r in range(spec.rows)
            for c in range(spec.cols)
            if (r, c) not in seen
        )
        warnings.warn(f"rooms {missing} cannot reach the target room", stacklevel=3)


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

def _names_and_count(value, what: str):
    if isinstance(value, int):
        return None, value
    names = tuple(str(v) for v in value)
    return names, len(names)


def parse_model(doc: dict) -> Pomdp:
    """Build a validated Pomdp from a parsed model document."""
    try:
        state_names, ns = _names_and_count(doc["states"], "states")
        action_names, na = _names_and_count(doc["actions"], "actions")
        obs_names, no = _names_and_count(doc["observations"], "observations")
        trans = np.asarray(doc["transition"], dtype=float)
        obs = np.asarray(doc["observation"], dtype=float)
        reward = np.asarray(doc["reward"], dtype=float)
        discount = float(doc["discount"])
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFormatError(f"malformed model document: {e}") from e
    if trans.shape != (na, ns, ns) or obs.shape != (na, ns, no):
        raise ModelFormatError(
            f"table shapes {trans.shape}/{obs.shape} disagree with declared "
            f"sizes S={ns}, A={na}, O={no}"
        )
    return Pomdp(
        trans=trans, obs=obs, reward=reward, discount=discount,
        state_names=state_names, action_names=action_names, obs_names=obs_names,
    )


def dump_model(m: Pomdp) -> dict:
    return {
        "discount": m.discount,
        "states": list(m.state_names) if m.state_names else m.num_states,
        "actions": list(m.action_names) if m.action_names else m.num_actions,
        "observations": list(m.obs_names) if m.obs_names else m.num_obs,
        "transition": m.trans.tolist(),
        "observation": m.obs.tolist(),
        "reward": m.reward.tolist(),
    }


def load_model(path) -> Pomdp:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"{path}: not valid JSON: {e}") from e
    return parse_model(doc)


def save_model(m: Pomdp, path) -> None:
    Path(path).write_text(json.dumps(dump_model(m)))


def load_maze_spec(path) -> MazeSpec:
    doc = json.loads(Path(path).read_text())
    try:
        layout = doc["layout"]
        return MazeSpec(
            rows=int(layout["rows"]),
            cols=int(layout["cols"]),
            walls=tuple((int(r), int(c), str(s)) for r, c, s in layout["walls"]),
            target=tuple(int(v) for v in layout["target"]),
            move_noise=float(doc["noise"]["move_total"]),
            sensor_two_wall=float(doc["sensors"]["two_wall"]),
            sensor_one_wall=float(doc["sensors"]["one_wall"]),
            sensor_no_wall=float(doc["sensors"]["no_wall"]),
            move_reward=float(doc["rewards"]["move"]),
            sense_reward=float(doc["rewards"]["sense"]),
            target_reward=float(doc["rewards"]["target"]),
            discount=float(doc["discount"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFormatError(f"malformed maze spec: {e}") from e


def save_maze_spec(spec: MazeSpec, path) -> None:
    doc = {
        "layout": {
            "rows": spec.rows,
            "cols": spec.cols,
            "walls": [list(w) for w in spec.walls],
            "target": list(spec.target),
        },
        "noise": {"move_total": spec.move_noise},
        "sensors": {
            "two_wall": spec.sensor_two_wall,
            "one_wall": spec.sensor_one_wall,
            "no_wall": spec.sensor_no_wall,
        },
        "rewards": {
            "move": spec.move_reward,
            "sense": spec.sense_reward,
            "target": spec.target_reward,
        },
        "discount": spec.discount,
    }
    Path(path).write_text(json.dumps(doc, indent=2))
