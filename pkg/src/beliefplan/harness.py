"""Batched policy execution and method-comparison experiments.

Episode returns accrue the expected immediate reward of the sampled
(state, action) pair instead of a sampled reward draw — same mean, lower
variance. Hidden-state and observation draws are inverse-CDF transforms of
per-episode uniform streams spawned from one master seed, so policies run
under the same seed face identical randomness (common random numbers) for
as long as their action choices agree, and nothing depends on method order
or scheduling.
"""

from __future__ import annotations

import time
import warnings
import zlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bounds import (
    FibTable,
    QTable,
    fib_fixed_point,
    partitioned_fib_backup,
    solve_fomdp,
    umdp_iterate,
)
from .exact import MissingActionTagError, ValueIterationResult, value_iteration
from .fsm import FsmController, UnevaluatedControllerError, evaluate_fsm, make_one_action_fsm
from .grid import (
    Grid,
    GridMissingExtremesError,
    GridValueFn,
    SawtoothResult,
    adaptive_expand,
    best_interp_lp,
    grid_backup,
    solve_sawtooth,
)
from .lsfit import LinearQModel, fit_scheme, seed_linear_q
from .model import OBS_FLOOR, Pomdp, sample_belief_uniform
from .pointdp import LowerBoundFn, fsm_lower_bound, incremental_update
from .pwlc import PwlcFn, pwlc_norm

__all__ = [
    "as_tagged",
    "as_value_batch",
    "FsmPolicy",
    "DirectPolicy",
    "LookaheadPolicy",
    "run_batch_episodes",
    "simulate_episode",
    "ControlResult",
    "control_quality",
    "PairedDiff",
    "paired_diff",
    "bound_quality",
    "ExperimentConfig",
    "MethodArtifact",
    "METHOD_NAMES",
    "build_method",
    "RunResult",
    "run_comparison",
    "partitioned_fib_iterate",
    "GridSolution",
    "LpGridFn",
    "solve_grid_method",
    "adaptive_grid_solve",
]


# ---------------------------------------------------------------------------
# adapters: anything with linear pieces can drive a policy
# ---------------------------------------------------------------------------

def as_tagged(source) -> tuple[np.ndarray, np.ndarray]:
    """Rows and their action tags, (K, S) and (K,), from any solved object."""
    if isinstance(source, LowerBoundFn):
        return as_tagged(source.fn)
    if isinstance(source, PwlcFn):
        actions = [v.action for v in source.vectors]
        for i, a in enumerate(actions):
            if a is None:
                raise MissingActionTagError(f"vector {i} carries no action tag")
        return source.matrix, np.array(actions, dtype=int)
    if isinstance(source, QTable):
        return source.q.T, np.arange(source.q.shape[1])
    if isinstance(source, FibTable):
        return source.alpha, np.arange(source.alpha.shape[0])
    if isinstance(source, FsmController):
        if source.values is None:
            raise UnevaluatedControllerError("controller must be evaluated first")
        return source.values, source.output
    if isinstance(source, LinearQModel):
        return source.weights.T, np.arange(source.weights.shape[1])
    raise TypeError(f"no tagged-row view for {type(source).__name__}")


def as_value_batch(source) -> Callable[[np.ndarray], np.ndarray]:
    """A (n, S) -> (n,) evaluator for any supported value representation."""
    if callable(source) and not isinstance(source, type):
        return source
    if isinstance(source, LowerBoundFn):
        return source.fn.values
    if isinstance(source, PwlcFn):
        return source.values
    if isinstance(source, GridValueFn):
        return source.eval_many
    if isinstance(source, QTable):
        return lambda bs: (np.asarray(bs) @ source.q).max(axis=1)
    if isinstance(source, FibTable):
        return lambda bs: (np.asarray(bs) @ source.alpha.T).max(axis=1)
    if isinstance(source, FsmController):
        if source.values is None:
            raise UnevaluatedControllerError("controller must be evaluated first")
        return lambda bs: (np.asarray(bs) @ source.values.T).max(axis=1)
    if isinstance(source, LinearQModel):
        return lambda bs: (np.asarray(bs) @ source.weights).max(axis=1)
    raise TypeError(f"no batch evaluator for {type(source).__name__}")


def _eval_ops(source) -> int:
    # dot products per single evaluation, used for the per-decision cost column
    if isinstance(source, LowerBoundFn):
        return len(source.fn)
    if isinstance(source, PwlcFn):
        return len(source)
    if isinstance(source, GridValueFn):
        return source.grid.num_points
    if isinstance(source, QTable):
        return source.q.shape[1]
    if isinstance(source, FibTable):
        return source.alpha.shape[0]
    if isinstance(source, FsmController):
        return source.num_memory
    if isinstance(source, LinearQModel):
        return source.weights.shape[1]
    return 1


# ---------------------------------------------------------------------------
# batched policies with instrumented work counters
# ---------------------------------------------------------------------------

class _PolicyBase:
    mode = "?"
    tracks_belief = False

    def __init__(self, m: Pomdp):
        self._m = m
        self.decisions = 0
        self.dot_ops = 0
        self.belief_updates = 0

    def _track(self, o: np.ndarray) -> None:
        """Bayes update of the tracked belief batch under the last actions."""
        m, b, a = self._m, self._b, self._a
        pred = np.einsum("ns,nst->nt", b, m.trans[a])
        z = pred * m.obs[a, :, o]
        mass = z.sum(axis=1)
        bad = mass <= OBS_FLOOR  # cannot happen on-policy; keep rows valid anyway
        if bad.any():
            z[bad] = 1.0 / m.num_states
            mass[bad] = 1.0
        self._b = z / mass[:, None]
        self.belief_updates += len(b)


class FsmPolicy(_PolicyBase):
    """Machine execution: pick the start node by value, then only follow arcs."""

    mode = "fsm"
    tracks_belief = False

    def __init__(self, m: Pomdp, c: FsmController):
        super().__init__(m)
        if c.values is None:
            raise UnevaluatedControllerError("controller must be evaluated first")
        self._c = c

    def reset(self, b0: np.ndarray) -> np.ndarray:
        c = self._c
        scores = np.asarray(b0) @ c.values.T
        self._x = scores.argmax(axis=1)
        self.decisions += len(scores)
        self.dot_ops += scores.size
        return c.output[self._x]

    def step(self, o: np.ndarray) -> np.ndarray:
        self._x = self._c.transition[self._x, o]
        self.decisions += len(o)
        return self._c.output[self._x]


class DirectPolicy(_PolicyBase):
    """Track the belief and act by the tag of the maximizing row."""

    mode = "dr"
    tracks_belief = True

    def __init__(self, m: Pomdp, source):
        super().__init__(m)
        self._rows, self._acts = as_tagged(source)

    def _choose(self) -> np.ndarray:
        scores = self._b @ self._rows.T
        self._a = self._acts[scores.argmax(axis=1)]
        self.decisions += len(scores)
        self.dot_ops += scores.size
        return self._a

    def reset(self, b0: np.ndarray) -> np.ndarray:
        self._b = np.array(b0, dtype=float)
        return self._choose()

    def step(self, o: np.ndarray) -> np.ndarray:
        self._track(o)
        return self._choose()


class LookaheadPolicy(_PolicyBase):
    """Track the belief and act by the best one-step expansion of a value
    function; posteriors probed inside the expansion are charged to dot_ops,
    not to the tracked-update counter."""

    mode = "la"
    tracks_belief = True

    def __init__(self, m: Pomdp, value_batch, ops_per_eval: int = 1):
        super().__init__(m)
        self._vb = as_value_batch(value_batch)
        self._ops = int(ops_per_eval)

    def _choose(self) -> np.ndarray:
        m, b = self._m, self._b
        n = len(b)
        q = np.empty((n, m.num_actions))
        for a in range(m.num_actions):
            pred = b @ m.trans[a]
            probs = pred @ m.obs[a]
            acc = b @ m.step_reward[a]
            for o in range(m.num_obs):
                p = probs[:, o]
                mask = p > OBS_FLOOR
                if not mask.any():
                    continue
                nxt = pred[mask] * m.obs[a, :, o]
                nxt /= p[mask, None]
                acc[mask] += m.discount * p[mask] * self._vb(nxt)
                self.dot_ops += int(mask.sum()) * (1 + self._ops)
            q[:, a] = acc
        self._a = q.argmax(axis=1)
        self.decisions += n
        self.dot_ops += n * m.num_actions
        return self._a

    def reset(self, b0: np.ndarray) -> np.ndarray:
        self._b = np.array(b0, dtype=float)
        return self._choose()

    def step(self, o: np.ndarray) -> np.ndarray:
        self._track(o)
        return self._choose()


# ---------------------------------------------------------------------------
# episode engine
# ---------------------------------------------------------------------------

def _categorical_rows(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per row; u in [0, 1)."""
    cum = np.cumsum(probs, axis=1)
    idx = (cum <= u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def _episode_core(m: Pomdp, policy, starts: np.ndarray, horizon: int, u: np.ndarray) -> np.ndarray:
    s = _categorical_rows(starts, u[:, 0])
    a = policy.reset(starts)
    total = np.zeros(len(starts))
    disc = 1.0
    for t in range(horizon):
        total += disc * m.step_reward[a, s]
        s = _categorical_rows(m.trans[a, s], u[:, 1 + 2 * t])
        o = _categorical_rows(m.obs[a, s], u[:, 2 + 2 * t])
        a = policy.step(o)
        disc *= m.discount
    return total


def run_batch_episodes(
    m: Pomdp, policy, starts: np.ndarray, horizon: int, seed: int = 0
) -> np.ndarray:
    """One episode per start belief, all advanced in lockstep.

    Uniform draws come from per-episode substreams spawned off `seed`, so the
    same seed pins the same randomness regardless of batch size splits or of
    which policy consumes it.
    """
    starts = np.ascontiguousarray(starts, dtype=float)
    if starts.ndim != 2:
        raise ValueError(f"starts must be (n, S), got {starts.shape}")
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    n = len(starts)
    if n == 0 or horizon == 0:
        return np.zeros(n)
    streams = np.random.SeedSequence(seed).spawn(n)
    u = np.empty((n, 1 + 2 * horizon))
    for i, child in enumerate(streams):
        u[i] = np.random.default_rng(child).random(1 + 2 * horizon)
    return _episode_core(m, policy, starts, horizon, u)


def simulate_episode(m: Pomdp, policy, b0: np.ndarray, horizon: int, rng) -> float:
    """Single discounted episode from b0; draws come from the caller's rng."""
    b0 = np.asarray(b0, dtype=float)
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    if horizon == 0:
        return 0.0
    u = rng.random((1, 1 + 2 * horizon))
    return float(_episode_core(m, policy, b0[None, :], horizon, u)[0])


# ---------------------------------------------------------------------------
# quality measures
# ---------------------------------------------------------------------------

def _mean_se(x: np.ndarray) -> tuple[float, float]:
    n = len(x)
    if n == 0:
        return 0.0, 0.0
    mean = float(x.mean())
    se = float(x.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return mean, se


@dataclass
class ControlResult:
    returns: np.ndarray
    mean: float
    se: float
    n: int


def control_quality(
    m: Pomdp, policy, starts: np.ndarray, horizon: int = 60, seed: int = 0
) -> ControlResult:
    """Mean discounted return over one episode per start, with its SE."""
    returns = run_batch_episodes(m, policy, starts, horizon, seed=seed)
    mean, se = _mean_se(returns)
    return ControlResult(returns=returns, mean=mean, se=se, n=len(returns))


@dataclass
class PairedDiff:
    mean: float
    se: float
    z: float
    n: int


def paired_diff(a: np.ndarray, b: np.ndarray) -> PairedDiff:
    """Per-episode differences under common random numbers: mean, SE, z."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"need matching 1-D samples, got {a.shape} vs {b.shape}")
    mean, se = _mean_se(a - b)
    if se == 0.0:
        z = 0.0 if mean == 0.0 else float(np.sign(mean) * np.inf)
    else:
        z = mean / se
    return PairedDiff(mean=mean, se=se, z=z, n=len(a))


def bound_quality(source, beliefs: np.ndarray) -> float:
    """Mean of a value representation over a fixed belief set."""
    return float(np.mean(as_value_batch(source)(np.asarray(beliefs, dtype=float))))


# ---------------------------------------------------------------------------
# method registry
# ---------------------------------------------------------------------------

def _method_rng(seed: int, tag: str) -> np.random.Generator:
    return np.random.default_rng(
        [int(seed) % (2**63), zlib.crc32(tag.encode("utf-8"))]
    )


@dataclass
class MethodArtifact:
    name: str
    value_batch: Callable[[np.ndarray], np.ndarray]
    modes: dict[str, Callable[[], object]]
    default_mode: str
    solve_ms: float = 0.0
    detail: str = ""


def _dr_la_modes(m: Pomdp, tagged_source, vb) -> dict[str, Callable[[], object]]:
    ops = _eval_ops(tagged_source)
    return {
        "dr": lambda: DirectPolicy(m, tagged_source),
        "la": lambda: LookaheadPolicy(m, vb, ops_per_eval=ops),
    }


def _build_mdp(m, seed, opts):
    q = solve_fomdp(m, eps=opts.get("eps", 1e-9))

    def vb(bs):
        return np.asarray(bs) @ q.v

    # the state-value relaxation has no per-action belief form; lookahead only
    modes = {"la": lambda: LookaheadPolicy(m, vb, ops_per_eval=1)}
    return vb, modes, "la", "fully observable relaxation"


def _build_qmdp(m, seed, opts):
    fn = solve_fomdp(m, eps=opts.get("eps", 1e-9)).qmdp_fn()
    return fn.values, _dr_la_modes(m, fn, fn.values), "dr", f"{len(fn)} action rows"


def _build_fib(m, seed, opts):
    fn = fib_fixed_point(m, eps=opts.get("eps", 1e-9)).as_fn()
    return fn.values, _dr_la_modes(m, fn, fn.values), "dr", f"{len(fn)} action rows"


def _build_umdp(m, seed, opts):
    res = umdp_iterate(
        m, eps=opts.get("eps", 1e-3), max_iters=opts.get("max_iters", 60)
    )
    fn = res.fn
    detail = f"{len(fn)} vectors, iters={res.iters}, capped={res.capped}"
    return fn.values, _dr_la_modes(m, fn, fn.values), "dr", detail


def _build_exact(m, seed, opts):
    res = value_iteration(
        m, eps=opts.get("eps", 1e-2), max_iters=opts.get("max_iters", 200)
    )
    fn = res.fn
    detail = f"{len(fn)} vectors, residual={res.bellman_error:.3g}"
    return fn.values, _dr_la_modes(m, fn, fn.values), "dr", detail


def _build_sawtooth_grid(m, seed, opts):
    sol = adaptive_grid_solve(
        m,
        target_points=opts.get("grid_points", 40),
        seed=seed,
        increment=opts.get("increment"),
        grow_eps=opts.get("grow_eps", 0.5),
        eps=opts.get("eps", 1e-4),
        max_rounds=opts.get("max_rounds", 500),
    )
    gf = sol.fn
    modes = {
        "la": lambda: LookaheadPolicy(m, gf.eval_many, ops_per_eval=gf.grid.num_points)
    }
    detail = f"{gf.grid.num_points} points, rounds={sol.rounds}"
    return gf.eval_many, modes, "la", detail


def _best_one_action_bound(m: Pomdp) -> LowerBoundFn:
    best, score = None, -np.inf
    for a in range(m.num_actions):
        c = evaluate_fsm(m, make_one_action_fsm(a, m.num_obs))
        if c.values.mean() > score:
            best, score = c, c.values.mean()
    return fsm_lower_bound(m, best)


def _build_incremental_pointdp(m, seed, opts):
    rng = _method_rng(seed, "incremental-pointdp")
    lb = _best_one_action_bound(m)
    pts = sample_belief_uniform(rng, m.num_states, opts.get("points", 40))
    cycles = opts.get("cycles", 5)
    for _ in range(cycles):
        lb = incremental_update(
            m, lb, pts, max_vectors=opts.get("max_vectors", 10_000)
        )
    fn = lb.fn
    detail = f"{len(fn)} vectors after {cycles} cycles, capped={lb.capped}"
    return fn.values, _dr_la_modes(m, fn, fn.values), "dr", detail


def _build_linq(m, seed, opts):
    rng = _method_rng(seed, "linq")
    pts = sample_belief_uniform(rng, m.num_states, opts.get("samples", 100))
    probes = sample_belief_uniform(rng, m.num_states, 50)
    fit = fit_scheme(
        m,
        seed_linear_q(m),
        pts,
        scheme=opts.get("scheme", "synchronous"),
        epochs=opts.get("epochs", 10),
        probes=probes,
        rng=rng,
    )
    mdl = fit.model

    def vb(bs):
        return (np.asarray(bs) @ mdl.weights).max(axis=1)

    detail = f"epochs={opts.get('epochs', 10)}, diverged={fit.diverged}"
    return vb, _dr_la_modes(m, mdl, vb), "dr", detail


_BUILDERS = {
    "mdp": _build_mdp,
    "qmdp": _build_qmdp,
    "fib": _build_fib,
    "umdp": _build_umdp,
    "exact": _build_exact,
    "sawtooth-grid": _build_sawtooth_grid,
    "incremental-pointdp": _build_incremental_pointdp,
    "linq": _build_linq,
}

METHOD_NAMES = tuple(_BUILDERS)


def build_method(m: Pomdp, name: str, seed: int = 0, **opts) -> MethodArtifact:
    """Solve one method end to end; wall-clock solve time lands in solve_ms."""
    if name not in _BUILDERS:
        raise ValueError(f"unknown method {name!r}; available: {sorted(_BUILDERS)}")
    t0 = time.perf_counter()
    vb, modes, default, detail = _BUILDERS[name](m, seed, opts)
    ms = (time.perf_counter() - t0) * 1e3
    return MethodArtifact(
        name=name,
        value_batch=vb,
        modes=modes,
        default_mode=default,
        solve_ms=ms,
        detail=detail,
    )


# ---------------------------------------------------------------------------
# comparison runs
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """One comparison run: which methods, how many beliefs, how long, what seed."""

    methods: tuple[str, ...]
    n_beliefs: int = 2000
    horizon: int = 60
    seed: int = 0
    modes: str = "default"  # "default" = one canonical row per method, "all"
    method_options: dict = field(default_factory=dict)

    def __post_init__(self):
        self.methods = tuple(self.methods)
        if not self.methods:
            raise ValueError("methods must be nonempty")
        if self.n_beliefs <= 0:
            raise ValueError("n_beliefs must be positive")
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if self.modes not in ("default", "all"):
            raise ValueError(f"modes must be 'default' or 'all', got {self.modes!r}")


@dataclass
class RunResult:
    rows: list
    errors: dict
    meta: dict


def run_comparison(m: Pomdp, cfg: ExperimentConfig) -> RunResult:
    """Solve, bound, and control-test every requested method on shared data.

    The belief set doubles as the episode-start set and is generated once per
    seed; every policy is simulated under the same master seed (common random
    numbers). A method that fails lands in `errors` and the run continues.
    """
    beliefs = sample_belief_uniform(
        _method_rng(cfg.seed, "beliefs"), m.num_states, cfg.n_beliefs
    )
    rows: list[dict] = []
    errors: dict[str, str] = {}
    for name in cfg.methods:
        try:
            art = build_method(
                m, name, seed=cfg.seed, **cfg.method_options.get(name, {})
            )
            bound_mean = bound_quality(art.value_batch, beliefs)
            mode_names = [art.default_mode] if cfg.modes == "default" else list(art.modes)
            for mode in mode_names:
                policy = art.modes[mode]()
                res = control_quality(m, policy, beliefs, cfg.horizon, seed=cfg.seed)
                ops = (policy.dot_ops + policy.belief_updates) / max(policy.decisions, 1)
                rows.append(
                    {
                        "method": name,
                        "mode": mode,
                        "bound_mean": bound_mean,
                        "control_mean": res.mean,
                        "control_se": res.se,
                        "solve_ms": art.solve_ms,
                        "decision_ops": ops,
                    }
                )
        except Exception as exc:  # noqa: BLE001 — isolation is the contract here
            errors[name] = f"{type(exc).__name__}: {exc}"
    meta = {
        "discount": m.discount,
        "num_states": m.num_states,
        "num_actions": m.num_actions,
        "num_obs": m.num_obs,
        "methods": ",".join(cfg.methods),
        "n_beliefs": cfg.n_beliefs,
        "horizon": cfg.horizon,
        "seed": cfg.seed,
        "modes": cfg.modes,
    }
    for k, v in m.meta.items():
        if isinstance(v, (str, int, float, bool)):
            meta[k] = v
    return RunResult(rows=rows, errors=errors, meta=meta)


# ---------------------------------------------------------------------------
# extra solvers surfaced by the CLI
# ---------------------------------------------------------------------------

def partitioned_fib_iterate(
    m: Pomdp,
    partition,
    eps: float = 1e-6,
    max_iters: int = 200,
    f0: PwlcFn | None = None,
) -> ValueIterationResult:
    """Iterate the block-partitioned informed backup to its fixed point."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    current = f0 if f0 is not None else solve_fomdp(m).qmdp_fn()
    err = np.inf
    iters = 0
    for _ in range(max_iters):
        nxt = partitioned_fib_backup(m, current, partition)
        iters += 1
        err = pwlc_norm(nxt, current)
        current = nxt
        if err <= eps:
            break
    return ValueIterationResult(
        fn=current, bellman_error=float(err), iters=iters, capped=err > eps
    )


@dataclass
class LpGridFn:
    """Grid values evaluated by the LP interpolation (tightest convex mix)."""

    grid: Grid
    values: np.ndarray
    rule: str = "lp"

    def eval(self, b: np.ndarray) -> float:
        return best_interp_lp(self.grid, self.values, b)[0]

    def eval_many(self, beliefs: np.ndarray) -> np.ndarray:
        return np.array([self.eval(b) for b in np.asarray(beliefs, dtype=float)])


@dataclass
class GridSolution:
    fn: object  # GridValueFn or LpGridFn
    rounds: int
    converged: bool


def solve_grid_method(
    m: Pomdp,
    grid: Grid,
    rule: str = "sawtooth",
    eps: float = 1e-6,
    max_rounds: int = 200,
    sigma: float = 0.25,
) -> GridSolution:
    """Fixed-point iteration of the grid backup under any interpolation rule."""
    if rule == "sawtooth":
        res = solve_sawtooth(m, grid, eps=eps, max_rounds=max_rounds)
        return GridSolution(fn=res.fn, rounds=res.rounds, converged=res.converged)
    if rule == "lp" and not grid.has_extremes:
        raise GridMissingExtremesError("lp interpolation needs all simplex corners")

    def make(vals):
        if rule == "lp":
            return LpGridFn(grid, vals)
        return GridValueFn(grid, vals, rule=rule, sigma=sigma)

    q = solve_fomdp(m)
    vals = (grid.points @ q.q).max(axis=1)
    converged = False
    rounds = 0
    for _ in range(max_rounds):
        nxt = grid_backup(m, make(vals))
        rounds += 1
        change = np.abs(nxt - vals).max()
        vals = nxt
        if change <= eps:
            converged = True
            break
    return GridSolution(fn=make(vals), rounds=rounds, converged=converged)


def adaptive_grid_solve(
    m: Pomdp,
    target_points: int,
    seed: int = 0,
    increment: int | None = None,
    grow_eps: float = 0.5,
    eps: float = 1e-4,
    max_rounds: int = 500,
    walk_cap: int = 60,
) -> SawtoothResult:
    """Grow a sawtooth grid by simulation up to target_points, then solve.

    Growth alternates coarse solves (grow_eps) with batches of simulated
    points; each solve warm-starts from the previous values extended by the
    current surface's own evaluations, so late rounds converge in a handful
    of sweeps. Corner walks that cannot escape the known set any more are
    routine once the reachable region is covered, so their warnings are
    silenced here; growth stops early when nothing novel comes back.
    """
    grid = Grid.extremes(m.num_states)
    rng = _method_rng(seed, "adaptive-grid")
    goal_step = increment if increment else m.num_states
    vals = None
    while grid.num_points < target_points:
        res = solve_sawtooth(m, grid, eps=grow_eps, max_rounds=max_rounds, vals0=vals)
        cur_grid, cur_vals = grid, res.fn.values
        goal = min(goal_step, target_points - grid.num_points)
        got, attempts = 0, 0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            while got < goal and attempts < 8:
                gf = GridValueFn(cur_grid, cur_vals, rule="sawtooth")
                cand = adaptive_expand(m, gf, rng, max_steps=walk_cap)
                attempts += 1
                if cand.size == 0:
                    continue
                take = cand[: goal - got]
                ev = gf.eval_many(take)
                cur_grid = cur_grid.with_points(take)
                cur_vals = np.concatenate([cur_vals, ev])
                got += len(take)
        if got == 0:
            break
        grid, vals = cur_grid, cur_vals
    return solve_sawtooth(m, grid, eps=eps, max_rounds=max_rounds, vals0=vals)
