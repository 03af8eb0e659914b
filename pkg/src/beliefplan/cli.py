"""Command line front end.

Every verb works on one model, named by the global --model flag: the bundled
20-room maze ("maze20"), a seeded random instance ("random:S,A,O[,discount]"),
or a JSON file path. Outputs are plain text summaries; verbs that produce
tables or artifacts take explicit --out-file / --save paths.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness, report
from .exact import value_iteration
from .fsm import evaluate_fsm, fsm_value, hansen_loop, make_one_action_fsm, save_fsm
from .grid import Grid, save_grid_fn
from .lsfit import (
    fit_scheme,
    positive_reward_shift,
    seed_linear_q,
    seed_softmax,
)
from .model import (
    Pomdp,
    build_maze20,
    load_model,
    random_pomdp,
    sample_belief_uniform,
    save_model,
)
from .pointdp import (
    gl_iterate,
    incremental_update,
    order_extremes,
    simulate_point_sequence,
)
from .pwlc import save_alpha_set

__all__ = ["main"]


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _resolve_model(spec: str, seed: int) -> Pomdp:
    if spec == "maze20":
        return build_maze20()
    if spec.startswith("random:"):
        parts = spec[len("random:"):].split(",")
        if len(parts) not in (3, 4):
            raise ValueError(f"random model spec needs S,A,O[,discount]: {spec!r}")
        try:
            s, a, o = (int(p) for p in parts[:3])
            discount = float(parts[3]) if len(parts) == 4 else 0.9
        except ValueError as exc:
            raise ValueError(f"bad random model spec {spec!r}") from exc
        return random_pomdp(harness._method_rng(seed, "model"), (s, a, o), discount)
    path = Path(spec)
    if not path.exists():
        raise ValueError(f"model spec {spec!r} is not maze20, random:..., or a file")
    return load_model(path)


def _uniform_belief(m: Pomdp) -> np.ndarray:
    return np.full(m.num_states, 1.0 / m.num_states)


def _probe_beliefs(m: Pomdp, seed: int, count: int) -> np.ndarray:
    return sample_belief_uniform(harness._method_rng(seed, "probes"), m.num_states, count)


def _parse_partition(text: str | None, n_states: int) -> list[list[int]]:
    if not text:
        return [[s] for s in range(n_states)]
    return [[int(x) for x in block.split(",")] for block in text.split("|")]


def _point_spec(m: Pomdp, spec: str, seed: int):
    """Returns (kind, payload): fixed point rows, a count, or a heuristic name."""
    if spec.startswith("fixed:"):
        rows = np.array(json.loads(Path(spec[len("fixed:"):]).read_text()), dtype=float)
        return "fixed", rows
    if spec.startswith("random:"):
        return "fixed", sample_belief_uniform(
            harness._method_rng(seed, "points"), m.num_states, int(spec[len("random:"):])
        )
    if spec in ("heur-extremes", "heur-twotier"):
        return spec, None
    raise ValueError(f"bad points spec {spec!r}")


# ---------------------------------------------------------------------------
# verbs
# ---------------------------------------------------------------------------

def _run_solve(m: Pomdp, args) -> int:
    res = value_iteration(m, eps=args.eps, max_iters=args.max_iters)
    print(
        f"{len(res.fn)} vectors after {res.iters} iterations, "
        f"bellman residual {res.bellman_error:.3g}, capped={res.capped}"
    )
    print(f"value at uniform belief: {res.fn.value(_uniform_belief(m)):.6f}")
    if args.save:
        save_alpha_set(res.fn, args.save)
        print(f"saved vector set to {args.save}")
    return 0


def _run_bound(m: Pomdp, args) -> int:
    beliefs = _probe_beliefs(m, args.seed, args.n_beliefs)
    if args.method == "fib-partitioned":
        partition = _parse_partition(args.partition, m.num_states)
        res = harness.partitioned_fib_iterate(
            m, partition, eps=args.eps, max_iters=args.max_iters
        )
        fn = res.fn
        print(f"{len(fn)} vectors, iters={res.iters}, residual={res.bellman_error:.3g}")
        mean = harness.bound_quality(fn, beliefs)
    else:
        art = harness.build_method(
            m, args.method, seed=args.seed, eps=args.eps, max_iters=args.max_iters
        )
        print(f"{args.method}: {art.detail} ({art.solve_ms:.1f} ms)")
        mean = harness.bound_quality(art.value_batch, beliefs)
    print(f"mean value over {args.n_beliefs} sampled beliefs: {mean:.6f}")
    return 0


def _run_grid(m: Pomdp, args) -> int:
    if args.adaptive:
        res = harness.adaptive_grid_solve(
            m,
            target_points=args.points,
            seed=args.seed,
            increment=args.increment,
            eps=args.eps,
            max_rounds=args.max_rounds,
        )
        fn, rounds, converged = res.fn, res.rounds, res.converged
    else:
        grid = Grid.extremes(m.num_states)
        extra = args.points - grid.num_points
        if extra > 0:
            grid = grid.with_points(
                sample_belief_uniform(
                    harness._method_rng(args.seed, "grid"), m.num_states, extra
                )
            )
        sol = harness.solve_grid_method(
            m, grid, rule=args.rule, eps=args.eps,
            max_rounds=args.max_rounds, sigma=args.sigma,
        )
        fn, rounds, converged = sol.fn, sol.rounds, sol.converged
    n_pts = fn.grid.num_points
    print(f"rule={args.rule}: {n_pts} points, rounds={rounds}, converged={converged}")
    beliefs = _probe_beliefs(m, args.seed, 200)
    mean = float(np.mean([fn.eval(b) for b in beliefs]))
    print(f"mean value over 200 sampled beliefs: {mean:.6f}")
    print(f"value at uniform belief: {fn.eval(_uniform_belief(m)):.6f}")
    if args.save:
        if args.rule == "lp":
            doc = {"points": fn.grid.points.tolist(), "values": fn.values.tolist(), "rule": "lp"}
            Path(args.save).write_text(json.dumps(doc))
        else:
            save_grid_fn(fn, args.save)
        print(f"saved grid function to {args.save}")
    return 0


def _cycle_points(m: Pomdp, kind, payload, fn, rng) -> np.ndarray:
    if kind == "fixed":
        return payload
    corners = order_extremes(m, fn)
    if kind == "heur-extremes":
        return corners
    walks = [simulate_point_sequence(m, b, fn, 4, rng) for b in corners]
    return np.vstack(walks)


def _run_pointdp(m: Pomdp, args) -> int:
    kind, payload = _point_spec(m, args.points, args.seed)
    rng = harness._method_rng(args.seed, "pointdp")
    if args.mode == "standard":
        if kind != "fixed":
            raise ValueError("standard mode needs a fixed point set")
        grid = Grid(np.vstack([np.eye(m.num_states), payload]))
        fn = gl_iterate(m, grid, cycles=args.cycles)
        print(f"{len(fn)} vectors after {args.cycles} replacement cycles")
    else:
        lb = harness._best_one_action_bound(m)
        for _ in range(args.cycles):
            pts = _cycle_points(m, kind, payload, lb.fn, rng)
            lb = incremental_update(m, lb, pts, max_vectors=args.max_vectors)
        fn = lb.fn
        print(
            f"{len(fn)} vectors after {args.cycles} incremental cycles, "
            f"capped={lb.capped}"
        )
    print(f"value at uniform belief: {fn.value(_uniform_belief(m)):.6f}")
    if args.save:
        save_alpha_set(fn, args.save)
        print(f"saved vector set to {args.save}")
    return 0


def _run_lsfit(m: Pomdp, args) -> int:
    rng = harness._method_rng(args.seed, "lsfit")
    pts = sample_belief_uniform(rng, m.num_states, args.samples)
    rates = tuple(float(x) for x in args.rate.split(":"))
    if len(rates) != 2:
        raise ValueError(f"--rate needs start:end, got {args.rate!r}")
    shift = 0.0
    fit_m = m
    if args.fit_model == "linq":
        model = seed_linear_q(m)
    elif args.fit_model.startswith("softmax:"):
        parts = args.fit_model.split(":")
        if len(parts) != 3:
            raise ValueError("softmax spec is softmax:N:K")
        fit_m, shift = positive_reward_shift(m)
        model = seed_softmax(fit_m, n_vectors=int(parts[1]), k=float(parts[2]), rng=rng)
    else:
        raise ValueError(f"bad fit model {args.fit_model!r}")
    fit = fit_scheme(
        fit_m, model, pts, scheme=args.scheme, epochs=args.epochs, rates=rates, rng=rng
    )
    trace = fit.probe_errors
    first = f"{trace[0]:.6f}" if len(trace) else "n/a"
    last = f"{trace[-1]:.6f}" if len(trace) else "n/a"
    print(f"probe error: first={first} last={last}, diverged={fit.diverged}")
    value = fit.model.eval(_uniform_belief(m))
    if shift:
        value -= shift / (1.0 - m.discount)
        print(f"(reward shift {shift:.3g} removed from the reported value)")
    print(f"value at uniform belief: {value:.6f}")
    return 0


def _run_policy_iter(m: Pomdp, args) -> int:
    if args.start == "best":
        c0 = None
        best = -np.inf
        for a in range(m.num_actions):
            cand = evaluate_fsm(m, make_one_action_fsm(a, m.num_obs))
            if cand.values.mean() > best:
                c0, best = cand, cand.values.mean()
    elif args.start.startswith("one-action:"):
        c0 = evaluate_fsm(
            m, make_one_action_fsm(int(args.start.split(":")[1]), m.num_obs)
        )
    else:
        raise ValueError(f"bad start spec {args.start!r}")
    res = hansen_loop(m, c0, rounds=args.rounds, eps=args.eps, max_states=args.max_states)
    c = res.controller
    print(
        f"{c.num_memory} memory states after {res.rounds} rounds "
        f"(stopped by {res.stopped_by})"
    )
    val, _ = fsm_value(c, _uniform_belief(m))
    print(f"machine value at uniform belief: {val:.6f}")
    if args.save:
        save_fsm(c, args.save)
        print(f"saved controller to {args.save}")
    return 0


def _run_simulate(m: Pomdp, args) -> int:
    art = harness.build_method(m, args.method, seed=args.seed)
    mode = args.mode or art.default_mode
    if mode not in art.modes:
        raise ValueError(f"method {args.method!r} has no mode {mode!r}")
    starts = sample_belief_uniform(
        harness._method_rng(args.seed, "starts"), m.num_states, args.episodes
    )
    policy = art.modes[mode]()
    res = harness.control_quality(m, policy, starts, horizon=args.horizon, seed=args.seed)
    ops = (policy.dot_ops + policy.belief_updates) / max(policy.decisions, 1)
    print(f"{args.method}:{mode} over {res.n} episodes x {args.horizon} steps")
    print(f"mean return: {res.mean:.6f} +- {res.se:.6f} (SE)")
    print(f"work per decision: {ops:.1f} ops; solve took {art.solve_ms:.1f} ms")
    return 0


def _run_compare(m: Pomdp, args) -> int:
    cfg = harness.ExperimentConfig(
        methods=tuple(s for s in args.methods.split(",") if s),
        n_beliefs=args.n_beliefs,
        horizon=args.horizon,
        seed=args.seed,
        modes=args.modes,
    )
    result = harness.run_comparison(m, cfg)
    out_file = Path(args.out_file)
    if args.out == "json":
        report.write_json(result, out_file)
    else:
        report.write_csv(result, out_file)
    print(f"wrote {len(result.rows)} rows to {out_file}")
    for row in result.rows:
        print(
            f"  {row['method']}:{row['mode']}  bound={row['bound_mean']:.4f}  "
            f"control={row['control_mean']:.4f}+-{row['control_se']:.4f}"
        )
    for name in sorted(result.errors):
        print(f"  {name} failed: {result.errors[name]}", file=sys.stderr)
    if not args.no_figures and result.rows:
        for p in report.render_figures(result, out_file):
            print(f"wrote figure {p}")
    return 0 if result.rows else 1


def _run_maze20(args) -> int:
    m = build_maze20()
    save_model(m, args.out_file)
    print(
        f"wrote maze20 ({m.num_states} states, {m.num_actions} actions, "
        f"{m.num_obs} observations) to {args.out_file}"
    )
    return 0


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="beliefplan",
        description="Plan in belief space: bounds, grids, point updates, fits.",
    )
    p.add_argument("--model", default="maze20",
                   help="maze20 | random:S,A,O[,discount] | path to a model JSON")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", choices=("csv", "json"), default="csv",
                   help="table format for verbs that write one")
    sub = p.add_subparsers(dest="verb", required=True)

    solve = sub.add_parser("solve", help="exact value iteration")
    solve.add_argument("--eps", type=float, default=1e-3)
    solve.add_argument("--max-iters", type=int, default=200)
    solve.add_argument("--save", default=None, help="write the vector set as JSON")

    bound = sub.add_parser("bound", help="upper/lower bound families")
    bound.add_argument("--method", default="qmdp",
                       choices=("mdp", "qmdp", "fib", "umdp", "fib-partitioned"))
    bound.add_argument("--n-beliefs", type=int, default=1000)
    bound.add_argument("--eps", type=float, default=1e-6)
    bound.add_argument("--max-iters", type=int, default=200)
    bound.add_argument("--partition", default=None,
                       help="state blocks like 0,1|2,3 (fib-partitioned only)")

    grid = sub.add_parser("grid", help="grid interpolation solvers")
    grid.add_argument("--rule", default="sawtooth",
                      choices=("nn", "kernel", "sawtooth", "lp"))
    grid.add_argument("--points", type=int, default=None,
                      help="total grid size (defaults to the simplex corners)")
    grid.add_argument("--adaptive", action="store_true",
                      help="grow the grid by simulation (sawtooth rule)")
    grid.add_argument("--increment", type=int, default=None,
                      help="points added per growth round")
    grid.add_argument("--sigma", type=float, default=0.25)
    grid.add_argument("--eps", type=float, default=1e-6)
    grid.add_argument("--max-rounds", type=int, default=200)
    grid.add_argument("--save", default=None)

    pointdp = sub.add_parser("pointdp", help="point-based lower-bound updates")
    pointdp.add_argument("--mode", default="incremental",
                         choices=("standard", "incremental"))
    pointdp.add_argument("--points", default="random:40",
                         help="fixed:file | random:N | heur-extremes | heur-twotier")
    pointdp.add_argument("--cycles", type=int, default=5)
    pointdp.add_argument("--max-vectors", type=int, default=10_000)
    pointdp.add_argument("--save", default=None)

    lsfit = sub.add_parser("lsfit", help="least-squares value fits")
    lsfit.add_argument("--fit-model", default="linq", help="linq | softmax:N:K")
    lsfit.add_argument("--scheme", default="sync", choices=("sync", "gs"))
    lsfit.add_argument("--epochs", type=int, default=10)
    lsfit.add_argument("--rate", default="0.2:0.001", help="start:end learning rates")
    lsfit.add_argument("--samples", type=int, default=100)

    piter = sub.add_parser("policy-iter", help="controller improvement loop")
    piter.add_argument("--start", default="best", help="best | one-action:A")
    piter.add_argument("--rounds", type=int, default=5)
    piter.add_argument("--eps", type=float, default=1e-6)
    piter.add_argument("--max-states", type=int, default=200)
    piter.add_argument("--save", default=None)

    sim = sub.add_parser("simulate", help="episode rollouts for one method")
    sim.add_argument("--method", default="qmdp", choices=harness.METHOD_NAMES)
    sim.add_argument("--mode", default=None, help="fsm | dr | la (method default)")
    sim.add_argument("--episodes", type=int, default=200)
    sim.add_argument("--horizon", type=int, default=60)

    cmp_ = sub.add_parser("compare", help="bound + control table across methods")
    cmp_.add_argument("--methods", default="mdp,qmdp,fib")
    cmp_.add_argument("--n-beliefs", type=int, default=2000)
    cmp_.add_argument("--horizon", type=int, default=60)
    cmp_.add_argument("--modes", default="default", choices=("default", "all"))
    cmp_.add_argument("--out-file", default="compare.csv")
    cmp_.add_argument("--no-figures", action="store_true",
                      help="skip the PNG charts next to the table")

    maze = sub.add_parser("maze20", help="the bundled navigation benchmark")
    maze.add_argument("action", choices=("emit",))
    maze.add_argument("--out-file", default="maze20.json")

    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.verb == "maze20":
            return _run_maze20(args)
        m = _resolve_model(args.model, args.seed)
        handler = {
            "solve": _run_solve,
            "bound": _run_bound,
            "grid": _run_grid,
            "pointdp": _run_pointdp,
            "lsfit": _run_lsfit,
            "policy-iter": _run_policy_iter,
            "simulate": _run_simulate,
            "compare": _run_compare,
        }[args.verb]
        if args.verb == "grid" and args.points is None:
            args.points = m.num_states
        return handler(m, args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
