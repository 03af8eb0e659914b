"""Least-squares fitting of parametric value-function models.

Two model families: one linear function per action (evaluated as their max),
and a smooth-max over an adjustable vector set, where the temperature trades
smoothness against fidelity to the underlying piecewise-linear target. Both
support the online delta rule; fitting proceeds either synchronously (freeze,
retarget, refit, swap) or Gauss-Seidel style (one live model, updated as it
is queried). Neither scheme carries a convergence guarantee — results track a
probe residual and carry an explicit divergence flag instead.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .bounds import solve_fomdp
from .grid import Grid
from .model import OBS_FLOOR, Pomdp, belief_update, expected_reward, obs_prob, sample_belief_uniform

__all__ = [
    "LinearQModel",
    "SoftmaxModel",
    "NonpositiveInnerProductError",
    "FitResult",
    "softmax_eval",
    "softmax_gradient",
    "delta_step",
    "expansion_targets",
    "fit_linear_q",
    "fit_scheme",
    "rate_schedule",
    "seed_linear_q",
    "seed_softmax",
    "positive_reward_shift",
    "DEFAULT_RATE_RANGE",
    "DEFAULT_SAMPLE_COUNT",
    "DEFAULT_SOFTMAX_K",
    "SOFTMAX_SET_SIZES",
]

DEFAULT_RATE_RANGE = (0.2, 0.001)
DEFAULT_SAMPLE_COUNT = 100
# the source experiments fix the vector-set sizes but never the temperature;
# the default here is a documented guess, exposed as a flag everywhere
DEFAULT_SOFTMAX_K = 5.0
SOFTMAX_SET_SIZES = (10, 15)

_WEIGHT_CEILING = 1e12


class NonpositiveInnerProductError(ValueError):
    """The smooth-max model is undefined where some vector's inner product
    with the belief is not positive; shift the rewards up and retry."""


@dataclass
class LinearQModel:
    """One linear action-value function per action: weights[s, a]."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=float)
        if w.ndim != 2 or not np.isfinite(w).all():
            raise ValueError("weights must be a finite (states, actions) table")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    def q_values(self, b: np.ndarray) -> np.ndarray:
        return b @ self.weights

    def eval(self, b: np.ndarray) -> float:
        return float(self.q_values(b).max())

    def action(self, b: np.ndarray) -> int:
        return int(np.argmax(self.q_values(b)))


@dataclass
class SoftmaxModel:
    """Smooth maximum of a vector set; higher k hugs the max more tightly."""

    vectors: np.ndarray
    k: float = DEFAULT_SOFTMAX_K

    def __post_init__(self):
        v = np.ascontiguousarray(self.vectors, dtype=float)
        if v.ndim != 2 or not np.isfinite(v).all():
            raise ValueError("vectors must be a finite 2-D array")
        if not np.isfinite(self.k) or self.k < 1.0:
            raise ValueError("temperature k must be finite and at least 1")
        v.flags.writeable = False
        object.__setattr__(self, "vectors", v)

    def eval(self, b: np.ndarray) -> float:
        return softmax_eval(self, b)


def _positive_dots(mdl: SoftmaxModel, b: np.ndarray) -> np.ndarray:
    dots = mdl.vectors @ b
    if (dots <= 0.0).any():
        raise NonpositiveInnerProductError(
            "model has a nonpositive inner product at this belief; "
            "apply positive_reward_shift to the problem first"
        )
    return dots


def softmax_eval(mdl: SoftmaxModel, b: np.ndarray) -> float:
    # factor out the largest dot so huge temperatures cannot overflow
    dots = _positive_dots(mdl, b)
    top = dots.max()
    return float(top * (((dots / top) ** mdl.k).sum()) ** (1.0 / mdl.k))


def softmax_gradient(mdl: SoftmaxModel, b: np.ndarray) -> np.ndarray:
    """d eval / d vectors[j, s]; same shape as the vector set."""
    dots = _positive_dots(mdl, b)
    val = softmax_eval(mdl, b)
    return np.outer((dots / val) ** (mdl.k - 1.0), b)


def delta_step(mdl, b: np.ndarray, y: float, rate: float):
    """One online gradient step toward target y at belief b.

    For the per-action linear model only the winning action's function moves —
    one function is responsible for each sample. The smooth-max model has no
    such owner, so every vector shifts through the chain rule.
    """
    if rate <= 0:
        raise ValueError("rate must be positive")
    if isinstance(mdl, LinearQModel):
        q = mdl.q_values(b)
        a = int(np.argmax(q))
        resid = float(q[a]) - y
        w = mdl.weights.copy()
        w[:, a] -= rate * resid * b
        return LinearQModel(w)
    if isinstance(mdl, SoftmaxModel):
        resid = softmax_eval(mdl, b) - y
        return SoftmaxModel(
            mdl.vectors - rate * resid * softmax_gradient(mdl, b), k=mdl.k
        )
    raise TypeError(f"unsupported model type {type(mdl).__name__}")


def expansion_targets(m: Pomdp, vfun, b: np.ndarray) -> np.ndarray:
    """Per-action one-step expansion values at b under the handle vfun."""
    out = np.empty(m.num_actions)
    for a in range(m.num_actions):
        total = expected_reward(m, b, a)
        probs = obs_prob(m, b, a)
        for o in np.flatnonzero(probs > OBS_FLOOR):
            total += m.discount * probs[o] * vfun(belief_update(m, b, a, o))
        out[a] = total
    return out


def _sample_points(samples) -> np.ndarray:
    if isinstance(samples, Grid):
        return samples.points
    return np.atleast_2d(np.asarray(samples, dtype=float))


def fit_linear_q(m: Pomdp, vfun, samples) -> LinearQModel:
    """Per-action least-squares fit to the one-step expansion targets.

    A rank-deficient sample matrix still fits (minimum-norm solution) but
    warns — supply at least as many affinely independent points as states.
    """
    pts = _sample_points(samples)
    targets = np.vstack([expansion_targets(m, vfun, b) for b in pts])
    sol, _, rank, _ = np.linalg.lstsq(pts, targets, rcond=None)
    if rank < pts.shape[1]:
        warnings.warn(
            f"sample matrix rank {rank} < {pts.shape[1]} states; "
            "returning the minimum-norm fit",
            stacklevel=2,
        )
    return LinearQModel(sol)


def rate_schedule(start: float, end: float, n: int) -> np.ndarray:
    """Linearly decaying learning rates, one per epoch."""
    return np.linspace(start, end, n)


@dataclass
class FitResult:
    model: object
    probe_errors: np.ndarray
    diverged: bool = False


def _finite_model(mdl) -> bool:
    table = mdl.weights if isinstance(mdl, LinearQModel) else mdl.vectors
    return bool(np.isfinite(table).all() and np.abs(table).max() < _WEIGHT_CEILING)


def fit_scheme(
    m: Pomdp,
    model,
    samples,
    scheme: str = "synchronous",
    epochs: int = 10,
    rates: tuple[float, float] = DEFAULT_RATE_RANGE,
    probes: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    inner_passes: int = 10,
) -> FitResult:
    """Run repeated fit-to-expansion rounds and track a probe residual.

    synchronous: targets come from a frozen copy of the model, then the fit
    replaces it — linear-Q refits exactly, the smooth-max model takes
    inner_passes delta sweeps. gauss-seidel: a single live model produces
    each sample's target and immediately absorbs the step, in an order
    shuffled per epoch.

    No convergence guarantee exists for either scheme; a run that overflows,
    goes non-finite, or loses smooth-max positivity stops early with
    diverged=True (the trace keeps only completed epochs).
    """
    if scheme in ("synchronous", "sync"):
        sync = True
    elif scheme in ("gauss-seidel", "gs"):
        sync = False
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    pts = _sample_points(samples)
    rng = np.random.default_rng(0) if rng is None else rng
    if probes is None:
        probes = sample_belief_uniform(rng, m.num_states, DEFAULT_SAMPLE_COUNT)
    epoch_rates = rate_schedule(rates[0], rates[1], epochs) if epochs else np.empty(0)

    def probe_error(mdl) -> float:
        errs = [
            abs(mdl.eval(b) - expansion_targets(m, mdl.eval, b).max()) for b in probes
        ]
        return float(np.mean(errs))

    trace: list[float] = []
    diverged = False
    for e in range(epochs):
        rate = float(epoch_rates[e])
        try:
            if sync:
                if isinstance(model, LinearQModel):
                    model = fit_linear_q(m, model.eval, pts)
                else:
                    frozen = model
                    ys = np.array(
                        [expansion_targets(m, frozen.eval, b).max() for b in pts]
                    )
                    for _ in range(inner_passes):
                        for j in range(len(pts)):
                            model = delta_step(model, pts[j], float(ys[j]), rate)
            else:
                for j in rng.permutation(len(pts)):
                    y = expansion_targets(m, model.eval, pts[j]).max()
                    model = delta_step(model, pts[j], float(y), rate)
            if not _finite_model(model):
                diverged = True
                break
            trace.append(probe_error(model))
        except (NonpositiveInnerProductError, FloatingPointError, OverflowError):
            diverged = True
            break
    return FitResult(model=model, probe_errors=np.array(trace), diverged=diverged)


def seed_linear_q(m: Pomdp, eps: float = 1e-9) -> LinearQModel:
    """Start from the fully observable action-value table."""
    return LinearQModel(solve_fomdp(m, eps=eps).q.copy())


def seed_softmax(
    m: Pomdp,
    n_vectors: int = SOFTMAX_SET_SIZES[0],
    k: float = DEFAULT_SOFTMAX_K,
    rng: np.random.Generator | None = None,
    margin: float = 1e-3,
) -> SoftmaxModel:
    """Fully-observable rows, tiled and jittered to the requested set size,
    shifted so every inner product starts strictly positive."""
    if n_vectors < 1:
        raise ValueError("need at least one vector")
    rng = np.random.default_rng(0) if rng is None else rng
    rows = solve_fomdp(m).q.T
    reps = int(np.ceil(n_vectors / rows.shape[0]))
    base = np.tile(rows, (reps, 1))[:n_vectors].copy()
    if n_vectors > rows.shape[0]:
        spread = max(1.0, float(np.ptp(base)))
        base[rows.shape[0]:] += rng.normal(0.0, 0.01 * spread, base[rows.shape[0]:].shape)
    base += max(0.0, margin - base.min())
    return SoftmaxModel(np.maximum(base, margin), k=k)


def positive_reward_shift(m: Pomdp, margin: float = 1e-6) -> tuple[Pomdp, float]:
    """Shift every reward up just enough that all expected step rewards — and
    hence all fixed-point values — are strictly positive. Returns the shifted
    problem and the constant c; undo on reported values by subtracting
    c / (1 - discount)."""
    low = float(m.step_reward.min())
    if low > 0.0:
        return m, 0.0
    c = margin - low
    return (
        Pomdp(
            trans=m.trans,
            obs=m.obs,
            reward=m.reward + c,
            discount=m.discount,
            state_names=m.state_names,
            action_names=m.action_names,
            obs_names=m.obs_names,
        ),
        c,
    )
