"""Piecewise-linear convex value functions over beliefs.

A value function is represented by a set of alpha vectors; its value at a
belief is the best dot product over the set. This module provides evaluation,
the LP usefulness test (does a vector singlehandedly win somewhere on the
simplex?), set pruning, and exact sup-norm computation between two PWLC
functions — the quantity the stopping rules and accuracy guarantees are
phrased in.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linprog

__all__ = [
    "AlphaVector",
    "PwlcFn",
    "LpFailureError",
    "DOMINATION_TOL",
    "DUPLICATE_TOL",
    "eval_pwlc",
    "eval_pwlc_batch",
    "dominates_lp",
    "prune",
    "pwlc_sup_diff",
    "pwlc_norm",
    "accuracy_bounds",
    "bound_gap_accuracy",
    "save_alpha_set",
    "load_alpha_set",
]

# a vector is kept iff its LP advantage exceeds this (keeping ties is
# conservative: it never changes the function by more than the tolerance)
DOMINATION_TOL = 1e-9
# exact-duplicate collapse threshold
DUPLICATE_TOL = 1e-12


class LpFailureError(RuntimeError):
    """An LP solve failed; retry with a slightly perturbed input."""


@dataclass(frozen=True)
class AlphaVector:
    """One linear piece: coefficients per state, plus bookkeeping about the
    action that generated it and the per-observation predecessor choices."""

    coeffs: np.ndarray
    action: int | None = None
    witnesses: tuple[int, ...] | None = None

    def __post_init__(self):
        c = np.ascontiguousarray(self.coeffs, dtype=float)
        if c.ndim != 1 or not np.isfinite(c).all():
            raise ValueError("alpha vector coefficients must be a finite 1-D array")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)
        if self.witnesses is not None:
            object.__setattr__(self, "witnesses", tuple(int(w) for w in self.witnesses))


class PwlcFn:
    """A nonempty set of alpha vectors; value(b) = max over the set of α·b."""

    def __init__(self, vectors: Sequence[AlphaVector]):
        vectors = list(vectors)
        if not vectors:
            raise ValueError("a PWLC function needs at least one vector")
        n = vectors[0].coeffs.shape[0]
        if any(v.coeffs.shape[0] != n for v in vectors):
            raise ValueError("alpha vectors disagree on the number of states")
        self.vectors: list[AlphaVector] = vectors
        self._matrix: np.ndarray | None = None

    @classmethod
    def from_matrix(cls, mat, actions: Sequence[int | None] | None = None) -> "PwlcFn":
        mat = np.atleast_2d(np.asarray(mat, dtype=float))
        if actions is None:
            actions = [None] * mat.shape[0]
        return cls([AlphaVector(row, action=a) for row, a in zip(mat, actions)])

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            m = np.vstack([v.coeffs for v in self.vectors])
            m.flags.writeable = False
            self._matrix = m
        return self._matrix

    @property
    def n_states(self) -> int:
        return self.vectors[0].coeffs.shape[0]

    def __len__(self) -> int:
        return len(self.vectors)

    def __iter__(self):
        return iter(self.vectors)

    def value(self, b: np.ndarray) -> float:
        return float((self.matrix @ b).max())

    def values(self, beliefs: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(beliefs) @ self.matrix.T).max(axis=1)


def eval_pwlc(f: PwlcFn, b: np.ndarray) -> tuple[float, int]:
    """Value and winning-vector index at b; ties go to the lowest index."""
    dots = f.matrix @ b
    idx = int(np.argmax(dots))
    return float(dots[idx]), idx


def eval_pwlc_batch(f: PwlcFn, beliefs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    dots = np.atleast_2d(beliefs) @ f.matrix.T
    idxs = dots.argmax(axis=1)
    return dots[np.arange(dots.shape[0]), idxs], idxs


def _as_matrix(others) -> np.ndarray:
    if isinstance(others, PwlcFn):
        return others.matrix
    if isinstance(others, np.ndarray):
        return others if others.ndim == 2 else np.atleast_2d(others)
    rows = [o.coeffs if isinstance(o, AlphaVector) else np.asarray(o, float) for o in others]
    if not rows:
        return np.empty((0, 0))
    return np.vstack(rows)


def dominates_lp(
    alpha, others, tol: float = DOMINATION_TOL
) -> tuple[bool, np.ndarray | None, float]:
    """Usefulness test for a vector against a competitor set.

    Solves: maximize d subject to (alpha - alpha')·b >= d for every
    competitor alpha', b on the belief simplex. Returns (useful, witness
    belief, margin d). `useful` means d > tol. With no competitors the vector
    is trivially useful; the witness is the extreme of its largest
    coefficient and the margin is +inf.
    """
    alpha = np.asarray(alpha, dtype=float).ravel()
    mat = _as_matrix(others)
    n = alpha.shape[0]
    if mat.shape[0] == 0:
        witness = np.zeros(n)
        witness[int(np.argmax(alpha))] = 1.0
        return True, witness, np.inf

    # variables: (b_1..b_n, d) ; maximize d
    c = np.zeros(n + 1)
    c[-1] = -1.0
    a_ub = np.hstack([mat - alpha[None, :], np.ones((mat.shape[0], 1))])
    a_eq = np.ones((1, n + 1))
    a_eq[0, -1] = 0.0
    res = linprog(
        c,
        A_ub=a_ub,
        b_ub=np.zeros(mat.shape[0]),
        A_eq=a_eq,
        b_eq=np.ones(1),
        bounds=[(0.0, 1.0)] * n + [(None, None)],
        method="highs-ds",
    )
    if not res.success:
        raise LpFailureError(
            f"domination LP failed (status {res.status}: {res.message}); "
            "retry with a small perturbation of the vector set"
        )
    witness = np.clip(res.x[:n], 0.0, None)
    witness /= witness.sum()
    margin = float(res.x[n])
    return margin > tol, witness, margin


def _dedup_indices(mat: np.ndarray, tol: float = DUPLICATE_TOL) -> list[int]:
    kept: list[int] = []
    for i in range(mat.shape[0]):
        row = mat[i]
        if not any(np.abs(mat[j] - row).max() <= tol for j in kept):
            kept.append(i)
    return kept


def _pointwise_filter(mat: np.ndarray, idxs: list[int]) -> list[int]:
    """Drop rows pointwise-dominated by another surviving row. Assumes
    duplicates were already collapsed, so mutual domination cannot occur."""
    survivors = []
    sub = mat[idxs]
    for pos, i in enumerate(idxs):
        ge = (sub >= sub[pos]).all(axis=1)
        ge[pos] = False
        gt = (sub > sub[pos]).any(axis=1)
        if not (ge & gt).any():
            survivors.append(i)
    return survivors


def prune(f: PwlcFn, tol: float = DOMINATION_TOL) -> PwlcFn:
    """Remove duplicates, pointwise-dominated, and LP-redundant vectors.

    The LP stage is the classic keep-best-at-witness loop: a candidate that
    wins somewhere pulls in whichever candidate is best at that witness, so
    the kept set is exactly the useful set (up to the tolerance). Evaluation
    is unchanged everywhere, and original order/tags are preserved.
    """
    mat = f.matrix
    candidates = _pointwise_filter(mat, _dedup_indices(mat))
    if len(candidates) <= 1:
        return PwlcFn([f.vectors[i] for i in candidates]) if candidates else f

    pending = list(candidates)
    kept: list[int] = []
    while pending:
        i = pending[0]
        if not kept:
            useful, witness = True, None
        else:
            useful, witness, _ = dominates_lp(mat[i], mat[kept], tol)
        if not useful:
            pending.pop(0)
            continue
        if witness is None:
            best = i
        else:
            vals = mat[pending] @ witness
            best = pending[int(np.argmax(vals))]
        kept.append(best)
        pending.remove(best)
    kept.sort()
    return PwlcFn([f.vectors[i] for i in kept])


def pwlc_sup_diff(f: PwlcFn, g: PwlcFn) -> float:
    """Exact sup over beliefs of f(b) - g(b), via one domination LP per vector
    of f (the inner minimum over g's vectors is what the LP maximizes)."""
    gm = g.matrix
    best = -np.inf
    for row in f.matrix:
        _, _, margin = dominates_lp(row, gm, tol=np.inf)
        best = max(best, margin)
    return best


def pwlc_norm(f: PwlcFn, g: PwlcFn) -> float:
    """Sup-norm distance between two PWLC functions (0-clipped against LP
    jitter on identical inputs)."""
    return max(pwlc_sup_diff(f, g), pwlc_sup_diff(g, f), 0.0)


def accuracy_bounds(eps: float, gamma: float, k: int = 1) -> dict[str, float]:
    """Guarantee constants implied by a value-iteration stopping error eps:
    distance of the last/previous iterate from the fixed point, and the
    control loss of k-step lookahead and direct (reactive) execution."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError("discount must be in [0, 1)")
    if eps < 0 or k < 1:
        raise ValueError("need eps >= 0 and k >= 1")
    shrink = 1.0 - gamma
    return {
        "value_i": gamma * eps / shrink,
        "value_iminus1": eps / shrink,
        "lookahead_k": 2.0 * eps * gamma**k / shrink,
        "direct": 2.0 * eps / shrink,
    }


def bound_gap_accuracy(eps: float, gamma: float) -> float:
    """Worst-case distance from the fixed point certified by an upper/lower
    bound pair whose gap is everywhere at most eps."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError("discount must be in [0, 1)")
    return eps * (2.0 - gamma) / (1.0 - gamma)


# ---------------------------------------------------------------------------
# serialization (CLI checkpoint format)
# ---------------------------------------------------------------------------

def save_alpha_set(f: PwlcFn, path) -> None:
    doc = [
        {
            "coeffs": v.coeffs.tolist(),
            "action": v.action,
            "witnesses": list(v.witnesses) if v.witnesses is not None else None,
        }
        for v in f.vectors
    ]
    Path(path).write_text(json.dumps(doc))


def load_alpha_set(path) -> PwlcFn:
    doc = json.loads(Path(path).read_text())
    vectors = [
        AlphaVector(
            np.asarray(item["coeffs"], dtype=float),
            action=item.get("action"),
            witnesses=tuple(item["witnesses"]) if item.get("witnesses") else None,
        )
        for item in doc
    ]
    return PwlcFn(vectors)
