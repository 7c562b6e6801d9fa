"""Suprema of scalar fields over order intervals [0, w] and their faces.

The solver is a deterministic dense grid (default 33 points per coordinate)
followed by coordinate-descent refinement from the best grid point.  Ties
between grid points break toward the lexicographically smallest grid index,
so results never depend on evaluation order or scheduling.

The returned value is the field evaluated at the returned point, hence a
certified *lower* bound on the true supremum.  Callers that feed strict
inequalities (the stability condition, certificate margins) must treat it
as such; on monotone or concave fields at desk scale the bound is exact to
refinement tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exprlang import ExprAst, ExprEvalError
from .sysmodel import SampleEvaluationError

__all__ = ["BoxSupResult", "sup_box", "sup_face"]

DEFAULT_RESOLUTION = 33
REFINE_REL_TOL = 1e-8


@dataclass(frozen=True)
class BoxSupResult:
    """Supremum estimate: attained value, the maximizer, and solver
    bookkeeping (`evaluations` counts field evaluations)."""

    value: float
    argmax: tuple
    grid_resolution: int
    refined: bool
    evaluations: int


def sup_box(field: ExprAst, w, resolution: int = DEFAULT_RESOLUTION,
            refine: bool = True) -> BoxSupResult:
    """Supremum of `field` over the order interval [0, w]."""
    return _solve(field, w, None, resolution, refine)


def sup_face(field: ExprAst, w, i: int, resolution: int = DEFAULT_RESOLUTION,
             refine: bool = True) -> BoxSupResult:
    """Supremum of `field` over the face {0 <= x <= w, x_i = w_i}
    (`i` is 1-based)."""
    w = np.asarray(w, dtype=float)
    if not 1 <= i <= w.size:
        raise ValueError(f"face index {i} out of range 1..{w.size}")
    return _solve(field, w, i - 1, resolution, refine)


def _axes(w: np.ndarray, pinned: int | None, resolution: int):
    """Per-coordinate grid values; degenerate and pinned coordinates
    collapse to a single value."""
    axes = []
    for j, wj in enumerate(w):
        if pinned is not None and j == pinned:
            axes.append(np.array([wj]))
        elif wj == 0.0:
            axes.append(np.array([0.0]))
        else:
            axes.append(np.linspace(0.0, wj, resolution))
    return axes


def _solve(field: ExprAst, w, pinned: int | None, resolution: int,
           refine: bool) -> BoxSupResult:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size != field.n_vars:
        raise ValueError(
            f"w has dimension {w.size}, field expects {field.n_vars}"
        )
    if (w < 0).any():
        raise ValueError("w must be componentwise nonnegative")
    if resolution < 2:
        raise ValueError("resolution must be >= 2")

    axes = _axes(w, pinned, resolution)
    grids = np.meshgrid(*axes, indexing="ij")
    points = np.column_stack([grid.reshape(-1) for grid in grids])
    values = field.eval_many(points)
    bad = ~np.isfinite(values)
    if bad.any():
        first = int(np.flatnonzero(bad)[0])
        try:
            field.eval(points[first])
        except ExprEvalError as err:
            raise SampleEvaluationError(points[first], err) from err
        raise SampleEvaluationError(points[first], ExprEvalError("non-finite value"))
    evaluations = points.shape[0]

    # argmax with lexicographic tie-break: flat C-order index == lexicographic
    # grid index, and np.argmax returns the first maximum.
    best_flat = int(np.argmax(values))
    best = points[best_flat].copy()
    # Re-evaluate in scalar mode so that `value` is exactly the field at
    # `argmax` (batched transcendentals may differ in the last ulp).
    best_value = field.eval(best)
    evaluations += 1

    if refine:
        best, best_value, extra = _coordinate_descent(
            field, w, pinned, best, best_value
        )
        evaluations += extra

    return BoxSupResult(
        value=best_value,
        argmax=tuple(best),
        grid_resolution=resolution,
        refined=refine,
        evaluations=evaluations,
    )


def _coordinate_descent(field: ExprAst, w: np.ndarray, pinned: int | None,
                        x: np.ndarray, value: float):
    """Shrinking-step local polish inside the constraint set.  Only strict
    improvements are accepted, so the grid argmax is never abandoned for a
    tie and the result stays deterministic."""
    free = [j for j, wj in enumerate(w)
            if wj > 0.0 and (pinned is None or j != pinned)]
    evaluations = 0
    if not free:
        return x, value, evaluations
    stop = REFINE_REL_TOL * max(1.0, float(np.max(np.abs(w))))
    step = max(float(w[j]) for j in free) / 4.0
    x = x.copy()
    while step >= stop:
        improved = False
        for j in free:
            for direction in (1.0, -1.0):
                trial = x.copy()
                trial[j] = min(max(trial[j] + direction * step, 0.0), w[j])
                if trial[j] == x[j]:
                    continue
                trial_value = field.eval(trial)
                evaluations += 1
                if trial_value > value:
                    x, value = trial, trial_value
                    improved = True
        if not improved:
            step /= 2.0
    return x, value, evaluations
