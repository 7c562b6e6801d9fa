"""Stability condition evaluation and certificate-vector search.

The central object is the comparison map

    h_i(w) = sup{ f_i(x) : 0 <= x <= w, x_i = w_i }
           + sup{ g_i(y) : 0 <= y <= w },

the constant-history value of the order-preserving comparison system
associated with ``dx/dt = f(x(t)) + g(x(t - tau))``.  Two facts drive the
toolkit:

* if for every w > 0 some component satisfies
  ``sup g_i over [0, w] < -sup f_i over the face`` (equivalently
  ``h_i(w) < 0``), and
* if some strictly positive v on the unit simplex has ``h(v) << 0``
  (every component negative),

then the origin attracts every trajectory for every delay.  The existence
of such a v follows from a covering argument; here it is replaced by a
constructive search over simplex lattices of increasing resolution.

Search strategy: points are screened with a coarse nested grid whose
supremum estimates never exceed the full-resolution ones, so no true
witness is screened out; surviving candidates are re-evaluated at full
resolution before a certificate is issued.  Failure is reported as
"not found", never as a disproof.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import boxopt, sampling, sysmodel
from .exprlang import ExprEvalError
from .sysmodel import SampleEvaluationError, SystemSpec

__all__ = [
    "SolverConfig",
    "DEFAULT_CONFIG",
    "ConditionReport",
    "Certificate",
    "SearchTrace",
    "CertificateNotFound",
    "PreconditionFailed",
    "comparison_field",
    "comparison_h",
    "check_condition",
    "scan_condition",
    "all_satisfied",
    "find_certificate",
    "monotone_shortcut",
]


@dataclass(frozen=True)
class SolverConfig:
    """Knobs for the box solver and the simplex search.

    `resolution`/`refine` control the authoritative supremum estimates.
    `screen_resolution` bounds the coarse pre-screen grid (the effective
    value is snapped down so its grid nests inside the full one).
    `max_points_per_depth` caps lattice enumeration per simplex depth;
    beyond the cap a seeded, deterministic sample of the lattice is used.
    `margin_eps` realizes strict inequalities as margins beyond this slack.
    """

    resolution: int = boxopt.DEFAULT_RESOLUTION
    refine: bool = True
    margin_eps: float = 1e-9
    screen_resolution: Optional[int] = None
    max_points_per_depth: int = 20000


DEFAULT_CONFIG = SolverConfig()


@dataclass(frozen=True)
class ConditionReport:
    """Outcome of the per-point stability condition at `w`.

    `per_index_details` lists ``(i, lhs, rhs_neg, margin)`` for every
    component (1-based): `lhs` is the supremum of g_i over [0, w],
    `rhs_neg` the supremum of f_i over the face pinned at i, and
    ``margin = -rhs_neg - lhs``.  The headline lhs/rhs_neg/margin are the
    witness component's when satisfied, otherwise the best component's.
    """

    w: tuple
    satisfied: bool
    witness_index: Optional[int]
    lhs: float
    rhs_neg: float
    margin: float
    per_index_details: tuple


@dataclass(frozen=True)
class SearchTrace:
    depth: int
    points_evaluated: int


@dataclass(frozen=True)
class Certificate:
    """Strictly positive simplex vector v with every h component negative
    beyond the margin slack."""

    v: tuple
    h_value: tuple
    margin: float
    search_trace: SearchTrace


class CertificateNotFound(Exception):
    """Search exhausted without a witness.  Carries the least-violating
    point seen; this signals insufficient depth or a failed hypothesis,
    never a disproof."""

    def __init__(self, best_v, best_h, search_trace: SearchTrace):
        self.best_v = (tuple(float(v) for v in best_v)
                       if best_v is not None else None)
        self.best_h = (tuple(float(v) for v in best_h)
                       if best_h is not None else None)
        self.search_trace = search_trace
        detail = ""
        if self.best_v is not None:
            detail = f"; best candidate {self.best_v} has h = {self.best_h}"
        super().__init__(
            "no certificate found up to depth "
            f"{search_trace.depth} ({search_trace.points_evaluated} points)"
            f"{detail}. This is inconclusive, not a disproof."
        )


class PreconditionFailed(Exception):
    """A required monotonicity hypothesis was falsified."""

    def __init__(self, reports):
        self.reports = tuple(reports)
        names = ", ".join(r.hypothesis.value for r in self.reports)
        super().__init__(f"monotonicity hypotheses violated: {names}")


# ---------------------------------------------------------------------------
# Comparison map
# ---------------------------------------------------------------------------

def comparison_field(sys: SystemSpec, w_now, w_delayed,
                     config: SolverConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Componentwise ``sup f_i over the face of [0, w_now] pinned at i``
    plus ``sup g_i over [0, w_delayed]``.

    This is the right-hand side of the comparison system evaluated on the
    pair (current state, delayed state); with both arguments equal it is
    the comparison map h."""
    w_now = np.asarray(w_now, dtype=float)
    w_delayed = np.asarray(w_delayed, dtype=float)
    out = np.empty(sys.n)
    for i in range(sys.n):
        face = boxopt.sup_face(sys.f[i], w_now, i + 1,
                               config.resolution, config.refine)
        box = boxopt.sup_box(sys.g[i], w_delayed,
                             config.resolution, config.refine)
        out[i] = face.value + box.value
    return out


def comparison_h(sys: SystemSpec, w,
                 config: SolverConfig = DEFAULT_CONFIG) -> np.ndarray:
    """The comparison map h at w (nonnegative, componentwise)."""
    return comparison_field(sys, w, w, config)


def check_condition(sys: SystemSpec, w,
                    config: SolverConfig = DEFAULT_CONFIG) -> ConditionReport:
    """Evaluate the per-point stability condition at a nonzero w >= 0."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size != sys.n:
        raise ValueError(f"w must have dimension {sys.n}")
    if (w < 0).any():
        raise ValueError("w must be componentwise nonnegative")
    if not (w > 0).any():
        raise ValueError("w must be nonzero")
    details = []
    for i in range(sys.n):
        lhs = boxopt.sup_box(sys.g[i], w, config.resolution, config.refine).value
        rhs_neg = boxopt.sup_face(sys.f[i], w, i + 1,
                                  config.resolution, config.refine).value
        details.append((i + 1, lhs, rhs_neg, -rhs_neg - lhs))
    witness = next(
        (i for i, _, _, margin in details if margin > config.margin_eps), None
    )
    headline = (details[witness - 1] if witness is not None
                else max(details, key=lambda item: item[3]))
    return ConditionReport(
        w=tuple(w),
        satisfied=witness is not None,
        witness_index=witness,
        lhs=headline[1],
        rhs_neg=headline[2],
        margin=headline[3],
        per_index_details=tuple(details),
    )


def scan_condition(sys: SystemSpec, region_bound: float, samples: int,
                   config: SolverConfig = DEFAULT_CONFIG) -> list:
    """Evaluate `check_condition` over a deterministic sample of
    [0, region_bound]^n minus the origin: nonzero box corners, samples on
    every boundary face (x_i = 0 and x_i = region_bound), then a Halton
    fill of the interior.  Returns the reports in sample order."""
    if region_bound <= 0:
        raise ValueError("region_bound must be > 0")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    blocks = [sampling.box_corners(sys.n, region_bound)]
    if sys.n > 1:
        per_face = max(1, samples // (4 * sys.n))
        for i in range(1, sys.n + 1):
            for pinned_value in (0.0, region_bound):
                blocks.append(sampling.face_sample(
                    sys.n, region_bound, i, pinned_value, per_face
                ))
    blocks.append(region_bound * sampling.halton(sys.n, samples))
    seen = set()
    reports = []
    for point in np.vstack(blocks):
        key = tuple(point)
        if key in seen or not (point > 0).any():
            continue
        seen.add(key)
        reports.append(check_condition(sys, point, config))
    return reports


def all_satisfied(reports: Sequence[ConditionReport]) -> bool:
    return all(r.satisfied for r in reports)


# ---------------------------------------------------------------------------
# Simplex lattices
# ---------------------------------------------------------------------------

def _lattice_compositions(n: int, m: int):
    """Positive integer n-part compositions of m, ascending lexicographic."""
    if n == 1:
        yield (m,)
        return
    for cuts in itertools.combinations(range(1, m), n - 1):
        prev = 0
        parts = []
        for c in cuts:
            parts.append(c - prev)
            prev = c
        parts.append(m - prev)
        yield tuple(parts)


def _sampled_compositions(n: int, m: int, count: int) -> np.ndarray:
    """Deterministic spread of `count` positive compositions of m: seeded
    uniform simplex directions rounded to the lattice by largest
    remainder."""
    rng = np.random.default_rng(951207 + 7919 * n + m)
    u = rng.random((count, n))
    direction = -np.log(u)
    direction /= direction.sum(axis=1, keepdims=True)
    free = m - n
    scaled = direction * free
    base = np.floor(scaled).astype(np.int64)
    remainder = scaled - base
    deficit = free - base.sum(axis=1)
    rank = np.argsort(np.argsort(-remainder, axis=1, kind="stable"),
                      axis=1, kind="stable")
    base += rank < deficit[:, None]
    return base + 1


def _depth_points(n: int, depth: int, cap: int) -> np.ndarray:
    """Interior lattice points of the simplex at resolution 3**depth, as an
    array of rows summing to 1.  Falls back to a deterministic sample when
    the full lattice exceeds `cap` points."""
    m = 3 ** depth
    if m < n:
        return np.empty((0, n))
    total = math.comb(m - 1, n - 1)
    if total <= cap:
        parts = np.array(list(_lattice_compositions(n, m)), dtype=np.int64)
    else:
        parts = _sampled_compositions(n, m, cap)
    return parts.astype(float) / float(m)


# ---------------------------------------------------------------------------
# Screened search
# ---------------------------------------------------------------------------

_NESTED_STEPS = (17, 9, 5, 3, 2)


def _effective_screen_resolution(config: SolverConfig, n: int) -> int:
    """Largest screen resolution whose grid nests inside the full grid and
    whose box grid stays affordable per point."""
    budget = 8192
    cap = config.screen_resolution or max(_NESTED_STEPS)
    for s in _NESTED_STEPS:
        if s > cap or s ** n > budget:
            continue
        if (config.resolution - 1) % (s - 1) == 0:
            return s
    return 2


def _unit_grids(n: int, r: int):
    """Unit box grid (r**n, n) and per-component unit face grids with the
    pinned coordinate fixed at 1."""
    axis = np.linspace(0.0, 1.0, r)
    box = np.column_stack([
        grid.reshape(-1) for grid in np.meshgrid(*([axis] * n), indexing="ij")
    ])
    faces = []
    for i in range(n):
        if n == 1:
            faces.append(np.array([[1.0]]))
            continue
        sub = np.meshgrid(*([axis] * (n - 1)), indexing="ij")
        flat = [grid.reshape(-1) for grid in sub]
        cols = flat[:i] + [np.ones_like(flat[0])] + flat[i:]
        faces.append(np.column_stack(cols))
    return box, faces


def _grid_max(ast, scales: np.ndarray, unit: np.ndarray) -> np.ndarray:
    """max over the grid `scales[b] * unit` of the field, per row b."""
    b, n = scales.shape
    k = unit.shape[0]
    points = (scales[:, None, :] * unit[None, :, :]).reshape(b * k, n)
    values = ast.eval_many(points)
    bad = ~np.isfinite(values)
    if bad.any():
        first = int(np.flatnonzero(bad)[0])
        try:
            ast.eval(points[first])
        except ExprEvalError as err:
            raise SampleEvaluationError(points[first], err) from err
        raise SampleEvaluationError(points[first], ExprEvalError("non-finite value"))
    return values.reshape(b, k).max(axis=1)


def _screen_h(sys: SystemSpec, points: np.ndarray, r: int) -> np.ndarray:
    """Coarse grid estimate of h at each simplex point; a lower bound of
    the full-resolution estimate because the grids nest."""
    box_unit, face_units = _unit_grids(sys.n, r)
    chunk = max(1, 2_000_000 // box_unit.shape[0])
    rows = []
    for start in range(0, points.shape[0], chunk):
        batch = points[start:start + chunk]
        h = np.empty((batch.shape[0], sys.n))
        for i in range(sys.n):
            h[:, i] = (_grid_max(sys.f[i], batch, face_units[i])
                       + _grid_max(sys.g[i], batch, box_unit))
        rows.append(h)
    return np.vstack(rows)


def _search_simplex(sys: SystemSpec, grid_depth: int, config: SolverConfig,
                    h_at) -> Certificate:
    """Depth-by-depth lattice search shared by the screened and the direct
    (monotone shortcut) paths.  `h_at(points) -> (estimates, authoritative)`
    returns screening estimates for a batch plus a callable giving the
    authoritative h at a single point."""
    if grid_depth < 1:
        raise ValueError("grid_depth must be >= 1")
    eps = config.margin_eps
    evaluated = 0
    best_v = None
    best_screen_margin = -math.inf
    for depth in range(1, grid_depth + 1):
        points = _depth_points(sys.n, depth, config.max_points_per_depth)
        if points.shape[0] == 0:
            continue
        estimates, authoritative = h_at(points)
        evaluated += points.shape[0]
        margins = -estimates.max(axis=1)
        top = int(np.argmax(margins))
        if margins[top] > best_screen_margin:
            best_screen_margin = float(margins[top])
            best_v = points[top].copy()
        candidates = np.flatnonzero((estimates < -eps).all(axis=1))
        if candidates.size == 0:
            continue
        # Verify candidates in descending screen-margin order; the screen
        # margin bounds the authoritative margin from above, so the scan can
        # stop once no remaining candidate can beat the best verified one.
        order = candidates[np.argsort(-margins[candidates], kind="stable")]
        best = None  # (margin, enumeration index, v, h)
        for idx in order:
            screen_margin = float(margins[idx])
            if best is not None and (best[0], -best[1]) >= (screen_margin, -idx):
                break
            h_full = authoritative(points[idx])
            evaluated_margin = float(-np.max(h_full))
            if not (h_full < -eps).all():
                continue
            key = (evaluated_margin, -int(idx))
            if best is None or key > (best[0], -best[1]):
                best = (evaluated_margin, int(idx), points[idx], h_full)
        if best is not None:
            margin, _, v, h_full = best
            return Certificate(
                v=tuple(float(x) for x in v),
                h_value=tuple(float(x) for x in h_full),
                margin=margin,
                search_trace=SearchTrace(depth=depth, points_evaluated=evaluated),
            )
    trace = SearchTrace(depth=grid_depth, points_evaluated=evaluated)
    if best_v is None:
        raise CertificateNotFound(None, None, trace)
    _, authoritative = h_at(best_v.reshape(1, -1))
    raise CertificateNotFound(best_v, authoritative(best_v), trace)


def find_certificate(sys: SystemSpec, grid_depth: int,
                     config: SolverConfig = DEFAULT_CONFIG) -> Certificate:
    """Search simplex lattices of resolution 3, 9, ..., 3**grid_depth
    (interior points only) for v with every component of h(v) below
    -margin_eps.  Returns the maximal-margin witness at the first depth
    containing one; raises `CertificateNotFound` otherwise."""
    r = _effective_screen_resolution(config, sys.n)

    def h_at(points):
        estimates = _screen_h(sys, points, r)

        def authoritative(v):
            return comparison_h(sys, v, config)

        return estimates, authoritative

    return _search_simplex(sys, grid_depth, config, h_at)


def monotone_shortcut(sys: SystemSpec, region_bound: float, samples: int,
                      grid_depth: int = 6,
                      config: SolverConfig = DEFAULT_CONFIG) -> Certificate:
    """Certificate search for cooperative f and nondecreasing g, where the
    suprema are attained at w itself and h reduces to (f + g)(w).

    The monotonicity hypotheses are falsification-checked first on
    [0, region_bound]^n; any violation raises `PreconditionFailed`."""
    failing = [
        report for report in (
            sysmodel.check_cooperative(sys, region_bound, samples),
            sysmodel.check_nondecreasing(sys, region_bound, samples),
        ) if report.violated
    ]
    if failing:
        raise PreconditionFailed(failing)

    def h_at(points):
        values = np.empty((points.shape[0], sys.n))
        for i in range(sys.n):
            values[:, i] = (sys.f[i].eval_many(points)
                            + sys.g[i].eval_many(points))

        def authoritative(v):
            return sys.eval_f(v) + sys.eval_g(v)

        return values, authoritative

    return _search_simplex(sys, grid_depth, config, h_at)
