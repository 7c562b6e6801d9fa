"""System representation and sampling-based checks of structural hypotheses.

A `SystemSpec` holds the two vector fields of a delayed system

    dx/dt = f(x(t)) + g(x(t - tau))

on the nonnegative orthant, with an equilibrium at the origin.  The checkers
in this module are falsifiers, not provers: each condition is stated over
the whole orthant, which cannot be verified exhaustively, so a deterministic
sample of a bounded region is searched for counterexamples.  The verdict
``no-violation-found`` is deliberately weaker than "holds".

Checks:

* positivity of the delayed field ``g`` on the sampled box;
* positivity of each ``f_i`` on the face where ``x_i = 0``;
* subhomogeneity of declared degree alpha, componentwise on both fields:
  ``field(lam * x) <= lam**alpha * field(x)`` for ``lam >= 1``;
* cooperativity of ``f`` (nonnegative off-diagonal partials) and
  monotonicity of ``g`` (all partials nonnegative), both estimated by
  central finite differences.

Every reported counterexample re-evaluates to a violation; `recheck`
recomputes the violation magnitude from the stored data.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import sampling
from .exprlang import ExprAst, ExprEvalError, parse

__all__ = [
    "SystemSpec",
    "SystemSpecError",
    "SampleEvaluationError",
    "Hypothesis",
    "Verdict",
    "Counterexample",
    "HypothesisReport",
    "check_p1",
    "check_p2",
    "check_subhomogeneity",
    "check_cooperative",
    "check_nondecreasing",
    "scan_alpha",
    "recheck",
]

EQUILIBRIUM_TOL = 1e-12
EXACT_TOL = 1e-9      # slack for inequalities on directly evaluated values
DERIVATIVE_TOL = 1e-6  # slack for finite-difference sign checks


class SystemSpecError(ValueError):
    """Invalid system definition (bad dimension, no equilibrium at 0, ...)."""


class SampleEvaluationError(ExprEvalError):
    """Expression evaluation failed at a sample point."""

    def __init__(self, point, detail: Exception):
        self.point = tuple(float(v) for v in point)
        super().__init__(f"evaluation failed at {self.point}: {detail}")


@dataclass(frozen=True)
class SystemSpec:
    """Dimension, the two vector fields, and the declared subhomogeneity
    degree.  Immutable; all checks and solvers share instances freely."""

    n: int
    f: tuple
    g: tuple
    alpha: float

    def __post_init__(self):
        if self.n < 1:
            raise SystemSpecError("dimension must be >= 1")
        if self.alpha <= 0:
            raise SystemSpecError("alpha must be > 0")
        if len(self.f) != self.n or len(self.g) != self.n:
            raise SystemSpecError("f and g must each have n components")
        for ast in (*self.f, *self.g):
            if ast.n_vars != self.n:
                raise SystemSpecError(
                    "every component must be an expression in n variables"
                )
        origin = (0.0,) * self.n
        for i in range(self.n):
            residual = self.f[i].eval(origin) + self.g[i].eval(origin)
            if abs(residual) > EQUILIBRIUM_TOL:
                raise SystemSpecError(
                    f"origin is not an equilibrium: (f+g)_{i + 1}(0) = {residual!r}"
                )

    @classmethod
    def from_strings(cls, f: Sequence[str], g: Sequence[str],
                     alpha: float = 1.0) -> "SystemSpec":
        n = len(f)
        if len(g) != n:
            raise SystemSpecError("f and g must each have n components")
        return cls(
            n=n,
            f=tuple(parse(src, n) for src in f),
            g=tuple(parse(src, n) for src in g),
            alpha=float(alpha),
        )

    def eval_f(self, x) -> np.ndarray:
        return np.array([ast.eval(x) for ast in self.f])

    def eval_g(self, x) -> np.ndarray:
        return np.array([ast.eval(x) for ast in self.g])


class Hypothesis(enum.Enum):
    P1 = "P1"
    P2 = "P2"
    SUBHOMOGENEITY = "Subhomogeneity"
    COOPERATIVE = "Cooperative"
    NONDECREASING = "Nondecreasing"


class Verdict(enum.Enum):
    NO_VIOLATION_FOUND = "no-violation-found"
    VIOLATED = "violated"


@dataclass(frozen=True)
class Counterexample:
    """Data reproducing a violation.  `component` and `wrt` are 1-based.

    For positivity checks, `lhs` is the offending field value and `rhs` 0.
    For subhomogeneity, `lhs` is ``field_i(lam * x)`` and `rhs` is
    ``lam**alpha * field_i(x)``.  For derivative checks, `lhs` is the
    finite-difference estimate of the partial with respect to `wrt` and
    `rhs` is 0.  `excess` is how far the inequality fails, always positive.
    """

    point: tuple
    field: str  # "f" or "g"
    component: int
    lhs: float
    rhs: float
    excess: float
    lam: Optional[float] = None
    alpha: Optional[float] = None
    wrt: Optional[int] = None


@dataclass(frozen=True)
class HypothesisReport:
    hypothesis: Hypothesis
    verdict: Verdict
    counterexample: Optional[Counterexample]
    samples_used: int

    @property
    def violated(self) -> bool:
        return self.verdict is Verdict.VIOLATED


def _checked_values(ast: ExprAst, points: np.ndarray) -> np.ndarray:
    """Batched evaluation that converts the first non-finite result into a
    precise scalar-mode error carrying the offending point."""
    values = ast.eval_many(points)
    bad = ~np.isfinite(values)
    if bad.any():
        first = int(np.flatnonzero(bad)[0])
        try:
            ast.eval(points[first])
        except ExprEvalError as err:
            raise SampleEvaluationError(points[first], err) from err
        # Batched and scalar paths may disagree by rounding at the edge of
        # the double range; surface the batch result honestly.
        raise SampleEvaluationError(
            points[first], ExprEvalError("non-finite value")
        )
    return values


def check_p1(sys: SystemSpec, region_bound: float, samples: int) -> HypothesisReport:
    """Search [0, region_bound]^n (corners first, then a Halton fill) for a
    point where some g_i is negative beyond tolerance."""
    _require_region(region_bound, samples)
    points = sampling.box_sample(sys.n, region_bound, samples)
    values = np.column_stack([_checked_values(ast, points) for ast in sys.g])
    return _first_negative(Hypothesis.P1, "g", points, values, EXACT_TOL)


def check_p2(sys: SystemSpec, region_bound: float, samples: int) -> HypothesisReport:
    """For each i, search the face {x_i = 0} of the sampled box for a point
    where f_i is negative beyond tolerance."""
    _require_region(region_bound, samples)
    used = 0
    for i in range(1, sys.n + 1):
        points = sampling.face_sample(sys.n, region_bound, i, 0.0, samples)
        values = _checked_values(sys.f[i - 1], points)
        hit = np.flatnonzero(values < -EXACT_TOL)
        if hit.size:
            row = int(hit[0])
            value = float(values[row])
            cex = Counterexample(
                point=tuple(float(v) for v in points[row]), field="f", component=i,
                lhs=value, rhs=0.0, excess=-value,
            )
            return HypothesisReport(
                Hypothesis.P2, Verdict.VIOLATED, cex, used + row + 1
            )
        used += points.shape[0]
    return HypothesisReport(Hypothesis.P2, Verdict.NO_VIOLATION_FOUND, None, used)


def check_subhomogeneity(sys: SystemSpec, alpha: float, region_bound: float,
                         samples: int,
                         lambdas: Sequence[float] = (1.0, 1.5, 2.0, 4.0),
                         ) -> HypothesisReport:
    """Check ``field(lam x) <= lam**alpha field(x)`` componentwise for both
    fields over the sample set, reporting the first violation in
    (point, lambda, f-before-g, component) order."""
    _require_region(region_bound, samples)
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    lambdas = [float(l) for l in lambdas]
    if any(l < 1.0 for l in lambdas):
        raise ValueError("every lambda must be >= 1")
    points = sampling.box_sample(sys.n, region_bound, samples)
    components = [("f", i, ast) for i, ast in enumerate(sys.f)] + \
                 [("g", i, ast) for i, ast in enumerate(sys.g)]
    base = {id(ast): _checked_values(ast, points) for _, _, ast in components}
    # excess[row, k] for cells k ordered (lambda, f-components, g-components);
    # the first violating cell in that order, row-major, is reported.
    cells = []
    for lam in lambdas:
        scaled = lam * points
        scale = lam ** alpha
        for name, i, ast in components:
            lhs = _checked_values(ast, scaled)
            cells.append((lam, name, i, lhs, scale * base[id(ast)]))
    excess = np.column_stack([lhs - rhs for _, _, _, lhs, rhs in cells])
    mask = excess > EXACT_TOL
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size:
        row = int(rows[0])
        k = int(np.flatnonzero(mask[row])[0])
        lam, name, i, lhs, rhs = cells[k]
        cex = Counterexample(
            point=tuple(float(v) for v in points[row]), field=name, component=i + 1,
            lhs=float(lhs[row]), rhs=float(rhs[row]),
            excess=float(excess[row, k]), lam=lam, alpha=alpha,
        )
        return HypothesisReport(
            Hypothesis.SUBHOMOGENEITY, Verdict.VIOLATED, cex, row + 1
        )
    return HypothesisReport(
        Hypothesis.SUBHOMOGENEITY, Verdict.NO_VIOLATION_FOUND, None,
        points.shape[0],
    )


def _fd_partial(ast: ExprAst, points: np.ndarray, j: int, step: float) -> np.ndarray:
    up = points.copy()
    up[:, j] += step
    down = points.copy()
    down[:, j] -= step
    return (_checked_values(ast, up) - _checked_values(ast, down)) / (2.0 * step)


def _derivative_report(hypothesis: Hypothesis, field_name: str, asts,
                       points: np.ndarray, pairs, step: float) -> HypothesisReport:
    estimates = {
        (i, j): _fd_partial(asts[i - 1], points, j - 1, step) for i, j in pairs
    }
    for row in range(points.shape[0]):
        for i, j in pairs:
            est = float(estimates[(i, j)][row])
            if est < -DERIVATIVE_TOL:
                cex = Counterexample(
                    point=tuple(float(v) for v in points[row]), field=field_name, component=i,
                    lhs=est, rhs=0.0, excess=-est, wrt=j,
                )
                return HypothesisReport(hypothesis, Verdict.VIOLATED, cex, row + 1)
    return HypothesisReport(
        hypothesis, Verdict.NO_VIOLATION_FOUND, None, points.shape[0]
    )


def check_cooperative(sys: SystemSpec, region_bound: float, samples: int,
                      fd_step: float = 1e-5) -> HypothesisReport:
    """Estimate off-diagonal partials of f by central differences and flag
    any negative estimate beyond tolerance."""
    _require_region(region_bound, samples)
    if fd_step <= 0:
        raise ValueError("fd_step must be > 0")
    points = sampling.box_sample(sys.n, region_bound, samples)
    pairs = [(i, j) for i in range(1, sys.n + 1)
             for j in range(1, sys.n + 1) if i != j]
    return _derivative_report(
        Hypothesis.COOPERATIVE, "f", sys.f, points, pairs, fd_step
    )


def check_nondecreasing(sys: SystemSpec, region_bound: float, samples: int,
                        fd_step: float = 1e-5) -> HypothesisReport:
    """Estimate all partials of g by central differences and flag any
    negative estimate beyond tolerance."""
    _require_region(region_bound, samples)
    if fd_step <= 0:
        raise ValueError("fd_step must be > 0")
    points = sampling.box_sample(sys.n, region_bound, samples)
    pairs = [(i, j) for i in range(1, sys.n + 1) for j in range(1, sys.n + 1)]
    return _derivative_report(
        Hypothesis.NONDECREASING, "g", sys.g, points, pairs, fd_step
    )


def scan_alpha(sys: SystemSpec, alphas: Sequence[float], region_bound: float,
               samples: int,
               lambdas: Sequence[float] = (1.0, 1.5, 2.0, 4.0),
               ) -> Optional[float]:
    """Convenience scan: the largest candidate degree that passes the
    subhomogeneity check, or None if all fail."""
    best = None
    for alpha in sorted(alphas):
        report = check_subhomogeneity(sys, alpha, region_bound, samples, lambdas)
        if not report.violated:
            best = alpha
    return best


def recheck(sys: SystemSpec, report: HypothesisReport) -> float:
    """Recompute the violation magnitude of a report's counterexample.

    Returns the excess (positive means the violation reproduces); raises if
    the report carries no counterexample.
    """
    cex = report.counterexample
    if cex is None:
        raise ValueError("report has no counterexample")
    asts = sys.f if cex.field == "f" else sys.g
    ast = asts[cex.component - 1]
    x = np.asarray(cex.point)
    hyp = report.hypothesis
    if hyp in (Hypothesis.P1, Hypothesis.P2):
        return -ast.eval(x)
    if hyp is Hypothesis.SUBHOMOGENEITY:
        return ast.eval(cex.lam * x) - cex.lam ** cex.alpha * ast.eval(x)
    # derivative checks
    step = 1e-5
    up = x.copy()
    up[cex.wrt - 1] += step
    down = x.copy()
    down[cex.wrt - 1] -= step
    return -(ast.eval(up) - ast.eval(down)) / (2.0 * step)


def _require_region(region_bound: float, samples: int) -> None:
    if region_bound <= 0:
        raise ValueError("region_bound must be > 0")
    if samples < 1:
        raise ValueError("samples must be >= 1")


def _first_negative(hypothesis: Hypothesis, field_name: str, points: np.ndarray,
                    values: np.ndarray, tol: float) -> HypothesisReport:
    mask = values < -tol
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size:
        row = int(rows[0])
        comp = int(np.flatnonzero(mask[row])[0])
        value = float(values[row, comp])
        cex = Counterexample(
            point=tuple(float(v) for v in points[row]), field=field_name, component=comp + 1,
            lhs=value, rhs=0.0, excess=-value,
        )
        return HypothesisReport(hypothesis, Verdict.VIOLATED, cex, row + 1)
    return HypothesisReport(
        hypothesis, Verdict.NO_VIOLATION_FOUND, None, points.shape[0]
    )
