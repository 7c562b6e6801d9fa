"""Certification toolkit for delay-independent stability of nonlinear
positive time-delay systems dx/dt = f(x(t)) + g(x(t - tau))."""

from .exprlang import (
    ExprAst,
    ExprDomainError,
    ExprError,
    ExprEvalError,
    ExprOverflowError,
    ExprSyntaxError,
    parse,
)
from .sysmodel import (
    Counterexample,
    Hypothesis,
    HypothesisReport,
    SystemSpec,
    SystemSpecError,
    Verdict,
    check_cooperative,
    check_nondecreasing,
    check_p1,
    check_p2,
    check_subhomogeneity,
)
from .boxopt import BoxSupResult, sup_box, sup_face
from .certify import (
    Certificate,
    CertificateNotFound,
    ConditionReport,
    PreconditionFailed,
    SolverConfig,
    check_condition,
    comparison_h,
    find_certificate,
    monotone_shortcut,
    scan_condition,
)
from .ddesim import (
    DominanceReport,
    HistorySpec,
    IntegrationError,
    SweepReport,
    Trajectory,
    check_dominance,
    delay_sweep,
    integrate,
    integrate_comparison,
)

__version__ = "0.1.0"

__all__ = [
    "ExprAst", "ExprError", "ExprSyntaxError", "ExprEvalError",
    "ExprDomainError", "ExprOverflowError", "parse",
    "SystemSpec", "SystemSpecError", "Hypothesis", "Verdict",
    "Counterexample", "HypothesisReport",
    "check_p1", "check_p2", "check_subhomogeneity",
    "check_cooperative", "check_nondecreasing",
    "BoxSupResult", "sup_box", "sup_face",
    "SolverConfig", "ConditionReport", "Certificate",
    "CertificateNotFound", "PreconditionFailed",
    "comparison_h", "check_condition", "scan_condition",
    "find_certificate", "monotone_shortcut",
    "HistorySpec", "Trajectory", "IntegrationError",
    "DominanceReport", "SweepReport",
    "integrate", "integrate_comparison", "check_dominance", "delay_sweep",
    "__version__",
]
