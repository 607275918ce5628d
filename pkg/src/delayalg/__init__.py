"""delayalg: symbolic-numeric tools for time-delay algebraic equations.

Decides when delayed algebraic constraints can be resolved through a
bicausal change of coordinates, constructs the certifying coordinate maps,
reduces delayed differential-algebraic systems to index-0 form, and solves
the resulting neutral delayed ODEs by the method of steps.
"""

from .errors import (
    BudgetExhausted,
    CertificateError,
    ConditionCViolation,
    CoverageError,
    DelayAlgError,
    DimensionError,
    DivisionError,
    DomainError,
    EvalError,
    ExprSyntaxError,
    IntegrationFailure,
    SingularE0,
    SolveError,
    StepFailure,
    UnknownSymbolError,
)
from .exprs import (
    Context,
    DelayedVar,
    Expr,
    SymbolicConstant,
    TransAtom,
    causality_scan,
    eval_num,
    is_zero,
    partial,
    shift,
    substitute,
    to_text,
    transplant,
    zero_check,
)
from .parsing import parse_expr, parse_skew
from .skew import (
    Inconclusive,
    NotUnimodular,
    RightInverseFailure,
    SkewMatrix,
    SkewPoly,
    UnimodularCertificate,
    left_divide,
    rank,
    right_inverse,
    right_kernel,
    row_compress,
    spoly_mul,
    try_inverse,
)

__version__ = "0.1.0"

from .bicausal import (
    AnalysisResult,
    BicausalMap,
    CoordStep,
    CoordinateEngine,
    ImplicitSolution,
    PairChoice,
    Witness,
    build_bicausal,
    check_condition_C,
    degree_reduce,
    implicit_solve,
    principal_coordinate,
    select_pair,
)
from .ddae import (
    DDAESystem,
    NeutralODE,
    ReductionResult,
    ReductionStep,
    classify,
    constraint_minimize,
    explicit_form,
    reduce_index,
)
from .forms import (
    OneForm,
    PfaffianProblem,
    antiderivative,
    d_exactness,
    differential,
    integrate_pfaffian,
)
from .problems import ProblemFile, emit_system_file, load_problem, parse_problem
from .report import Report
from .solver import History, MappedTrajectory, Trajectory, map_back, residual, solve_steps
