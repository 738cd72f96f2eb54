"""Preconditioned SGD with preconditioners fitted online on Lie groups.

The preconditioner P = Q^T Q is fitted to Hessian-vector product pairs
(v, h) by minimizing E[h^T P h + v^T P^{-1} v], whose minimizer is the
inverse of the absolute Hessian.  Q lives on a matrix group (diagonal,
X-matrix, low-rank plus diagonal, or dense) and is updated multiplicatively,
so it stays invertible without any damping.
"""

from .criterion import (
    FittingSample,
    closed_form_optimum,
    closed_form_sample_estimate,
    exact_fitting_loss,
    fitting_loss,
)
from .curvature import CurvaturePair, Objective, exact_pair, fd_pair, sample_probe
from .errors import (
    DivisionHazardError,
    InvalidDimensionError,
    InvalidParameterError,
    NonFiniteEvaluationError,
    OracleCapError,
    PsgdError,
    RejectedUpdateError,
    SingularityError,
    UnsupportedOperationError,
)
from .optimizer import CLIP_PROFILES, PsgdConfig, PsgdState, RunRecord, StepReport, run, step
from .precond import (
    DensePreconditioner,
    DiagPreconditioner,
    LraPreconditioner,
    Preconditioner,
    XMatPreconditioner,
    densify,
    make_preconditioner,
)

__version__ = "0.1.0"
