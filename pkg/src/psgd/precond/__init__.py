"""Preconditioners P = Q^T Q on the diagonal, X-matrix, low-rank and dense groups."""

from ..errors import InvalidParameterError
from .base import Preconditioner
from .dense import ORACLE_CAP, DensePreconditioner, dense_update, densify
from .diag import (
    DiagPreconditioner,
    DiagState,
    diag_accumulate,
    diag_closed_form,
    diag_update_elementwise,
    diag_update_scalar_step,
)
from .lra import (
    LraPreconditioner,
    LraState,
    lra_apply_Q,
    lra_apply_Qt,
    lra_precond_grad,
    lra_solve_Q,
    lra_solve_Qt,
    lra_to_dense,
    lra_update,
    lra_update_flops,
)
from .xmat import (
    XMatPreconditioner,
    XMatState,
    xmat_apply,
    xmat_apply_transpose,
    xmat_compose,
    xmat_inverse,
    xmat_solve_transpose,
    xmat_to_dense,
    xmat_update,
)


def make_preconditioner(kind: str, n: int, *, rank: int = 10, precision="full", rng=None,
                        scale: float = 1.0, auto_scale: bool = False, diag_method: str = "scalar"):
    """Build an identity-initialized preconditioner of the named group."""
    if kind == "diag":
        return DiagPreconditioner(n, method=diag_method, scale=scale ** 2, precision=precision)
    if kind == "xmat":
        return XMatPreconditioner(n, scale=scale, precision=precision, auto_scale=auto_scale)
    if kind == "lra":
        return LraPreconditioner(n, rank=rank, scale=scale, precision=precision, rng=rng,
                                 auto_scale=auto_scale)
    if kind == "dense":
        return DensePreconditioner(n, scale=scale, precision=precision, auto_scale=auto_scale)
    raise InvalidParameterError(f"unknown preconditioner kind {kind!r}")
