"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: InputError and its subclasses mean a
malformed argument or file (exit 2), IntegrityError a fingerprint, hash, or
ledger violation (exit 3), PlanError an infeasible target allocation (exit 4).
"""


class MosaicError(Exception):
    """Base class for all package errors."""


class InputError(MosaicError, ValueError):
    """Bad argument value or malformed input data."""


class ShapeError(InputError):
    """Operands have incompatible dimensions."""


class StateError(MosaicError, RuntimeError):
    """Operation invoked on an object in an unusable state."""


class IntegrityError(MosaicError):
    """Fingerprint, header hash, or ledger cross-check failed."""


class PlanError(MosaicError):
    """No feasible sparsity-target allocation exists for the request."""
