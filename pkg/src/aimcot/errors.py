"""Exception hierarchy shared across the engine.

The CLI maps these onto its exit-code contract: configuration problems
exit 2, backend/transport problems exit 3, data problems exit 4.
"""


class AimcotError(Exception):
    """Base class for all engine errors."""


class ConfigError(AimcotError):
    """Invalid configuration: unknown keys, bad values, unusable files."""


class ContractError(AimcotError):
    """A value violates a documented invariant (bad distribution, bad snapshot...)."""


class ShapeError(ContractError):
    """Dimension mismatch between arrays that must be conformable."""


class MappingError(ContractError):
    """A patch column has no grid-cell assignment."""


class CapacityError(AimcotError):
    """More items requested than the grid / candidate set can provide."""


class GridIndexError(AimcotError, IndexError):
    """Cell or region indices outside the grid."""


class TemplateError(AimcotError):
    """Prompt template is missing its required placeholder."""


class DataError(AimcotError):
    """Not enough (or degenerate) data for a statistical procedure."""


class ConstantInputError(DataError):
    """Correlation requested on a constant series."""


class BackendError(AimcotError):
    """Failure raised by or around a model backend."""

    def __init__(self, message: str, *, request_id: int | None = None,
                 step: int | None = None):
        detail = message
        if request_id is not None:
            detail = f"{detail} (request id {request_id})"
        if step is not None:
            detail = f"{detail} (selection step {step})"
        super().__init__(detail)
        self.request_id = request_id
        self.step = step
