class ModelError(Exception):
    """Base class for every failure raised by the simulation and verification modules."""


class InvalidSpecError(ModelError, ValueError):
    """A model definition such as a generator, jump law or coefficient violates its invariants."""


class InvalidArgumentError(ModelError, ValueError):
    """An operation received arguments outside its preconditions."""


class AssumptionViolation(ModelError, ValueError):
    """A structural assumption on the delays would require future values."""


class ConfigError(ModelError, ValueError):
    """A scenario file failed to parse or to validate against the schema."""


class NumericalBlowupError(ModelError, ArithmeticError):
    """A simulated value became non-finite."""


class DtTooLargeError(ModelError, ArithmeticError):
    """The step size makes a branch probability or an implicit coefficient leave its valid range."""


class ResourceLimitError(ModelError, RuntimeError):
    """An exhaustive enumeration would exceed the configured path budget."""
