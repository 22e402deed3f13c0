"""Exception hierarchy shared across the package."""


class SADCLError(Exception):
    """Base class for all package errors."""


class DimensionError(SADCLError, ValueError):
    pass


class DomainError(SADCLError, ValueError):
    """Input outside the mathematical domain of a primitive (log of 0, zero-norm vector)."""


class ContractError(SADCLError, RuntimeError):
    pass


class NonFiniteError(SADCLError, FloatingPointError):
    pass


class ProbeError(NonFiniteError):
    """A finite-difference probe produced a non-finite loss."""

    def __init__(self, parameter: str, index: tuple, value: float):
        self.parameter = parameter
        self.index = index
        self.value = value
        super().__init__(f"loss is {value} when probing {parameter}{list(index)}")


class ParameterError(SADCLError, ValueError):
    pass


class ConfigError(SADCLError, ValueError):
    pass


class CorruptDatasetError(SADCLError, IOError):
    pass


class ScheduleExhaustedError(SADCLError, RuntimeError):
    pass


class TrainingAbort(SADCLError, RuntimeError):
    """Raised when a loss component becomes non-finite during training."""

    def __init__(self, component: str, value: float):
        self.component = component
        self.value = value
        super().__init__(f"non-finite {component} loss ({value}); aborting")
