class PhdflowError(Exception):
    """Base class of phdflow errors."""


class ConfigSyntaxError(PhdflowError):
    """Scenario or experiment file could not be parsed."""

    def __init__(self, *messages: str) -> None:
        super().__init__(*messages)
        self.messages = list(messages)

    def __str__(self) -> str:
        return "\n".join(self.messages)


class ConfigError(PhdflowError, ValueError):
    """Well-formed configuration with invalid content."""


class InvalidArgumentError(PhdflowError, ValueError):
    """Invalid argument passed to a model operation."""


class NumericalError(PhdflowError, ArithmeticError):
    """Numerical failure such as a singular covariance."""


class DegeneratePopulationError(NumericalError):
    """Particle population without any positive weight."""


class EmptyMeasurementError(PhdflowError, ValueError):
    """Operation needs at least one measurement."""
