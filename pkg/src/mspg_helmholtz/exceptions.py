"""Exception types raised across the package."""


class BoundViolationError(ValueError):
    """A coefficient evaluation fell outside its declared bounds."""

    def __init__(self, name, point, value, bounds):
        self.name = name
        self.point = tuple(float(c) for c in point)
        self.value = float(value)
        self.bounds = tuple(bounds)
        super().__init__(
            f"{name}({self.point[0]:.6g}, {self.point[1]:.6g}) = {self.value:.12g} "
            f"outside declared bounds [{bounds[0]:.12g}, {bounds[1]:.12g}]"
        )


class UnsupportedFamilyError(ValueError):
    """An operation needs derivative data the coefficient family does not have."""


class SingularSystemError(RuntimeError):
    """A linear solve failed or produced an unacceptable residual."""

    def __init__(self, message, context=None, condition_estimate=None):
        self.context = context or {}
        self.condition_estimate = condition_estimate
        if self.context:
            message = f"{message} ({', '.join(f'{k}={v}' for k, v in self.context.items())})"
        if condition_estimate is not None:
            message = f"{message}; condition estimate {condition_estimate:.3e}"
        super().__init__(message)


class ConfigError(ValueError):
    """Invalid run configuration."""
