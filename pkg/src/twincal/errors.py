class ConfigError(ValueError):
    """Invalid configuration value; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class BalanceError(ValueError):
    """A formula that assumes balanced detectors was applied to unbalanced ones."""


class EstimatorError(ValueError):
    """Estimator inputs are degenerate (no signal, zero mean, ...)."""
