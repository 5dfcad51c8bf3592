"""Exception types raised across the package."""


class TraceParseError(ValueError):
    """A trace-CSV row could not be parsed."""

    def __init__(self, line_number, message):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class DegenerateFitError(ValueError):
    """A least-squares design was singular or the fitted model is unusable."""


class SearchFailedError(RuntimeError):
    """Every candidate order in a grid search failed to fit."""

    def __init__(self, causes):
        self.causes = dict(causes)
        detail = "; ".join(f"{k}: {v}" for k, v in self.causes.items())
        super().__init__(f"all grid orders failed ({detail})")


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, learning_rate):
        self.epoch = epoch
        self.learning_rate = learning_rate
        super().__init__(
            f"non-finite loss at epoch {epoch} (learning_rate={learning_rate})"
        )


class ContractError(RuntimeError):
    """An object was used outside its contract (stale cache, wrong head...)."""
