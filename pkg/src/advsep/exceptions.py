"""Exception types raised across the package."""


class DimensionMismatchError(ValueError):
    """Shapes of the inputs are inconsistent."""


class NotSeparableError(ValueError):
    """A witness could not be built (e.g. the data span the whole space)."""


class TrainingDivergedError(RuntimeError):
    """Gradient descent produced a loss above the divergence guard."""

    def __init__(self, step, loss, threshold):
        self.step = step
        self.loss = loss
        self.threshold = threshold
        super().__init__(
            f"training diverged at step {step}: loss {loss!r} exceeds {threshold:g}"
        )


class IngestError(ValueError):
    """A CSV file could not be parsed into a dataset or noise set."""

    def __init__(self, path, message, row=None):
        self.path = str(path)
        self.row = row
        where = f"{self.path}" if row is None else f"{self.path}, row {row}"
        super().__init__(f"{where}: {message}")


class ConfigError(ValueError):
    """An experiment configuration failed validation.

    ``diagnostics`` maps dotted field names to human readable problems so
    callers can report every issue at once instead of the first one.
    """

    def __init__(self, diagnostics):
        self.diagnostics = dict(diagnostics)
        lines = [f"  {k}: {v}" for k, v in sorted(self.diagnostics.items())]
        super().__init__("invalid experiment config:\n" + "\n".join(lines))


class ExperimentError(RuntimeError):
    """A pipeline step failed; ``seed`` says which replicate it was."""

    def __init__(self, seed, message):
        self.seed = seed
        super().__init__(f"seed {seed}: {message}")
