"""Exception types shared across the package."""


class CrossrecError(Exception):
    """Base class for all package errors."""


class ParseError(CrossrecError):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class EmptyDatasetError(CrossrecError):
    pass


class DegenerateDatasetError(CrossrecError):
    pass


class SplitInfeasibleError(CrossrecError):
    pass


class SamplingInfeasibleError(CrossrecError):
    pass


class FrozenTableError(CrossrecError):
    pass


class TrainingInfeasibleError(CrossrecError):
    pass


class DivergenceError(CrossrecError):
    def __init__(self, stage, epoch, value):
        super().__init__(f"{stage}: non-finite loss at epoch {epoch}: {value!r}")
        self.stage = stage
        self.epoch = epoch


class ZeroNormError(CrossrecError):
    pass


class EmptyCohortError(CrossrecError):
    pass


class ConfigError(CrossrecError):
    def __init__(self, violations):
        self.violations = list(violations)
        lines = "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(f"invalid config:\n{lines}")


class MissingArtifactError(CrossrecError):
    def __init__(self, missing, hint):
        super().__init__(f"missing artifact: {missing}; run `{hint}` first")
        self.missing = str(missing)
        self.hint = hint
