"""Exception types.  ``category`` is the token the CLI prints on failure."""


class IDS4NRError(Exception):
    category = "error"


class MissingFile(IDS4NRError, FileNotFoundError):
    category = "missing-file"

    def __init__(self, path):
        self.path = str(path)
        super().__init__(f"file not found: {self.path}")


class ParseError(IDS4NRError, ValueError):
    category = "parse-error"

    def __init__(self, path, line, reason):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {reason}")


class EmptyAfterFiltering(IDS4NRError, ValueError):
    category = "empty-dataset"


class InsufficientCandidates(IDS4NRError, ValueError):
    category = "insufficient-candidates"


class ColdItemWithoutAttributes(IDS4NRError, ValueError):
    category = "cold-item-without-attributes"


class DivergenceError(IDS4NRError, FloatingPointError):
    category = "divergence"

    def __init__(self, epoch, step, value):
        self.epoch = epoch
        self.step = step
        super().__init__(f"non-finite loss {value} at epoch {epoch}, step {step}")


class CorruptCheckpoint(IDS4NRError, ValueError):
    category = "corrupt-checkpoint"


class ConfigError(IDS4NRError, ValueError):
    category = "config-error"
