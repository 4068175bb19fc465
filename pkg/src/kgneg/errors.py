class KgError(Exception):
    """Base class for errors raised by this package."""


class ParseError(KgError, ValueError):
    pass


class VocabularyError(KgError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class ConfigError(KgError, ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


class OptimizerError(KgError, FloatingPointError):
    pass


class SamplerError(KgError, RuntimeError):
    pass


class CheckpointError(KgError, ValueError):
    pass
