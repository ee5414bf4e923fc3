"""Exception hierarchy shared by every langcl module."""


class LangclError(Exception):
    """Base class for all errors raised by langcl."""


class ShapeError(LangclError, ValueError):
    """A primitive received operands with incompatible shapes."""


class GradientError(LangclError):
    """The backward pass was asked for something the tape cannot provide."""


class CTCError(LangclError, ValueError):
    """A CTC target cannot be aligned to the available frames."""


class ScoringError(LangclError, ValueError):
    pass


class CheckpointError(LangclError):
    """A checkpoint archive is corrupt or does not fit the target store."""


class ConfigError(LangclError, ValueError):
    pass


class ManifestError(LangclError, ValueError):
    pass


class GenerationError(LangclError, ValueError):
    """Synthetic language generation could not satisfy its constraints."""


class VocabularyError(LangclError, ValueError):
    pass


class AdapterError(LangclError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class StrategyError(LangclError):
    pass


class MetricError(LangclError, ValueError):
    pass


class DivergenceError(LangclError):
    """Training produced a non-finite loss."""

    def __init__(self, stage: str, epoch: int, step: int, value: float) -> None:
        self.stage = stage
        self.epoch = epoch
        self.step = step
        self.value = value
        super().__init__(
            f"non-finite loss {value} in stage '{stage}' (epoch {epoch}, step {step})"
        )
