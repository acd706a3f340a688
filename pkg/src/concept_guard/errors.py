"""Exception types shared across the package."""


class ConceptGuardError(Exception):
    """Base class for every error this package raises on purpose."""


class InvalidDimensions(ConceptGuardError):
    """Array shapes do not match what the operation requires."""


class NonFiniteInput(ConceptGuardError):
    """An input contains NaN or infinity."""


class InvalidParameter(ConceptGuardError):
    """A scalar parameter is outside its legal range."""


class InvalidIndex(ConceptGuardError):
    """A token index is out of range or points at padding."""


class DegeneratePrompt(ConceptGuardError):
    """The prompt has too few usable tokens, or pools to a zero vector."""


class FormatError(ConceptGuardError):
    """A file does not parse as the expected format."""


class CorruptFile(FormatError):
    """A container is truncated or fails its checksum."""


class UnsupportedVersion(FormatError):
    """A container declares a format version this reader does not speak."""


class SchemaError(ConceptGuardError):
    """Concept vocabulary JSON violates its schema or disagrees with its
    companion embedding file."""


class IoError(ConceptGuardError):
    """An output path could not be written."""


class NumericDivergence(ConceptGuardError):
    """A simulated latent grew past the blow-up bound."""

    def __init__(self, step: int, norm: float):
        super().__init__(f"latent norm {norm:.6e} exceeded the blow-up bound at step {step}")
        self.step = step
        self.norm = norm
