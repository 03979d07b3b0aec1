"""Exception hierarchy.

ValidationError subclasses signal bad user input (config, file formats,
domain violations) and map to CLI exit code 2; every other Mg2vecError is a
runtime failure and maps to exit code 1.
"""


class Mg2vecError(Exception):
    """Base class for all package errors."""


class ValidationError(Mg2vecError):
    """Invalid input: config, arguments, or malformed files."""


class ParseError(ValidationError):
    """Malformed FASTA/FASTQ input. Carries the byte offset of the record."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DomainError(ValidationError):
    """Argument outside an operation's domain."""


class ConfigError(ValidationError):
    """Bad configuration file or incompatible option combination."""


class MissingArtifactError(ValidationError):
    """A pipeline stage was run before its upstream artifacts exist."""


class ArtifactFormatError(ValidationError):
    """Artifact file has the wrong magic, version, or shape."""


class EmptyGraphError(ValidationError):
    """No read produced at least two adjacent tokens."""


class DeadEndError(Mg2vecError):
    """Node has no outgoing edges; walkers truncate instead of raising."""


class UnembeddableReadError(Mg2vecError):
    """Read has no usable tokens (too short or all unknown)."""


class TrainingDivergedError(Mg2vecError):
    """Loss became non-finite or grew past the divergence threshold."""
