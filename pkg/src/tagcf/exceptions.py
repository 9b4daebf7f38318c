class TagcfError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(TagcfError, ValueError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class EmptyDatasetError(TagcfError, ValueError):
    pass


class EmptyCoreError(TagcfError, ValueError):
    pass


class SplitError(TagcfError, ValueError):
    pass


class GraphStructureError(TagcfError, ValueError):
    pass


class ConfigError(TagcfError, ValueError):
    pass


class OracleError(TagcfError, RuntimeError):
    """Equivalence oracle failed on a specific attribute pair."""

    def __init__(self, a, b, cause):
        self.pair = (a, b)
        super().__init__(f"equivalence oracle failed on ({a!r}, {b!r}): {cause}")


class TransportError(TagcfError, RuntimeError):
    pass


class ResponseParseError(TagcfError, ValueError):
    def __init__(self, message, raw):
        self.raw = raw
        super().__init__(message)


class NumericError(TagcfError, FloatingPointError):
    pass


class StateError(TagcfError, RuntimeError):
    pass


class SamplingError(TagcfError, RuntimeError):
    pass


class CheckpointError(TagcfError, ValueError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class IncompatibleCheckpointError(CheckpointError):
    pass


class MissingArtifactError(TagcfError, FileNotFoundError):
    """An upstream artifact is absent; ``producer`` names the subcommand that writes it."""

    def __init__(self, artifact, producer):
        self.artifact = str(artifact)
        self.producer = producer
        super().__init__(f"missing {self.artifact}; run `tagcf {producer}` first")

    def __str__(self):
        return self.args[0]
