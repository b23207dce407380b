"""Exception types shared across the pipeline.

Every operation either returns a complete value or raises one of these;
partial state is never left behind.
"""


class MmkgError(Exception):
    """Base class for all package errors."""


class InvalidInput(MmkgError):
    """Caller passed an argument that violates an operation's precondition."""


class CorpusError(MmkgError):
    """An image or corpus item could not be read or resolved."""


class RetriableBackendError(MmkgError):
    """A remote backend kept failing after the configured retries."""


class ProtocolError(MmkgError):
    """A remote backend returned a body that does not match the wire protocol."""


class DegenerateEmbedding(MmkgError):
    """An all-zeros vector reached a similarity computation."""


class FormatError(MmkgError):
    """A manifest, config, or graph file violates its documented schema."""


class CorruptGraph(MmkgError):
    """A loaded or referenced graph violates referential integrity."""
