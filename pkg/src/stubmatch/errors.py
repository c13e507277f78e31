"""Exception hierarchy shared across the pipeline."""


class StubmatchError(Exception):
    """Base class for all errors raised by this package."""


class GraphParseError(StubmatchError):
    """Interchange document is not syntactically valid."""


class GraphIntegrityError(StubmatchError):
    """Document parsed but violates a structural invariant (dangling edge,
    wrong feature arity, missing entry node, ...)."""


class NumericError(StubmatchError):
    """A non-finite value appeared inside the network; message carries the
    layer / propagation round where it was first seen."""


class TrainingError(StubmatchError):
    """Training diverged or its preconditions were not met."""


class ClusteringError(StubmatchError):
    """Clustering precondition violated (mixed packers, undefined score)."""


class RegistryError(StubmatchError):
    """Registry cannot be loaded or persisted."""


class RegistryCorruptionError(RegistryError):
    """Stored bytes do not match their recorded content hash."""


class IdentificationError(StubmatchError):
    """Identification could not run (empty registry, bad input)."""
