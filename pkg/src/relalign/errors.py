"""Exception types shared across the package."""


class RelalignError(Exception):
    """Base class for all package-specific errors."""


class MalformedLine(RelalignError):
    """A triplet line could not be parsed (missing subject or predicate)."""


class ClientError(RelalignError):
    """Transport-level failure talking to a text-completion endpoint."""


class ConfigError(RelalignError):
    """A configuration record violates its invariants."""


class CorruptSample(RelalignError):
    """A stored sample failed to deserialize; readers skip and count these."""


class ShapeError(RelalignError):
    """A tensor argument has the wrong dimensionality or width."""


class BackendError(RelalignError):
    """A text-embedding backend is unavailable or failed to load."""


class DegenerateVector(RelalignError):
    """An embedding row has (near-)zero norm; cosine similarity is undefined.

    Raised instead of silently producing NaNs so that training can abort
    with diagnostics when representations collapse.
    """


class TooManyRelations(RelalignError):
    """More relations than queries: no injective relation-to-query map exists."""
