"""Exception types shared across the package.

The CLI maps these onto its exit codes: ``DataError`` -> 2,
``InvariantError`` -> 3.
"""


class DataError(ValueError):
    """Input data is malformed or violates a precondition."""


class SchemaError(DataError):
    """A serialized document has the wrong schema or version."""


class InvariantError(RuntimeError):
    """An internal consistency check failed."""
