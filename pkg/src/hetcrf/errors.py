"""Exception hierarchy shared across the package.

ConfigError maps to CLI exit code 2, everything else to 1.
"""


class HetcrfError(Exception):
    pass


class ParseError(HetcrfError):
    """Malformed dataset file; message carries file and line."""


class SchemaError(HetcrfError):
    """Type-incompatible relation chain or missing relation."""


class ConfigError(HetcrfError):
    """Invalid hyperparameter or flag combination."""


class DimensionError(HetcrfError):
    """Shape mismatch in a differentiable primitive."""


class DomainError(HetcrfError):
    """Numerical domain violation (e.g. log of a nonpositive value)."""


class ContractError(HetcrfError):
    """Internal contract violated (non-scalar backward, drifting attention weights)."""


class TrainingError(HetcrfError):
    """NaN loss or gradient during optimization."""


class CheckpointError(HetcrfError):
    """Corrupt or version-mismatched checkpoint file."""
