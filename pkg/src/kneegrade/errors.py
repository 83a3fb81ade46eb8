"""Exception hierarchy shared by all modules.

Plain argument violations (bad shapes, out-of-range parameters) raise the
built-in ``ValueError``; the classes here cover failures that originate in
*data* rather than in call-site code.
"""


class KneegradeError(Exception):
    """Base class for toolkit-specific errors."""


class DecodeError(KneegradeError):
    """An image file could not be read or is in an unsupported format."""


class DataError(KneegradeError):
    """A dataset, manifest, or training-set is inconsistent or insufficient."""


class ConfigError(KneegradeError):
    """An experiment configuration file is malformed or has unknown keys."""
