"""Exception types shared across the package."""


class ConfigError(Exception):
    """Invalid configuration: unsupported value, malformed file, bad override."""


class SingularChannelError(Exception):
    """Effective channel matrix is rank deficient; direct inversion impossible."""
