"""Policy optimization with clipped, KL-penalty and log-barrier surrogates."""

__version__ = "0.1.0"

from ppob.errors import ConfigError, NumericFault, UsageError

__all__ = ["ConfigError", "NumericFault", "UsageError", "__version__"]
