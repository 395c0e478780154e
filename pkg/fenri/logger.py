"""
Provides configurable filtering settings for the logging system.
"""

import logging
from typing import Dict, Optional

from fenri.config import LoggerConfig
from fenri.enums import LoggerLevel


class Filter(logging.Filter):
    """Applies the default and per-namespace minimum levels from the configuration."""

    def __init__(self, config: LoggerConfig, verbose: bool):
        super().__init__()
        self._config = config
        self._verbose = verbose
        # Longest prefix wins, so 'fenri.training' overrides 'fenri'
        self._namespaces = sorted(config.namespaces.items(), key=lambda item: -len(item[0]))

    def level_for(self, name: str) -> LoggerLevel:
        """Minimum level applied to records of the named logger."""
        if self._verbose:
            return LoggerLevel.Debug
        for namespace, level in self._namespaces:
            if name == namespace or name.startswith(namespace + '.'):
                return level
        return self._config.default

    def filter(self, record: logging.LogRecord) -> bool:
        """Determine if record meets minimum severity level."""
        return record.levelno >= self.level_for(record.name).value


def apply(config: LoggerConfig, verbose: bool,
          handlers: Optional[Dict[str, logging.Handler]] = None) -> Filter:
    """Reset the root level and install a :class:`Filter` on every root handler."""
    log_filter = Filter(config, verbose)

    logger = logging.getLogger('')
    logger.setLevel(logging.NOTSET)

    for handler in list(logging.root.handlers) + list((handlers or {}).values()):
        handler.setLevel(logging.NOTSET)
        handler.addFilter(log_filter)
    return log_filter
