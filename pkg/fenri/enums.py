"""
This module contains all enumerations used by this application.
"""

import logging
from enum import Enum, IntEnum
from typing import Optional


class IntEnumEx(IntEnum):
    """Integer enumeration that can be parsed from its (case-insensitive) name."""

    def __str__(self):
        return self.name

    @classmethod
    def parse_name(cls, name: Optional[str]) -> Optional['IntEnumEx']:
        """Return the member with the given name, or None if unknown."""
        if name is None:
            return None
        for member in cls:
            if member.name.lower() == str(name).lower():
                return member
        return None


class LoggerLevel(IntEnumEx):
    """Severity level for logger."""
    Critical = logging.CRITICAL
    Error = logging.ERROR
    Warning = logging.WARNING
    Info = logging.INFO
    Debug = logging.DEBUG
    NotSet = logging.NOTSET


class TerminationReason(Enum):
    """Why one end of a streamline stopped growing."""
    OutOfDomain = 'out-of-domain'
    LowAmplitude = 'low-amplitude'
    HighCurvature = 'high-curvature'
    MaxSteps = 'max-steps'

    def __str__(self):
        return self.value


class FractionProfile(Enum):
    """Radial falloff of a bundle's volume fraction."""
    Flat = 'flat'
    Cosine = 'cosine'

    def __str__(self):
        return self.value
