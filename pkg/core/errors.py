"""
Exception hierarchy for Fisheye Sense
Every error carries the process exit code the CLI reports for it
"""

from typing import List, Optional


class FisheyeSenseError(Exception):
    """Base class for all toolkit errors"""

    exit_code: int = 3


class OutOfFieldOfView(FisheyeSenseError):
    """A ray or pixel lies outside the lens field of view / image circle"""


class BehindCamera(FisheyeSenseError):
    """A point has non-positive forward depth for a pinhole camera"""


class InvalidAngle(FisheyeSenseError, ValueError):
    """Azimuth or elevation outside its admissible range"""


class NumericalFailure(FisheyeSenseError):
    """An iterative solver did not reach its tolerance"""

    exit_code = 4


class DimensionMismatch(FisheyeSenseError, ValueError):
    """Array shapes disagree between inputs"""


class DataError(FisheyeSenseError):
    """Input data is inconsistent (bad paths, wrong rig, missing frames)"""


class MisalignedFrames(DataError):
    """Ground truth and predictions do not cover the same frame ids"""


class SchemaError(DataError):
    """
    A document violates its schema

    Args:
        message: Human readable summary
        pointers: JSON-pointer style paths of the offending fields
    """

    def __init__(self, message: str, pointers: Optional[List[str]] = None):
        self.pointers = pointers or []
        if self.pointers:
            message = f"{message} at {', '.join(self.pointers)}"
        super().__init__(message)


class UsageError(FisheyeSenseError):
    """Invalid command-line arguments or input paths"""

    exit_code = 2
