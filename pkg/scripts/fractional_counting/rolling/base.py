"""
Exceptions shared by the rolling updaters.
"""

from typing import Optional


class RollingError(Exception):
    """Base exception for post-census updating errors."""

    def __init__(self, message: str, operation: Optional[str] = None, epoch: Optional[int] = None):
        super().__init__(message)
        self.message = message
        self.operation = operation
        self.epoch = epoch


class ResidencyError(RollingError):
    """Exception raised for invalid residency-index parameters or scores."""

    def __init__(self, message: str):
        super().__init__(message, "residency_update")


class TreeError(RollingError):
    """Exception raised by tree growing and rolling."""

    def __init__(self, message: str, operation: Optional[str] = None, node_id: Optional[int] = None):
        super().__init__(message, operation)
        self.node_id = node_id
