"""Balance-aware squatting control for a lower-extremity exoskeleton."""

__version__ = "0.1.0"
