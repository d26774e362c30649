"""Initial-law-dependent mixing bounds for finite reversible chains."""

__version__ = "0.1.0"
