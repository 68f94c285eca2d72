"""RSS-based positioning toolkit for vehicular ad-hoc networks."""

__version__ = "0.1.0"
