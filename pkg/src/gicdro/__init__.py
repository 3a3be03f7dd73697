"""Distributionally robust line switching and dispatch under uncertain geomagnetic disturbances."""

__version__ = "0.1.0"
