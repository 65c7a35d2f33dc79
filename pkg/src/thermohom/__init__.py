"""Periodic homogenization of coupled concentration/temperature transport in perforated media."""

__version__ = "0.1.0"
