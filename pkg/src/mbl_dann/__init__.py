"""Locating the many-body-localization transition with a domain-adversarial classifier."""

__version__ = "0.1.0"
