"""Simulation and design toolkit for RIS-assisted ISAC radar with track-before-detect."""

__version__ = "0.1.0"
