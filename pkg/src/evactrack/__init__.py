"""Evacuee motion models from robot-guided evacuation camera tracks."""

__version__ = "0.1.0"
