"""Two-stage target localization with a monostatic BS and one RIS."""

__version__ = "0.1.0"
