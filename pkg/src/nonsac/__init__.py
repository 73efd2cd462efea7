"""Non-minimal sample consensus (NONSAC) for robust geometric estimation."""

__version__ = "0.1.0"
