"""MEG: phone-gateway email encryption, simulated end to end."""

__version__ = "0.1.0"
