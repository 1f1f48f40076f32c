"""Vehicle detection stream -> tracking -> plate consensus -> CO2 accounting."""

__version__ = "0.1.0"
