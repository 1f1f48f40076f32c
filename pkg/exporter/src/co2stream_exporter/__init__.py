"""Video -> detection-stream JSONL exporter for the co2stream engine."""

__version__ = "0.1.0"
