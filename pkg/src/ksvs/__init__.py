"""Korean singing voice synthesis: score ingestion, mel synthesis, super-resolution, evaluation."""

__version__ = "0.1.0"
