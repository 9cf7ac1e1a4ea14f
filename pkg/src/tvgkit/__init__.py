"""Tools for checking and repairing question-relevant visual content in object-based VQA inputs."""

__version__ = "0.1.0"
