"""Text-line-guided keyword spotting."""
__version__ = "0.1.0"
