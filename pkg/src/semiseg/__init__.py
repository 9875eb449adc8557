"""Semi-supervised temporal action segmentation in numpy."""

__version__ = "0.1.0"
