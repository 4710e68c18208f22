"""RGB-X single-object tracking with compact spatiotemporal features."""

__version__ = "0.1.0"
