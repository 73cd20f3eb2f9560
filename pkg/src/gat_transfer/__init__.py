"""Identity-preserving ID photo to Korean portrait style transfer."""

__version__ = "1.0.0"
