"""textforge: curved scene-text synthesis and rectification toolkit."""

__version__ = "0.1.0"
