"""Single-view 3D caricature head reconstruction toolkit."""

__version__ = "0.1.0"
