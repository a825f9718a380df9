"""Video scene graph generation with pair motion features, in pure numpy."""

__version__ = "0.1.0"
