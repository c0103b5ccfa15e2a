"""Full-reference point-cloud quality assessment by RBF interpolation."""

__version__ = "1.0.0"
