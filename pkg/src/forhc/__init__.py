"""First-order receding horizon control toolkit."""

__version__ = "0.1.0"
