"""Carbon-aware function-calling runtime kernel and trace-driven simulator."""

__version__ = "0.1.0"
