"""Weakly supervised factored image codes for goal-conditioned pushing."""

__version__ = "0.1.0"
