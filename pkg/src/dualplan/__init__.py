"""Dual-process dialogue planning: a learned policy, an MCTS planner and a gate between them."""

__version__ = "0.1.0"
