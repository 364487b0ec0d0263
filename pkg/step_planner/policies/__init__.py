"""Decomposition policy backends."""
