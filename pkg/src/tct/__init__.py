"""Theorem-carrying transactions on a desk-scale EVM."""

__version__ = "0.1.0"
