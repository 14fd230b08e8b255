"""Keeps the repository root importable when the suite runs under pytest."""
