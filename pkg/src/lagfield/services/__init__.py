"""Numerical services for lagfield."""
