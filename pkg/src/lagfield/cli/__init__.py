"""Command-line interface for lagfield."""
