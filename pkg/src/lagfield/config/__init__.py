"""Configuration management for lagfield."""
