"""Shipped study configurations for the command line."""
