"""Shared helpers: errors, configuration text and map export."""
