"""Monocular map-based localization library."""
