"""Utilities package for reactive_avatar."""
