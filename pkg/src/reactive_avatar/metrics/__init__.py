"""Interaction metrics and report output."""
