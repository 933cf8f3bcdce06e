"""Synthetic dyadic conversation world and its binary containers."""
