"""Dual motion encoder, causal DFoT stack and the assembled vector field."""
