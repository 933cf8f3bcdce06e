"""Toy motion latent codec over a linear observation world."""
