"""Diffusion-forcing training and preference fine-tuning."""
