"""Toy diffusion stack on labelled 2D data."""
