"""Synthetic problems and datasets."""
