"""Exemplar stochastic models and their inference wrappers."""
