"""Peptide design toolkit: generative model, reward-driven fine-tuning, screening."""

__version__ = "0.1.0"
